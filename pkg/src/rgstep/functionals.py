"""Polymer-indexed functionals, block products, circle products and the K-space audit."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .fieldalg import (
    FieldElement,
    FieldSpace,
    exp_truncated,
    gauge_charge,
    inverse_truncated,
    supersymmetry_generator,
    tau,
    tau_pair,
)
from .gaussian import Covariance, DoubledFields, engine
from .lattice import Torus
from .polymers import EnumerationCapError, Paving, Polymer, bits, coalescence_scale, paving, popcount, submasks


class MissingPolymerError(KeyError):
    pass


class ScaleMismatch(ValueError):
    pass


def _mask_of(X, pv: Paving) -> int:
    if isinstance(X, Polymer):
        if X.scale != pv.scale or X.torus != pv.torus:
            raise ScaleMismatch(f"polymer at scale {X.scale}, functional at scale {pv.scale}")
        return X.mask
    return int(X)


class BlockFunctional:
    """F: blocks -> field polynomials, extended to polymers by F^X = prod over blocks of X."""

    def __init__(self, torus: Torus, j: int, space: FieldSpace, fn, name: str = ""):
        self.torus = torus
        self.scale = j
        self.space = space
        self.pv = paving(torus, j)
        self._fn = fn
        self.name = name
        self._values: dict = {}
        self._powers: dict = {0: space.const(1)}
        self._inverses: dict = {0: space.const(1)}

    @classmethod
    def constant(cls, torus: Torus, j: int, space: FieldSpace, value: FieldElement, name: str = "") -> BlockFunctional:
        return cls(torus, j, space, lambda i: value, name)

    def block(self, i: int) -> FieldElement:
        v = self._values.get(i)
        if v is None:
            v = self._values[i] = self._fn(i)
        return v

    def __call__(self, X) -> FieldElement:
        return self.power(_mask_of(X, self.pv))

    def power(self, mask: int) -> FieldElement:
        """F^X for the polymer with this block mask (F^empty = 1)."""
        v = self._powers.get(mask)
        if v is None:
            low = mask & -mask
            v = self.block(low.bit_length() - 1) * self.power(mask ^ low)
            self._powers[mask] = v
        return v

    def inverse_power(self, mask: int) -> FieldElement:
        """F^{-X} as the product of the truncated block inverses."""
        v = self._inverses.get(mask)
        if v is None:
            low = mask & -mask
            i = low.bit_length() - 1
            key = 1 << i
            if key not in self._inverses:
                self._inverses[key] = inverse_truncated(self.block(i))
            v = self._inverses[key] if mask == key else self._inverses[key] * self.inverse_power(mask ^ low)
            self._inverses[mask] = v
        return v

    def _combine(self, other: BlockFunctional, op, name: str) -> BlockFunctional:
        if other.scale != self.scale or other.torus != self.torus:
            raise ScaleMismatch("block functionals at different scales")
        return BlockFunctional(self.torus, self.scale, self.space, lambda i: op(self.block(i), other.block(i)), name)

    def __add__(self, other: BlockFunctional) -> BlockFunctional:
        return self._combine(other, lambda a, b: a + b, f"({self.name}+{other.name})")

    def __sub__(self, other: BlockFunctional) -> BlockFunctional:
        return self._combine(other, lambda a, b: a - b, f"({self.name}-{other.name})")

    def __neg__(self) -> BlockFunctional:
        return BlockFunctional(self.torus, self.scale, self.space, lambda i: -self.block(i), f"-{self.name}")

    def coarsen(self) -> BlockFunctional:
        """The same functional read on blocks of the next scale."""
        up = self.scale + 1
        fine = self.pv
        return BlockFunctional(self.torus, up, self.space,
                               lambda i: self.power(fine.children_mask(1 << i)), self.name)

    def as_polymer_functional(self) -> PolymerFunctional:
        return PolymerFunctional(self.torus, self.scale, self.space,
                                 compute=lambda m: self.power(m), factorising=False, name=self.name)


def extend_blockwise(F: BlockFunctional, X) -> FieldElement:
    return F(X)


@dataclass
class PolymerFunctional:
    """K: polymers -> field polynomials with K(empty) = 1.

    With ``factorising`` set, values are stored on connected polymers and the
    value on any polymer is the product over its connected components.
    Otherwise every polymer is stored (or computed) directly.  ``compute``
    supplies values on demand; without it, lookups of polymers absent from
    ``values`` raise ``MissingPolymerError``.
    """

    torus: Torus
    scale: int
    space: FieldSpace
    compute: object = None
    values: dict = field(default_factory=dict)
    factorising: bool = True
    name: str = ""
    support_size: int | None = None  # zero on connected polymers with more blocks

    def __post_init__(self):
        self.pv = paving(self.torus, self.scale)
        self.values = {(_mask_of(k, self.pv)): v for k, v in self.values.items()}
        self._one = self.space.const(1)
        self._products: dict = {}

    @classmethod
    def zero(cls, torus: Torus, j: int, space: FieldSpace, name: str = "0") -> PolymerFunctional:
        z = space.zero()
        return cls(torus, j, space, compute=lambda m: z, name=name, support_size=0)

    def _stored(self, mask: int) -> FieldElement:
        v = self.values.get(mask)
        if v is None:
            if self.support_size is not None and popcount(mask) > self.support_size:
                return self.space.zero()
            if self.compute is None:
                raise MissingPolymerError(f"{self.name or 'functional'} has no value on mask {mask:#x}")
            v = self.compute(mask)
            self.values[mask] = v
        return v

    def at(self, mask: int) -> FieldElement:
        if not mask:
            return self._one
        if not self.factorising:
            return self._stored(mask)
        comps = self.pv.component_masks(mask)
        if len(comps) == 1:
            return self._stored(mask)
        hit = self._products.get(mask)
        if hit is None:
            hit = self.space.const(1)
            for c in comps:
                hit = hit * self._stored(c)
            self._products[mask] = hit
        return hit

    def __call__(self, X) -> FieldElement:
        return self.at(_mask_of(X, self.pv))

    value = __call__

    def connected_support(self, max_size: int | None = None):
        """Connected masks where the functional may be nonzero, up to a size."""
        cap = self.pv.n if max_size is None else max_size
        if self.support_size is not None:
            cap = min(cap, self.support_size)
        return self.pv.connected_masks(cap)

    def derived(self, fn, name: str = "") -> PolymerFunctional:
        """A functional whose connected values are fn(mask, value)."""
        return PolymerFunctional(self.torus, self.scale, self.space,
                                 compute=lambda m: fn(m, self._stored(m) if self.factorising else self.at(m)),
                                 factorising=self.factorising, name=name or self.name,
                                 support_size=self.support_size)

    def project(self, sector: str) -> PolymerFunctional:
        return self.derived(lambda m, v: v.project(sector), f"pi_{sector} {self.name}")

    def without_sector(self, sector: str) -> PolymerFunctional:
        from .fieldalg import _SECTOR_BITS

        s = _SECTOR_BITS[sector]
        return self.derived(lambda m, v: v.filter(lambda k: k & 3 != s), self.name)

    def materialise(self, max_size: int | None = None) -> PolymerFunctional:
        for m in self.connected_support(max_size):
            self._stored(m)
        return self

    def to_json(self) -> dict:
        items = []
        for m in sorted(self.values):
            items.append({"polymer": self.pv_polymer(m).to_json(), "value": self.values[m].to_json()})
        return {
            "scale": self.scale,
            "torus": self.torus.to_json(),
            "factorising": self.factorising,
            "support_size": self.support_size,
            "values": items,
        }

    def pv_polymer(self, mask: int) -> Polymer:
        return Polymer(self.torus, self.scale, mask)

    @classmethod
    def from_json(cls, doc: dict, space: FieldSpace) -> PolymerFunctional:
        torus = Torus.from_json(doc["torus"])
        j = int(doc["scale"])
        vals = {}
        for item in doc["values"]:
            P = Polymer.from_json(torus, item["polymer"])
            if P.scale != j:
                raise ScaleMismatch("stored polymer at the wrong scale")
            vals[P.mask] = FieldElement.from_json(space, item["value"])
        return cls(torus, j, space, values=vals, factorising=bool(doc.get("factorising", True)),
                   support_size=doc.get("support_size"))


def indicator_empty(torus: Torus, j: int, space: FieldSpace) -> PolymerFunctional:
    """1_empty: the identity of the circle product."""
    return PolymerFunctional.zero(torus, j, space, name="1_empty")


# circle products


def _value(F, mask: int) -> FieldElement:
    return F.power(mask) if isinstance(F, BlockFunctional) else F.at(mask)


def circle_product(F, G, X) -> FieldElement:
    """(F o G)(X) = sum over Y in X of F(Y) G(X minus Y)."""
    if F.scale != G.scale or F.torus != G.torus:
        raise ScaleMismatch("circle product of functionals at different scales")
    mask = _mask_of(X, F.pv)
    out = F.space.zero()
    for y in submasks(mask):
        out = out + _value(F, y) * _value(G, mask ^ y)
    return out


class GasCircle:
    """(F o K)(X) for block-factorised F and component-factorising K.

    Uses the recursion on the lowest block b of the remaining set R:
    either b lies outside the K-polymer (factor F(b)), or the component of
    the K-polymer through b is a connected Y; the blocks touching Y are then
    outside the K-polymer.  Results are memoised on R, so the value on every
    R visited is itself (F o K)(R).
    """

    def __init__(self, F: BlockFunctional, K: PolymerFunctional):
        if F.scale != K.scale or F.torus != K.torus:
            raise ScaleMismatch("circle product of functionals at different scales")
        if not K.factorising:
            raise ValueError("the gas recursion needs a component-factorising K")
        self.F, self.K = F, K
        self.pv = K.pv
        self.memo: dict = {0: K.space.const(1)}
        self.cap = K.support_size if K.support_size is not None else self.pv.n

    def __call__(self, X) -> FieldElement:
        return self.value(_mask_of(X, self.pv))

    def value(self, R: int) -> FieldElement:
        hit = self.memo.get(R)
        if hit is not None:
            return hit
        pv, F, K = self.pv, self.F, self.K
        low = R & -R
        b = low.bit_length() - 1
        out = F.block(b) * self.value(R ^ low)
        for Y in pv.connected_masks(self.cap, within=R, root=b):
            kv = K.at(Y)
            if kv.is_zero():
                continue
            near = pv.dilate(Y) & R
            rest = R & ~near
            out = out + kv * F.power(near & ~Y) * self.value(rest)
        self.memo[R] = out
        return out


def gas_circle(F: BlockFunctional, K: PolymerFunctional, X) -> FieldElement:
    return GasCircle(F, K)(X)


def circle_with_block(K: PolymerFunctional, D: BlockFunctional, name: str = "") -> PolymerFunctional:
    """The functional K o D for block-factorised D; component-factorising when K is."""
    gas = GasCircle(D, K)
    return PolymerFunctional(K.torus, K.scale, K.space, compute=gas.value, factorising=K.factorising,
                             name=name)


def verify_binomial_lemma(F1: BlockFunctional, F2: BlockFunctional, X) -> bool:
    """(F1 + F2)^X == (F1 o F2)(X), both sides computed directly."""
    mask = _mask_of(X, F1.pv)
    lhs = F1.space.const(1)
    for b in bits(mask):
        lhs = lhs * (F1.block(b) + F2.block(b))
    return lhs == circle_product(F1, F2, mask)


# grade profiles: the least grade present in each observable sector


def grade_profile(F: FieldElement) -> dict:
    prof: dict = {}
    for g, bucket in F.parts.items():
        for k in bucket:
            s = k & 3
            if s not in prof or g < prof[s]:
                prof[s] = g
    return prof


def profile_product(p1: dict, p2: dict, pmax: int) -> dict:
    out: dict = {}
    for s1, g1 in p1.items():
        for s2, g2 in p2.items():
            if s1 & s2 or g1 + g2 > pmax:
                continue
            s = s1 | s2
            if s not in out or g1 + g2 < out[s]:
                out[s] = g1 + g2
    return out


# the simplified first step


def interaction_block(V, torus: Torus, j: int, space: FieldSpace, W=None, W_couplings=None,
                      W_scale: int | None = None, name: str = "I") -> BlockFunctional:
    """B -> exp(-V(B)) (1 + W(V', B)) on scale-j blocks.

    ``W_couplings`` and ``W_scale`` default to V and j.
    """
    from .fieldalg import V_of

    pv = paving(torus, j)
    Wc = V if W_couplings is None else W_couplings
    Wj = j if W_scale is None else W_scale

    def fn(i):
        sites = [torus.index(x) for x in torus.block_sites(pv.blocks[i])]
        out = exp_truncated(-V_of(V, sites, torus, space))
        if W is not None:
            out = out * (space.const(1) + W(Wj, Wc, sites, torus, space))
        return out

    return BlockFunctional(torus, j, space, fn, name)


def k1_tilde(V0, V1, decomp, torus: Torus, space: FieldSpace) -> PolymerFunctional:
    """The scale-1 functional U -> sum over X with closure U of I1^{U minus X} E delta I^X.

    delta I(x) = theta I0(x) - I1(x) lives on the doubled field, so the
    fluctuation integral is done there.  The sum over X is organised block by
    block: X meets every scale-1 block of U, and its part inside block B is any
    nonempty set of sites of B.
    """
    C1 = decomp.at(1) if hasattr(decomp, "at") else decomp
    doubled = DoubledFields(C1, space)
    sp2 = doubled.space
    I0 = interaction_block(V0, torus, 0, space)
    I1 = interaction_block(V1, torus, 0, space)
    fine = paving(torus, 0)
    up = paving(torus, 1)
    lifted_I1 = {}
    delta = {}

    def site_terms(x):
        if x not in delta:
            lifted_I1[x] = doubled.lift(I1.block(x))
            delta[x] = doubled.theta(doubled.lift(I0.block(x))) - lifted_I1[x]
        return lifted_I1[x], delta[x]

    block_factor: dict = {}

    def factor(B: int) -> FieldElement:
        hit = block_factor.get(B)
        if hit is None:
            sites = list(bits(fine.children_mask(1 << B)))
            hit = sp2.zero()
            for r in range(1, len(sites) + 1):
                for chosen in itertools.combinations(sites, r):
                    term = sp2.const(1)
                    for x in sites:
                        i1, dI = site_terms(x)
                        term = term * (dI if x in chosen else i1)
                    hit = hit + term
            block_factor[B] = hit
        return hit

    def compute(mask: int) -> FieldElement:
        prod = sp2.const(1)
        for B in bits(mask):
            prod = prod * factor(B)
        return doubled.integrate(prod)

    return PolymerFunctional(torus, 1, space, compute=compute, factorising=False, name="K1~")


# the K-space audit


@dataclass
class SpaceKReport:
    passed: bool
    checked: int
    violations: list

    def to_json(self) -> dict:
        return {"passed": self.passed, "checked": self.checked, "violations": self.violations[:50]}


def _support_sites(F: FieldElement) -> set:
    return F.sites()


def paving_automorphisms(torus: Torus, j: int, fix_observables: bool = False):
    """Site maps (as lists) of torus symmetries that carry scale-j blocks to blocks.

    Translations by multiples of L^j, reflections through block centres, and
    coordinate permutations.  With ``fix_observables`` only maps fixing a and b.
    """
    n = torus.side
    step = torus.L**j
    maps = []
    shifts = range(0, n, step)
    for perm in itertools.permutations(range(torus.d)):
        for flips in itertools.product((False, True), repeat=torus.d):
            for shift in itertools.product(shifts, repeat=torus.d):
                def f(x, perm=perm, flips=flips, shift=shift):
                    y = [x[p] for p in perm]
                    y = [(step - 1 - c) if fl else c for c, fl in zip(y, flips)]
                    return tuple((c + s) % n for c, s in zip(y, shift))
                if fix_observables:
                    if torus.a is not None and f(torus.a) != torus.a:
                        continue
                    if torus.b is not None and f(torus.b) != torus.b:
                        continue
                maps.append([torus.index(f(torus.coords(i))) for i in range(torus.volume)])
    return maps


def check_space_K(K: PolymerFunctional, max_size: int | None = None, factorisation_cap: int = 400,
                  automorphism_sample: int = 12, rng=None) -> SpaceKReport:
    """Audit field locality, observable sectors, symmetries and factorisation of K."""
    T, pv, sp = K.torus, K.pv, K.space
    j = K.scale
    viol: list = []
    checked = 0
    a_site = T.index(T.a) if T.a is not None else None
    b_site = T.index(T.b) if T.b is not None else None
    j_ab = coalescence_scale(T) if a_site is not None and b_site is not None else None
    cap = pv.n if max_size is None else max_size
    connected = list(K.connected_support(cap))

    def sites_of(mask):
        out = set()
        for i in bits(mask):
            out.update(T.index(x) for x in T.block_sites(pv.blocks[i]))
        return out

    for m in connected:
        v = K.at(m)
        checked += 1
        if v.is_zero():
            continue
        X = sites_of(m)
        hood = sites_of(pv.small_hood(m))
        outside = _support_sites(v) - hood
        if outside:
            viol.append({"check": "field locality", "mask": m, "sites": sorted(outside)})
        secs = v.sectors()
        if "a" in secs and a_site not in X:
            viol.append({"check": "sector a outside a", "mask": m})
        if "b" in secs and b_site not in X:
            viol.append({"check": "sector b outside b", "mask": m})
        if "ab" in secs:
            ok = (a_site in X and b_site in hood) or (b_site in X and a_site in hood)
            small = popcount(m) <= 2**T.d
            if not ok or (small and j_ab is not None and j < j_ab):
                viol.append({"check": "sector ab rule", "mask": m})
        if any(gauge_charge(sp, k) for k, _ in v.terms()):
            viol.append({"check": "gauge invariance", "mask": m})
        empty = v.project("∅")
        if empty.coefficient(0):
            viol.append({"check": "constant part", "mask": m})
        if not supersymmetry_generator(empty).is_zero():
            viol.append({"check": "supersymmetry", "mask": m})

    # Euclidean covariance of the empty-sector part, and of everything under maps fixing a, b
    autos = paving_automorphisms(T, j)
    if rng is not None and len(autos) > automorphism_sample:
        autos = rng.sample(autos, automorphism_sample)
    elif len(autos) > automorphism_sample:
        autos = autos[:: max(1, len(autos) // automorphism_sample)]
    fixers = paving_automorphisms(T, j, fix_observables=True)
    site_block = [pv.site_block(T.coords(i)) for i in range(T.volume)]
    for perm, sector_part in [(p, "∅") for p in autos] + [(p, None) for p in fixers]:
        for m in connected:
            image = 0
            for i in bits(m):
                corner = T.block_sites(pv.blocks[i])[0]
                image |= 1 << site_block[perm[T.index(corner)]]
            lhs = K.at(m)
            rhs = K.at(image)
            if sector_part is not None:
                lhs, rhs = lhs.project(sector_part), rhs.project(sector_part)
            checked += 1
            if lhs.relabel(perm) != rhs:
                viol.append({"check": "Euclidean covariance", "mask": m})
                break

    # component factorisation on disconnected polymers, when stored directly
    if not K.factorising:
        count = 0
        for m in submasks(pv.full):
            comps = pv.component_masks(m)
            if len(comps) < 2 or popcount(m) > cap:
                continue
            count += 1
            if count > factorisation_cap:
                break
            prod = sp.const(1)
            for c in comps:
                prod = prod * K.at(c)
            checked += 1
            if prod != K.at(m):
                viol.append({"check": "component factorisation", "mask": m})
    return SpaceKReport(not viol, checked, viol)


# random members of K


def random_K(torus: Torus, j: int, space: FieldSpace, rng, max_size: int = 2, scale_coef=(1, 8),
             observables: bool = True) -> PolymerFunctional:
    """A random Euclidean-covariant, gauge-invariant, supersymmetric K.

    On a connected X with n blocks the value is a combination, with
    coefficients drawn once per n, of sum_x tau_x, the symmetrised nearest
    neighbour pairs, (sum_x tau_x)^2 and sum over the small-set neighbourhood
    of tau_y; plus observable terms placed where the sector rules allow.
    """
    from fractions import Fraction

    pv = paving(torus, j)
    num, den = scale_coef

    def coef():
        return Fraction(rng.randrange(-num * 4, num * 4 + 1), den * rng.randrange(1, 4))

    table = {n: [coef() for _ in range(8)] for n in range(1, max_size + 1)}
    a = torus.index(torus.a) if torus.a is not None else None
    b = torus.index(torus.b) if torus.b is not None else None
    j_ab = coalescence_scale(torus) if a is not None and b is not None else None
    nbr = {}

    def sites_of(mask):
        out = []
        for i in bits(mask):
            out.extend(torus.index(x) for x in torus.block_sites(pv.blocks[i]))
        return out

    def compute(mask):
        n = popcount(mask)
        c = table[n]
        X = sites_of(mask)
        Xset = set(X)
        hood = sites_of(pv.small_hood(mask))
        out = space.zero()
        s1 = space.zero()
        for x in X:
            s1 = s1 + tau(space, x)
        out = out + s1.scale(space.coerce(c[0])) + (s1 * s1).scale(space.coerce(c[2]))
        pairs = space.zero()
        for x in X:
            if x not in nbr:
                nbr[x] = [torus.index(y) for y in torus.neighbors(torus.coords(x))]
            for y in nbr[x]:
                pairs = pairs + tau_pair(space, x, y) + tau_pair(space, y, x)
        out = out + pairs.scale(space.coerce(c[1] / 2))
        s3 = space.zero()
        for y in hood:
            s3 = s3 + tau(space, y)
        out = out + s3.scale(space.coerce(c[3]))
        if observables:
            if a is not None and a in Xset:
                out = out + (space.sigma() * space.phibar(a)).scale(space.coerce(c[4]))
            if b is not None and b in Xset:
                out = out + (space.sigmabar() * space.phi(b)).scale(space.coerce(c[5]))
            if a is not None and b is not None:
                ok = (a in Xset and b in hood) or (b in Xset and a in hood)
                if ok and not (n <= 2**torus.d and j < j_ab):
                    ss = space.sigma() * space.sigmabar()
                    out = out + ss.scale(space.coerce(c[6])) + (ss * s1).scale(space.coerce(c[7]))
        return out

    return PolymerFunctional(torus, j, space, compute=compute, factorising=True, name="K",
                             support_size=max_size)
