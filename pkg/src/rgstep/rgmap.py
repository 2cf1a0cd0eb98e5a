"""One renormalisation-group step as a composition of six exact maps.

Every map rewrites the pair (interaction, polymer functional) without changing
the circle-product value on the whole torus (maps 3 and 6 change it in the
prescribed way: expectation, and extraction of the sigma-sigmabar factor).
All computations happen in the same truncated algebra, so each identity is an
exact equality of field polynomials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

from gmpy2 import mpq

from .fieldalg import (
    CouplingConstants,
    FieldElement,
    FieldSpace,
    NormParams,
    T0_norm,
    V_of,
    describe_key,
    exp_truncated,
    inverse_truncated,
    polynomial_cache,
)
from .functionals import (
    BlockFunctional,
    GasCircle,
    PolymerFunctional,
    check_space_K,
    circle_with_block,
    grade_profile,
    interaction_block,
    profile_product,
)
from .gaussian import Covariance, engine, truncated_pair_expectation
from .lattice import Torus
from .localisation import LocSpec, loc_data, loc_XB
from .polymers import (
    Paving,
    Polymer,
    admissible_triples,
    bits,
    coalescence_scale,
    paving,
    popcount,
    small_sets_containing,
    submasks,
)


class QReadbackError(ValueError):
    """A polynomial that should lie in the span of the coupling polynomials does not."""

    def __init__(self, message: str, residual: list | None = None):
        super().__init__(message)
        self.residual = residual or []


class ZeroSumError(ValueError):
    pass


def _half(space: FieldSpace):
    return mpq(1, 2) if space.mode != "complex" else 0.5


def block_site_indices(pv: Paving, i: int) -> list[int]:
    T = pv.torus
    return [T.index(x) for x in T.block_sites(pv.blocks[i])]


def mask_sites(pv: Paving, mask: int) -> list[int]:
    out = []
    for i in bits(mask):
        out.extend(block_site_indices(pv, i))
    return out


# the extra factor W of the interaction


class SyntheticW:
    """A stand-in for W_j(V, X): quadratic in the couplings and built from tau's.

    W_j(V, X) = s L^{-j} [g nu sum_x tau_x + (g^2 / 2) sum_x sum_e tau_x tau_{x+e}].
    """

    def __init__(self, strength=Fraction(1, 3)):
        self.strength = Fraction(strength)

    def __call__(self, j: int, V: CouplingConstants, sites, torus: Torus, space: FieldSpace) -> FieldElement:
        pc = polynomial_cache(space, torus)
        co = space.coerce
        s = co(self.strength / Fraction(torus.L) ** j)
        g, nu = co(V.g), co(V.nu)
        out = space.zero()
        if g * nu:
            for x in sites:
                out = out + pc.tau(x).scale(s * g * nu)
        if g:
            pair = space.zero()
            for x in sites:
                for y in torus.neighbors(torus.coords(x)):
                    pair = pair + pc.tau(x) * pc.tau(torus.index(y))
            out = out + pair.scale(s * g * g * _half(space))
        return out

    def __repr__(self):
        return f"SyntheticW({self.strength})"


def interaction(V: CouplingConstants, X: Polymer, space: FieldSpace, W=None) -> FieldElement:
    """I_j(V, X): the product over the blocks of X of exp(-V(B)) (1 + W_j(V, B))."""
    return interaction_block(V, X.torus, X.scale, space, W).power(X.mask)


def interaction_reciprocal(V: CouplingConstants, X: Polymer, space: FieldSpace, W=None) -> FieldElement:
    """I_j(V, X)^{-1} in the truncated algebra."""
    I = interaction_block(V, X.torus, X.scale, space, W)
    for b in bits(X.mask):
        c0 = I.block(b).coefficient(0, collapse_weight=False)
        if not c0:
            raise ZeroDivisionError("interaction has no invertible constant part")
    return I.inverse_power(X.mask)


# Q, V-hat and the read-back into coupling space


def compute_Q(I: BlockFunctional, K: PolymerFunctional, B: int, spec: LocSpec | None = None) -> FieldElement:
    """Q(B) = sum over small sets Y containing B of Loc_{Y,B} I^{-Y} K(Y)."""
    pv = K.pv
    sp = K.space
    out = sp.zero()
    Bpoly = Polymer(K.torus, K.scale, 1 << B)
    for Y in small_sets_containing(pv)[B]:
        kv = K.at(Y)
        if kv.is_zero():
            continue
        out = out + loc_XB(I.inverse_power(Y) * kv, Polymer(K.torus, K.scale, Y), Bpoly, spec)
    return out


def readback(polys: dict, torus: Torus, j: int, space: FieldSpace, spec: LocSpec | None = None,
             check_all: bool = True) -> CouplingConstants:
    """Coupling constants c with V_of(c, B) == polys[B] for the given blocks.

    Bulk couplings come from a block holding neither observable point; the
    observable couplings from the blocks holding a and b.
    """
    pv = paving(torus, j)
    ia = pv.site_block(torus.a) if torus.a is not None else None
    ib = pv.site_block(torus.b) if torus.b is not None else None
    bulk_blocks = [B for B in polys if B not in (ia, ib)]
    if not bulk_blocks:
        raise QReadbackError("read-back needs a block away from the observables")

    def couplings_at(B):
        return loc_data(polys[B], Polymer(torus, j, 1 << B), spec)

    ref = couplings_at(bulk_blocks[0])
    bulk = ref.couplings.bulk_only()
    vals = dict(zip(CouplingConstants.NAMES, bulk.as_tuple()))
    if ia is not None and ia in polys:
        c = couplings_at(ia).couplings
        vals["lam_a"], vals["q_a"] = c.lam_a, c.q_a
        if ib == ia:
            vals["lam_b"], vals["q_b"] = c.lam_b, c.q_b
    if ib is not None and ib in polys and ib != ia:
        c = couplings_at(ib).couplings
        vals["lam_b"], vals["q_b"] = c.lam_b, c.q_b
    out = CouplingConstants(**vals)
    blocks = polys if check_all else [bulk_blocks[0]] + [B for B in (ia, ib) if B in polys]
    for B in blocks:
        target = polys[B]
        rebuilt = V_of(out, block_site_indices(pv, B), torus, space)
        diff = (target.collapse_weight() - rebuilt).filter(lambda k: True)
        if not diff.is_zero():
            res = [(describe_key(space, k), str(c)) for k, c in diff.items_sorted()[:12]]
            raise QReadbackError(f"block {B} is not in the coupling span", res)
    return out


def Q_couplings(I: BlockFunctional, K: PolymerFunctional, spec: LocSpec | None = None,
                blocks=None) -> CouplingConstants:
    pv = K.pv
    T = K.torus
    if blocks is None:
        blocks = list(range(pv.n))
    polys = {B: compute_Q(I, K, B, spec) for B in blocks}
    return readback(polys, T, K.scale, K.space, spec, check_all=True)


def reference_blocks(torus: Torus, j: int) -> list[int]:
    """A bulk block far from the observables plus the blocks of a and b."""
    pv = paving(torus, j)
    marked = set()
    for pt in (torus.a, torus.b):
        if pt is not None:
            marked.add(pv.site_block(pt))
    near = pv.dilate(sum(1 << m for m in marked), 2) if marked else 0
    far = [i for i in range(pv.n) if not near >> i & 1]
    bulk = far[0] if far else next(i for i in range(pv.n) if i not in marked)
    return sorted({bulk} | marked)


def vhat(V: CouplingConstants, Q: CouplingConstants) -> CouplingConstants:
    return V - Q


# the toy perturbative map


def vpt_toy(V: CouplingConstants, C: Covariance, torus: Torus, j: int, space: FieldSpace,
            spec: LocSpec | None = None) -> CouplingConstants:
    """Second-order matching on a scale-j block b:

        V_pt(b) = Loc_b [E theta V(b) - 1/2 E theta (V(b); V(Lambda))]

    read back into coupling constants.  The constant is dropped.  At and above
    the coalescence scale the observable couplings lam_a, lam_b pass through
    unchanged, since Loc no longer sees them there.
    """
    pv = paving(torus, j)
    e = engine(C, space)
    full = list(range(torus.volume))
    V_all = V_of(V, full, torus, space)
    half = _half(space)
    polys = {}
    for B in reference_blocks(torus, j):
        Vb = V_of(V, block_site_indices(pv, B), torus, space)
        F = e.theta(Vb) - truncated_pair_expectation(C, Vb, V_all).scale(half)
        data = loc_data(F, Polymer(torus, j, 1 << B), spec)
        polys[B] = V_of(data.couplings, block_site_indices(pv, B), torus, space)
    out = readback(polys, torus, j, space, spec)
    if torus.a is not None and torus.b is not None and j >= coalescence_scale(torus):
        out = out.replace(lam_a=V.lam_a, lam_b=V.lam_b)
    return out


def project_Q0(V: CouplingConstants) -> CouplingConstants:
    """Replace z tau_Delta + y tau_grad by (z + y) tau_Delta and drop the sigma-sigmabar term."""
    return V.replace(z=V.z + V.y, y=0, q_a=0, q_b=0)


def project_Q1(V: CouplingConstants) -> CouplingConstants:
    """Replace z tau_Delta + y tau_grad by (z + y) tau_Delta, keeping the sigma-sigmabar term."""
    return V.replace(z=V.z + V.y, y=0)


# reapportionment kernels and the change of variables


class ReapportionKernel:
    """J(U, B) for small sets U containing the block B; zero elsewhere."""

    def __init__(self, torus: Torus, j: int, space: FieldSpace, fn, name: str = "J"):
        self.torus = torus
        self.scale = j
        self.space = space
        self.pv = paving(torus, j)
        self._fn = fn
        self._memo: dict = {}
        self.name = name
        self.small = small_sets_containing(self.pv)

    @classmethod
    def from_values(cls, torus: Torus, j: int, space: FieldSpace, values: dict, name: str = "J"):
        pv = paving(torus, j)
        small = small_sets_containing(pv)
        for (U, B) in values:
            if U not in small[B]:
                raise ValueError(f"({U:#x}, {B}) lies outside the kernel domain")
        zero = space.zero()
        return cls(torus, j, space, lambda U, B: values.get((U, B), zero), name)

    def domain(self, B: int) -> list[int]:
        return self.small[B]

    def __call__(self, U: int, B: int) -> FieldElement:
        if not (U >> B & 1) or U not in self.small[B]:
            return self.space.zero()
        key = (U, B)
        v = self._memo.get(key)
        if v is None:
            v = self._memo[key] = self._fn(U, B)
        return v

    def residual(self, B: int) -> FieldElement:
        out = self.space.zero()
        for U in self.small[B]:
            out = out + self(U, B)
        return out

    def zero_sum_violations(self, blocks=None) -> list[int]:
        blocks = range(self.pv.n) if blocks is None else blocks
        return [B for B in blocks if not self.residual(B).is_zero()]

    def is_zero(self) -> bool:
        return all(self(U, B).is_zero() for B in range(self.pv.n) for U in self.small[B])


def zero_kernel(torus: Torus, j: int, space: FieldSpace) -> ReapportionKernel:
    z = space.zero()
    return ReapportionKernel(torus, j, space, lambda U, B: z, "0")


def change_of_variables(Iin: BlockFunctional, J: ReapportionKernel, Kin: PolymerFunctional,
                        name: str = "K_out", check_zero_sum: bool = False):
    """K_out with (Iin o K_out)(Lambda) = (Iin o K_in)(Lambda).

    M(U) = K_in(U) - Iin^U sum_B J(U, B) on connected U, and

        K_out(W) = sum over (X, {U_B}, U_M) of prod_B Iin^{U_B} J(U_B, B) M(U_M) Iin^{W - U_M - U_J}

    over blocks X, pairwise non-touching small sets U_B containing them, and
    U_M not touching their union U_J, with X^box union U_M = W.  The X = empty
    term is M(W).  Returns (K_out, M).
    """
    if Iin.scale != Kin.scale or J.scale != Kin.scale:
        raise ValueError("change of variables needs one scale throughout")
    if check_zero_sum:
        bad = J.zero_sum_violations()
        if bad:
            raise ZeroSumError(f"kernel does not sum to zero at blocks {bad[:8]}")
    pv = Kin.pv
    sp = Kin.space

    def m_compute(U: int) -> FieldElement:
        s = sp.zero()
        for B in bits(U):
            s = s + J(U, B)
        out = Kin.at(U)
        if not s.is_zero():
            out = out - Iin.power(U) * s
        return out

    M = PolymerFunctional(Kin.torus, Kin.scale, sp, compute=m_compute, factorising=True, name="M")
    small = J.small
    jbar: dict = {}

    def Jbar(U, B):
        key = (U, B)
        v = jbar.get(key)
        if v is None:
            jv = J(U, B)
            v = Iin.power(U) * jv if not jv.is_zero() else jv
            jbar[key] = (v, grade_profile(v))
            return jbar[key]
        return v

    def k_compute(W: int) -> FieldElement:
        # depth-first over the blocks of X in increasing order; a branch stops
        # as soon as the product of the Jbar factors is beyond the truncation
        total = [M.at(W)]
        wblocks = list(bits(W))
        p = sp.p

        def visit(x, uj, prod, prof, start):
            if x:
                hood = pv.small_hood(x)
                rest = W & ~hood
                near = pv.dilate(uj)
                if not rest & near:
                    for s in submasks(hood & ~near):
                        um = rest | s
                        mv = M.at(um)
                        if not mv.is_zero():
                            total[0] = total[0] + prod * mv * Iin.power(W & ~(um | uj))
            for t in range(start, len(wblocks)):
                B = wblocks[t]
                if pv.touch[B] & x:
                    continue
                x2 = x | 1 << B
                if pv.small_hood(x2) & ~W:
                    continue
                for U in small[B]:
                    if pv.dilate(U) & uj:
                        continue
                    jv, jp = Jbar(U, B)
                    if jv.is_zero():
                        continue
                    p2 = profile_product(prof, jp, p)
                    if p2:
                        visit(x2, uj | U, prod * jv, p2, t + 1)

        visit(0, 0, sp.const(1), {0: 0}, 0)
        return total[0]

    K = PolymerFunctional(Kin.torus, Kin.scale, sp, compute=k_compute, factorising=True, name=name)
    return K, M


# map 1


def map1(I: BlockFunctional, K: PolymerFunctional, spec: LocSpec | None = None):
    """Move the local parts of K on small sets onto single blocks.  Returns (J, K1, M)."""
    T, j, sp = K.torus, K.scale, K.space

    def loc_share(Y: int, B: int) -> FieldElement:
        kv = K.at(Y)
        if kv.is_zero():
            return sp.zero()
        return loc_XB(I.inverse_power(Y) * kv, Polymer(T, j, Y), Polymer(T, j, 1 << B), spec)

    small = small_sets_containing(K.pv)

    def fn(U: int, B: int) -> FieldElement:
        if U == 1 << B:
            out = sp.zero()
            for Y in small[B]:
                if Y != U:
                    out = out - loc_share(Y, B)
            return out
        return loc_share(U, B)

    J = ReapportionKernel(T, j, sp, fn, "J1")
    K1, M = change_of_variables(I, J, K, "K1")
    return J, K1, M


def mnoloc_residuals(I: BlockFunctional, M: PolymerFunctional, spec: LocSpec | None = None) -> list:
    """Small sets X (not blocks) where Loc_X I^{-X} M(X) is not zero."""
    T, j = M.torus, M.scale
    bad = []
    for X in M.pv.connected_masks(2**T.d):
        if popcount(X) == 1:
            continue
        d = loc_data(I.inverse_power(X) * M.at(X), Polymer(T, j, X), spec)
        if not d.element(M.space).is_zero():
            bad.append(X)
    return bad


def mqb_residuals(I: BlockFunctional, M: PolymerFunctional, K: PolymerFunctional,
                  spec: LocSpec | None = None) -> list:
    """Blocks B where Loc_B I^{-B} M(B) differs from Q(B)."""
    T, j = M.torus, M.scale
    bad = []
    for B in range(M.pv.n):
        lhs = loc_data(I.inverse_power(1 << B) * M.at(1 << B), Polymer(T, j, 1 << B), spec).element(M.space)
        if lhs != compute_Q(I, K, B, spec):
            bad.append(B)
    return bad


# map 3


@dataclass
class Map3Pieces:
    K3: FieldElement
    h: FieldElement
    k: FieldElement
    R: FieldElement
    h_red: FieldElement
    h_rem: FieldElement


class Map3:
    """K3(U) = sum over X with closure U of Itilde^{U - X} E (deltaI o theta K2)(X).

    deltaI = theta Ihat - Itilde mixes integrated and external fields, so
    E[deltaI^Z theta K2(Y)] is expanded as

        sum over S in Z of (-Itilde)^{Z - S} E theta (Ihat^S K2(Y)).

    Pairs (Y, Z) whose least possible grade exceeds the truncation are
    skipped; that is exact because the expectation preserves the grade.
    """

    def __init__(self, I_hat: BlockFunctional, K2: PolymerFunctional, I_tilde: BlockFunctional, C: Covariance):
        self.I_hat, self.K2, self.I_tilde, self.C = I_hat, K2, I_tilde, C
        self.torus = K2.torus
        self.scale = K2.scale
        self.space = K2.space
        self.fine = K2.pv
        self.coarse = paving(self.torus, self.scale + 1)
        self.engine = engine(C, self.space)
        self._et: dict = {}
        self._pieces: dict = {}
        self._dprof: dict = {}

    def _delta_profile(self, b: int) -> dict:
        hit = self._dprof.get(b)
        if hit is None:
            Ih, It = self.I_hat.block(b), self.I_tilde.block(b)
            fm = self.space.field_mask
            with_fields = Ih.filter(lambda k: bool(k & fm))
            p1, p2 = grade_profile(with_fields), grade_profile(Ih - It)
            hit = dict(p1)
            for s, g in p2.items():
                if s not in hit or g < hit[s]:
                    hit[s] = g
            self._dprof[b] = hit
        return hit

    def _expect(self, S: int, Y: int) -> FieldElement:
        key = (S, Y)
        hit = self._et.get(key)
        if hit is None:
            hit = self.engine.theta(self.I_hat.power(S) * self.K2.at(Y))
            self._et[key] = hit
        return hit

    def delta_expectation(self, Z: int, Y: int) -> FieldElement:
        """E[deltaI^Z theta K2(Y)]."""
        sp = self.space
        out = sp.zero()
        for S in submasks(Z):
            rest = Z ^ S
            term = self._expect(S, Y)
            if rest:
                term = self.I_tilde.power(rest) * term
                if popcount(rest) & 1:
                    term = -term
            out = out + term
        return out

    def _connected_pieces(self, kids: int) -> list:
        """Connected polymers inside ``kids`` where K2 is not zero, with their profiles."""
        out = []
        for P in self.fine.connected_masks(popcount(kids), within=kids):
            kv = self.K2.at(P)
            if not kv.is_zero():
                out.append((P, grade_profile(kv)))
        out.sort(key=lambda t: (t[0] & -t[0], t[0]))
        return out

    def _y_sets(self, pieces: list):
        """Unions of pairwise non-touching pieces whose product survives truncation."""
        fine, p = self.fine, self.space.p

        def grow(Y, near, prof, start):
            yield Y, prof
            for t in range(start, len(pieces)):
                P, pp = pieces[t]
                if P & near:
                    continue
                p2 = profile_product(prof, pp, p)
                if p2:
                    yield from grow(Y | P, near | fine.dilate(P), p2, t + 1)

        yield from grow(0, 0, {0: 0}, 0)

    def _z_sets(self, free: int, yprof: dict):
        p = self.space.p
        blocks = list(bits(free))

        def grow(Z, prof, start):
            yield Z
            for t in range(start, len(blocks)):
                b = blocks[t]
                p2 = profile_product(prof, self._delta_profile(b), p)
                if p2:
                    yield from grow(Z | 1 << b, p2, t + 1)

        yield from grow(0, yprof, 0)

    def pieces(self, U: int) -> Map3Pieces:
        hit = self._pieces.get(U)
        if hit is not None:
            return hit
        sp, fine = self.space, self.fine
        kids = fine.children_mask(U)
        It = self.I_tilde
        K3 = h = k = R = h_red = h_rem = sp.zero()
        for Y, yprof in self._y_sets(self._connected_pieces(kids)):
            y_connected = Y and fine.is_connected_mask(Y)
            for Z in self._z_sets(kids & ~Y, yprof):
                X = Y | Z
                if not X or fine.closure_mask(X) != U:
                    continue
                e = self.delta_expectation(Z, Y)
                if e.is_zero():
                    continue
                term = It.power(kids & ~X) * e
                K3 = K3 + term
                if not Y:
                    hz = It.inverse_power(Z) * e
                    h = h + hz
                    if popcount(Z) <= 2:
                        h_red = h_red + hz
                    else:
                        h_rem = h_rem + hz
                elif not Z and y_connected:
                    k = k + It.inverse_power(Y) * e
                else:
                    R = R + term
        out = Map3Pieces(K3, h, k, R, h_red, h_rem)
        self._pieces[U] = out
        return out

    def functional(self, which: str = "K3") -> PolymerFunctional:
        return PolymerFunctional(self.torus, self.scale + 1, self.space,
                                 compute=lambda U: getattr(self.pieces(U), which),
                                 factorising=True, name=which)

    def decomposition_holds(self, U: int) -> bool:
        """K3 = Itilde^U h + Itilde^U k + R on the connected polymer U."""
        pc = self.pieces(U)
        It_U = self.I_tilde.power(self.fine.children_mask(U))
        return pc.K3 == It_U * pc.h + It_U * pc.k + pc.R

    def inversion_crosscheck(self, U: int) -> bool:
        """K3(U) against sum over V in U of (-Itilde)^{U - V} E theta (Ihat o K2)(V)."""
        sp = self.space
        gas = GasCircle(self.I_hat, self.K2)
        up = self.I_tilde.coarsen()
        total = sp.zero()
        for Vm in submasks(U):
            term = self.engine.theta(gas.value(self.fine.children_mask(Vm)))
            rest = U ^ Vm
            if rest:
                term = up.power(rest) * term
                if popcount(rest) & 1:
                    term = -term
            total = total + term
        return total == self.pieces(U).K3


# map 4: the leading second-order part


def h_lead_kernel(V: CouplingConstants, C: Covariance, torus: Torus, j_plus: int, space: FieldSpace) -> ReapportionKernel:
    """h_lead(U, B) on scale-(j+1) blocks.

    -1/2 E theta (V(B); V(Lambda - B)) for U = B, +1/2 E theta (V(B); V(U - B)) for
    connected two-block U, zero otherwise.  The observable-sector part of each
    value is kept only when B holds the matching observable point (a for sigma,
    b for sigma-bar, either for the pair); every sector sums to zero over U on
    its own, so dropping whole sectors at a block keeps the kernel zero-sum.
    """
    pv = paving(torus, j_plus)
    half = _half(space)
    cache: dict = {}
    a_block = pv.site_block(torus.a) if torus.a is not None else None
    b_block = pv.site_block(torus.b) if torus.b is not None else None

    def assign_observables(F: FieldElement, B: int) -> FieldElement:
        keep = {0}
        if B == a_block:
            keep.update((1, 3))
        if B == b_block:
            keep.update((2, 3))
        if len(keep) == 4:
            return F
        return F.filter(lambda k: k & 3 in keep)

    def V_blocks(mask):
        if mask not in cache:
            cache[mask] = V_of(V, mask_sites(pv, mask), torus, space)
        return cache[mask]

    def fn(U: int, B: int) -> FieldElement:
        VB = V_blocks(1 << B)
        if U == 1 << B:
            raw = truncated_pair_expectation(C, VB, V_blocks(pv.full & ~U)).scale(-half)
        elif popcount(U) == 2:
            raw = truncated_pair_expectation(C, VB, V_blocks(U & ~(1 << B))).scale(half)
        else:
            return space.zero()
        return assign_observables(raw, B)

    return ReapportionKernel(torus, j_plus, space, fn, "h_lead")


# map 6: the boundary term of the summation by parts


def boundary_polynomial(y, torus: Torus, j: int, space: FieldSpace, Z_mask: int, B: int) -> FieldElement:
    """V_{boundary, Z, B} = (y/2) sum over z in B and Z, e with z+e outside Z of (tau_{z+e} - tau_z)."""
    pv = paving(torus, j)
    if not (Z_mask >> B & 1) or not y:
        return space.zero()
    pc = polynomial_cache(space, torus)
    inside = set(mask_sites(pv, Z_mask))
    out = space.zero()
    for z in block_site_indices(pv, B):
        for w in torus.neighbors(torus.coords(z)):
            wi = torus.index(w)
            if wi not in inside:
                out = out + pc.tau(wi) - pc.tau(z)
    return out.scale(space.coerce(y) * _half(space))


# the composed step


@dataclass
class StepConfig:
    W: object = None
    vpt: object = None  # callable (V, C, torus, j, space, spec) -> CouplingConstants
    loc_spec: LocSpec | None = None
    check_identities: bool = True
    readback_all_blocks: bool = True


@dataclass
class RGStepOutput:
    dq: object
    dq_a: object
    dq_b: object
    V_hat: CouplingConstants
    V_pt: CouplingConstants
    V_plus: CouplingConstants
    R_plus: CouplingConstants
    K_plus: PolymerFunctional
    intermediates: dict = field(default_factory=dict)
    identities: dict = field(default_factory=dict)
    audits: dict = field(default_factory=dict)


class RGStep:
    """All objects of one step, computed lazily and memoised per polymer."""

    def __init__(self, V: CouplingConstants, K: PolymerFunctional, C: Covariance, config: StepConfig | None = None):
        self.V = V
        self.K = K
        self.C = C
        self.cfg = config or StepConfig()
        self.torus = K.torus
        self.j = K.scale
        self.space = K.space
        if self.j + 1 > self.torus.N:
            raise ValueError("no scale above the top")
        self.pv = K.pv
        self.up = paving(self.torus, self.j + 1)
        self.spec = self.cfg.loc_spec
        self.W = self.cfg.W

    # inputs of the maps

    @cached_property
    def I(self) -> BlockFunctional:
        return interaction_block(self.V, self.torus, self.j, self.space, self.W)

    @cached_property
    def Q_blocks(self) -> dict:
        blocks = range(self.pv.n) if self.cfg.readback_all_blocks else reference_blocks(self.torus, self.j)
        return {B: compute_Q(self.I, self.K, B, self.spec) for B in blocks}

    @cached_property
    def Q(self) -> CouplingConstants:
        return readback(self.Q_blocks, self.torus, self.j, self.space, self.spec)

    @cached_property
    def V_hat(self) -> CouplingConstants:
        return vhat(self.V, self.Q)

    @cached_property
    def map1(self):
        return map1(self.I, self.K, self.spec)

    @property
    def J1(self) -> ReapportionKernel:
        return self.map1[0]

    @property
    def K1(self) -> PolymerFunctional:
        return self.map1[1]

    @property
    def M1(self) -> PolymerFunctional:
        return self.map1[2]

    @cached_property
    def I_hat(self) -> BlockFunctional:
        return interaction_block(self.V_hat, self.torus, self.j, self.space, self.W, name="I_hat")

    @cached_property
    def delta_I2(self) -> BlockFunctional:
        return self.I - self.I_hat

    @cached_property
    def K2(self) -> PolymerFunctional:
        return circle_with_block(self.K1, self.delta_I2, "K2")

    def _vpt(self, V: CouplingConstants) -> CouplingConstants:
        fn = self.cfg.vpt or vpt_toy
        return fn(V, self.C, self.torus, self.j, self.space, self.spec)

    @cached_property
    def V_pt(self) -> CouplingConstants:
        return self._vpt(self.V_hat)

    @cached_property
    def V_pt_of_V(self) -> CouplingConstants:
        return self._vpt(self.V)

    @cached_property
    def I_tilde(self) -> BlockFunctional:
        """exp(-V_pt(b)) (1 + W_{j+1}(V_pt, b)) on scale-j blocks."""
        return interaction_block(self.V_pt, self.torus, self.j, self.space, self.W,
                                 W_scale=self.j + 1, name="I_tilde")

    @cached_property
    def I_tilde_up(self) -> BlockFunctional:
        return self.I_tilde.coarsen()

    @cached_property
    def map3(self) -> Map3:
        return Map3(self.I_hat, self.K2, self.I_tilde, self.C)

    @cached_property
    def K3(self) -> PolymerFunctional:
        return self.map3.functional("K3")

    @cached_property
    def h_lead(self) -> ReapportionKernel:
        return h_lead_kernel(self.V_hat, self.C, self.torus, self.j + 1, self.space)

    @cached_property
    def map4(self):
        return change_of_variables(self.I_tilde_up, self.h_lead, self.K3, "K4")

    @property
    def K4(self) -> PolymerFunctional:
        return self.map4[0]

    @cached_property
    def V_plus(self) -> CouplingConstants:
        return project_Q0(self.V_pt)

    @cached_property
    def I_pt_plus(self) -> BlockFunctional:
        return interaction_block(self.V_pt, self.torus, self.j + 1, self.space, self.W,
                                 W_couplings=self.V_plus, name="I_pt_plus")

    @cached_property
    def delta_plus_I(self) -> BlockFunctional:
        return self.I_tilde_up - self.I_pt_plus

    @cached_property
    def K5(self) -> PolymerFunctional:
        return circle_with_block(self.K4, self.delta_plus_I, "K5")

    @cached_property
    def I_plus(self) -> BlockFunctional:
        return interaction_block(self.V_plus, self.torus, self.j + 1, self.space, self.W, name="I_plus")

    @property
    def dq_a(self):
        return self.V_pt.q_a

    @property
    def dq_b(self):
        return self.V_pt.q_b

    @property
    def dq(self):
        return (self.dq_a + self.dq_b) * mpq(1, 2) if self.space.mode != "complex" else (self.dq_a + self.dq_b) / 2

    def v_of(self, X: int) -> FieldElement:
        """v(X) = sigma sigmabar (1/2)(dq_a 1_{a in X} + dq_b 1_{b in X})."""
        sp, T = self.space, self.torus
        c = sp.coerce(0)
        if T.a is not None and X >> self.up.site_block(T.a) & 1:
            c = c + sp.coerce(self.dq_a)
        if T.b is not None and X >> self.up.site_block(T.b) & 1:
            c = c + sp.coerce(self.dq_b)
        return (sp.sigma() * sp.sigmabar()).scale(c * _half(sp))

    def R_boundary(self, X: int, B: int) -> FieldElement:
        """R_X(B) = exp(-V_{boundary, Lambda - X, B}) - 1."""
        Vb = boundary_polynomial(self.V_pt.y, self.torus, self.j + 1, self.space, self.up.full & ~X, B)
        if Vb.is_zero():
            return Vb
        return exp_truncated(-Vb) - self.space.const(1)

    @cached_property
    def K_plus(self) -> PolymerFunctional:
        sp = self.space
        one = sp.const(1)

        def compute(Z: int) -> FieldElement:
            out = sp.zero()
            for X in submasks(Z):
                if not X:
                    continue
                k5 = self.K5.at(X)
                if k5.is_zero():
                    continue
                term = (one - self.v_of(X)) * k5
                for B in bits(Z & ~X):
                    term = term * self.R_boundary(X, B) * self.I_plus.block(B)
                    if term.is_zero():
                        break
                out = out + term
            return out

        return PolymerFunctional(self.torus, self.j + 1, sp, compute=compute, factorising=True, name="K_plus")

    @cached_property
    def R_plus(self) -> CouplingConstants:
        return project_Q1(self.V_pt) - project_Q1(self.V_pt_of_V)

    # identities

    def circle_values(self) -> dict:
        """The circle-product value on the whole torus after each map."""
        fullj, fullu = self.pv.full, self.up.full
        e = engine(self.C, self.space)
        sp = self.space
        out = {}
        out["IK"] = GasCircle(self.I, self.K).value(fullj)
        out["IK1"] = GasCircle(self.I, self.K1).value(fullj)
        out["IK2"] = GasCircle(self.I_hat, self.K2).value(fullj)
        out["E_IK2"] = e.theta(out["IK2"])
        out["E_IK"] = e.theta(out["IK"])
        out["IK3"] = GasCircle(self.I_tilde_up, self.K3).value(fullu)
        out["IK4"] = GasCircle(self.I_tilde_up, self.K4).value(fullu)
        out["IK5"] = GasCircle(self.I_pt_plus, self.K5).value(fullu)
        eq = exp_truncated((sp.sigma() * sp.sigmabar()).scale(sp.coerce(self.dq)))
        out["IK6"] = eq * GasCircle(self.I_plus, self.K_plus).value(fullu)
        return out

    def identities(self) -> dict:
        cv = self.circle_values()
        return {
            "map1": cv["IK"] == cv["IK1"],
            "map2": cv["IK1"] == cv["IK2"],
            "map3": cv["E_IK2"] == cv["IK3"],
            "map4": cv["IK3"] == cv["IK4"],
            "map5": cv["IK4"] == cv["IK5"],
            "map6": cv["IK5"] == cv["IK6"],
            "end_to_end": cv["E_IK"] == cv["IK6"],
        }

    def t0_report(self, params: NormParams | None = None) -> dict:
        T = self.torus
        params = params or NormParams(self.j + 1, T.L, T.d)
        worst = 0.0
        for U in self.up.connected_masks(self.up.n):
            worst = max(worst, T0_norm(self.K_plus.at(U), params))
        return {"norm_scale": self.j + 1, "max_T0_K_plus": worst}

    def run(self) -> RGStepOutput:
        out = RGStepOutput(self.dq, self.dq_a, self.dq_b, self.V_hat, self.V_pt, self.V_plus,
                           self.R_plus, self.K_plus)
        out.intermediates = {"K1": self.K1, "K2": self.K2, "K3": self.K3, "K4": self.K4, "K5": self.K5,
                             "K6": self.K_plus, "h": self.map3.functional("h"),
                             "k": self.map3.functional("k"), "R": self.map3.functional("R")}
        if self.cfg.check_identities:
            out.identities = self.identities()
            out.audits["J1_zero_sum"] = not self.J1.zero_sum_violations()
            out.audits["h_lead_zero_sum"] = not self.h_lead.zero_sum_violations()
        return out


def rg_step(V: CouplingConstants, K: PolymerFunctional, C: Covariance, config: StepConfig | None = None) -> RGStepOutput:
    return RGStep(V, K, C, config).run()


def random_couplings(rng: random.Random, scale=Fraction(1, 2), observables: bool = True,
                     y: bool = True, q: bool = False) -> CouplingConstants:
    """Random couplings with g > 0 and entries of size about ``scale``."""
    scale = Fraction(scale)

    def r():
        return scale * Fraction(rng.randrange(-6, 7), rng.randrange(1, 7))

    lam_a, lam_b = (r(), r()) if observables else (0, 0)
    q_a, q_b = (r(), r()) if q else (0, 0)
    return CouplingConstants(abs(r()) + scale / 7, r(), r(), r() if y else 0, lam_a, lam_b, q_a, q_b)


# locality checks


def check_restriction_property(V: CouplingConstants, K: PolymerFunctional, K_far: PolymerFunctional,
                               C: Covariance, U: int, config: StepConfig | None = None) -> bool:
    """K_plus(U) is unchanged when K is replaced by K_far.

    K_far must agree with K on every polymer inside the small-set neighbourhood
    of U (the caller guarantees this; ``agree_inside`` verifies it).
    """
    a = RGStep(V, K, C, config).K_plus.at(U)
    b = RGStep(V, K_far, C, config).K_plus.at(U)
    return a == b


def agree_inside(K1: PolymerFunctional, K2: PolymerFunctional, U_up: int) -> bool:
    """K1 and K2 agree on every connected scale-j polymer inside U's small-set neighbourhood."""
    up = paving(K1.torus, K1.scale + 1)
    region = K1.pv.children_mask(up.small_hood(U_up))
    for m in K1.pv.connected_masks(popcount(region), within=region):
        if K1.at(m) != K2.at(m):
            return False
    return True


def patch_embedding(small: Torus, big_N: int, U: int, j_plus: int, offset=None):
    """A big torus and a coordinate map from the patch around U into it.

    Sites within distance side/2 - 1 of U's centre are placed by their
    displacement from that centre; ``offset`` (a multiple of the block side
    L^{j+1} per axis) translates the picture, so blocks go to blocks.  The
    observable points are placed by the same rule, so the big torus carries
    the transported a and b.
    """
    from .lattice import CoordinateMap

    ups = paving(small, j_plus)
    sites = [small.coords(i) for i in mask_sites(ups, U)]
    step = small.L**j_plus
    if offset is None:
        offset = tuple(step for _ in range(small.d))
    if any(o % step for o in offset):
        raise ValueError("the offset must be a multiple of the block side")
    lo = [min(x[k] for x in sites) for k in range(small.d)]
    hi = [max(x[k] for x in sites) for k in range(small.d)]
    centre = [(a + b) // 2 for a, b in zip(lo, hi)]
    r = small.side // 2 - 1

    def lift(x):
        disp = small.displacement(x, centre)
        return tuple(c + dx + o for c, dx, o in zip(centre, disp, offset))

    domain = [x for x in small.sites() if max(abs(v) for v in small.displacement(x, centre)) <= r]
    a = lift(small.a) if small.a is not None else None
    b = lift(small.b) if small.b is not None else None
    big = Torus(small.d, small.L, big_N, a=a, b=b)
    return big, CoordinateMap.from_function(small, big, domain, lift)


def check_zd_property(V: CouplingConstants, K_small: PolymerFunctional, K_big: PolymerFunctional,
                      C_small: Covariance, C_big: Covariance, iota, U: int,
                      config: StepConfig | None = None) -> bool:
    """iota K_plus(U) on the small torus equals K_plus(iota U) on the big torus.

    U is a scale-(j+1) polymer of the small torus lying in a coordinate patch;
    ``iota`` is a CoordinateMap defined around U (see ``patch_embedding``).
    """
    from .lattice import validate_coordinate_map

    Ts, Tb = K_small.torus, K_big.torus
    j = K_small.scale
    ups = paving(Ts, j + 1)
    upb = paving(Tb, j + 1)
    span = len(mask_sites(ups, U))
    if len(ups.component_masks(U)) != 1 or span > Ts.volume // 2 or U == ups.full:
        raise ValueError("U must be a coordinate patch of the small torus")
    if not validate_coordinate_map(iota):
        raise ValueError("iota is not a neighbour-preserving embedding")
    m = iota.mapping
    cfg = config or StepConfig()
    small_val = RGStep(V, K_small, C_small, cfg).K_plus.at(U)
    site_map = {}
    for i in small_val.sites():
        x = Ts.coords(i)
        if x not in m:
            raise ValueError(f"K_plus(U) reaches site {x} outside the patch")
        site_map[i] = Tb.index(m[x])
    image = 0
    for i in mask_sites(ups, U):
        x = Ts.coords(i)
        if x not in m:
            raise ValueError("U is not inside the patch")
        image |= 1 << upb.site_block(m[x])
    big_val = RGStep(V, K_big, C_big, cfg).K_plus.at(image)
    return small_val.relabel(site_map, K_big.space) == big_val
