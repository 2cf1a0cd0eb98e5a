"""Projection of field polynomials onto the local coupling polynomials.

``loc_X`` reads a few linear functionals off the weight-collapsed boson part of F
and returns the unique polynomial

    c + g tau^2(X) + nu tau(X) + z tau_Delta(X) + y tau_grad(X) + observable terms

that reproduces those functionals.  The functionals are

* the constant coefficient;
* quartic: sum over x in X of coef(phi_x^2 phibar_x^2);
* inner: sum over x in X of coef(phi_x phibar_x);
* outer: sum over y outside X of coef(phi_y phibar_y);
* cross: sum of coef(phi_u phibar_v) over nearest-neighbour pairs u != v meeting X;
* sum over y of coef(sigma phibar_y), sum over y of coef(sigmabar phi_y), and
  coef(sigma sigmabar).

The output is again fixed by the same functionals, so the map is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from gmpy2 import mpq

from .fieldalg import CouplingConstants, FieldElement, V_of
from .polymers import Polymer, coalescence_scale


class LocError(ValueError):
    pass


BASIS_DIMENSIONS = {
    # (field degree, derivative count) of each bulk basis polynomial
    "g": (4, 0),
    "nu": (2, 0),
    "z": (2, 2),
    "y": (2, 2),
}


@dataclass(frozen=True)
class LocSpec:
    d: int
    max_dimension: Fraction | None = None
    observables_before_coalescence: bool = True

    @property
    def field_dim(self) -> Fraction:
        return Fraction(self.d - 2, 2)

    @property
    def threshold(self) -> Fraction:
        t = Fraction(self.d) if self.max_dimension is None else Fraction(self.max_dimension)
        if t < 0:
            raise LocError("dimension threshold must be non-negative")
        return t

    def keeps(self, name: str) -> bool:
        deg, der = BASIS_DIMENSIONS[name]
        return deg * self.field_dim + der <= self.threshold


def monomial_dimension(space, key: int, spec: LocSpec) -> Fraction:
    """(boson degree + fermion degree) times the field dimension (d - 2)/2."""
    return space.field_degree(key) * spec.field_dim


@dataclass
class LocData:
    """A local polynomial: a constant plus coupling constants on a polymer."""

    constant: object
    couplings: CouplingConstants
    polymer: Polymer

    def on_sites(self, sites, space) -> FieldElement:
        return V_of(self.couplings, sites, self.polymer.torus, space)

    def element(self, space) -> FieldElement:
        return self.on_sites(self.polymer.sites(), space) + space.const(self.constant)

    def block_element(self, block: Polymer, space) -> FieldElement:
        n = len(self.polymer)
        frac = mpq(1, n) if space.mode != "complex" else 1.0 / n
        return self.on_sites(block.sites(), space) + space.const(space.coerce(self.constant) * frac)


def _functionals(F: FieldElement, X: Polymer):
    sp = F.space
    T = X.torus
    inside = {T.index(x) for x in X.sites()}
    nbr = {}
    zero = sp.coerce(0)
    const = inner = outer = cross = quartic = lam_a = lam_b = pair = zero
    for k, c in F.terms():
        sector, _, ferm, bos = sp.decode(k)
        if ferm:
            continue
        if sector == 0:
            if not bos:
                const = const + c
            elif len(bos) == 2 and bos[0][1] == 1 and bos[1][1] == 1:
                i, j = bos[0][0], bos[1][0]
                # one phi and one phibar
                if (i & 1) == (j & 1):
                    continue
                u, v = (i >> 1, j >> 1) if not i & 1 else (j >> 1, i >> 1)
                if u == v:
                    if u in inside:
                        inner = inner + c
                    else:
                        outer = outer + c
                elif u in inside or v in inside:
                    if u not in nbr:
                        nbr[u] = {T.index(y) for y in T.neighbors(T.coords(u))}
                    if v in nbr[u]:
                        cross = cross + c
            elif len(bos) == 2 and bos[0][1] == 2 and bos[1][1] == 2 and bos[0][0] >> 1 == bos[1][0] >> 1:
                if bos[0][0] >> 1 in inside:
                    quartic = quartic + c
        elif sector == 1:
            if len(bos) == 1 and bos[0][1] == 1 and bos[0][0] & 1:
                lam_a = lam_a + c
        elif sector == 2:
            if len(bos) == 1 and bos[0][1] == 1 and not bos[0][0] & 1:
                lam_b = lam_b + c
        elif sector == 3 and not bos:
            pair = pair + c
    return const, inner, outer, cross, quartic, lam_a, lam_b, pair


def neighbour_pair_counts(X: Polymer) -> tuple[int, int]:
    """(#(x, e) with x, x+e both in X, #(x, e) with x in X and x+e outside)."""
    T = X.torus
    inside = set(X.sites())
    n_in = n_out = 0
    for x in inside:
        for y in T.neighbors(x):
            if y in inside:
                n_in += 1
            else:
                n_out += 1
    return n_in, n_out


def loc_data(F: FieldElement, X: Polymer, spec: LocSpec | None = None) -> LocData:
    if not X:
        raise LocError("Loc needs a nonempty polymer")
    T = X.torus
    sp = F.space
    spec = spec or LocSpec(T.d)
    const, inner, outer, cross, quartic, lam_a, lam_b, pair = _functionals(F, X)
    nsites = len(X.sites())
    d = T.d
    n_in, n_out = neighbour_pair_counts(X)
    frac = (lambda a, b: mpq(a, b)) if sp.mode != "complex" else (lambda a, b: a / b)
    zero = sp.coerce(0)
    keep_z, keep_y = spec.keeps("z"), spec.keeps("y")
    if n_out == 0:
        keep_y = False  # on the whole torus tau_grad and tau_Delta coincide
    y = outer * frac(2, n_out) if keep_y else zero
    if keep_z:
        z = -cross * frac(1, 2 * d * nsites) - y
    else:
        z = zero
    if keep_y and not keep_z:
        y = -cross * frac(1, 2 * d * nsites)
    nu = zero
    if spec.keeps("nu"):
        nu = (inner - z * (2 * d * nsites) - y * (d * nsites) - y * frac(n_in, 2)) * frac(1, nsites)
    g = quartic * frac(1, nsites) if spec.keeps("g") else zero
    j = X.scale
    below = True
    a_in = b_in = False
    if T.a is not None:
        a_in = T.a in set(X.sites())
    if T.b is not None:
        b_in = T.b in set(X.sites())
    if T.a is not None and T.b is not None:
        below = j < coalescence_scale(T)
    lam_A = -lam_a if (a_in and below and spec.observables_before_coalescence) else zero
    lam_B = -lam_b if (b_in and below and spec.observables_before_coalescence) else zero
    if a_in and b_in:
        q_a = q_b = -pair
    elif a_in:
        q_a, q_b = -2 * pair, zero
    elif b_in:
        q_a, q_b = zero, -2 * pair
    else:
        q_a = q_b = zero
    return LocData(const, CouplingConstants(g, nu, z, y, lam_A, lam_B, q_a, q_b), X)


def loc_X(F: FieldElement, X: Polymer, spec: LocSpec | None = None) -> FieldElement:
    return loc_data(F, X, spec).element(F.space)


def loc_XB(F: FieldElement, X: Polymer, B: Polymer, spec: LocSpec | None = None) -> FieldElement:
    """The share of loc_X F assigned to block B of X.

    Bulk couplings act on B's sites, the constant is split equally, and the
    observable terms go to the blocks holding a and b.
    """
    if len(B) != 1 or not B <= X:
        raise LocError("B must be one block of X")
    return loc_data(F, X, spec).block_element(B, F.space)


def loc_blocks(F: FieldElement, X: Polymer, spec: LocSpec | None = None) -> dict:
    data = loc_data(F, X, spec)
    return {B: data.block_element(B, F.space) for B in X.block_polymers()}


def loc_norm_constant(F: FieldElement, X: Polymer, params, spec: LocSpec | None = None) -> float:
    """Ratio ||loc_X F|| / ||F|| in the T0 norm (0 when F has norm 0)."""
    from .fieldalg import T0_norm

    den = T0_norm(F, params)
    if den == 0:
        return 0.0
    return T0_norm(loc_X(F, X, spec), params) / den
