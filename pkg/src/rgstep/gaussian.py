"""Finite-range covariances and the Gaussian expectation acting on field polynomials.

The fluctuation integral with external fields kept, E_C theta F, equals the heat
operator exp(Lap_C) applied to F, where

    Lap_C = sum_{u,v} C(u,v) [d/dphi_u d/dphibar_v + d/dpsi_u d/dpsibar_v]

with left Grassmann derivatives.  Each contraction removes two fields and adds 2
to the contraction weight, so the grade is preserved.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from gmpy2 import mpq

from .fieldalg import FieldElement, FieldSpace
from .lattice import Torus


class CovarianceError(ValueError):
    pass


class Covariance:
    """Translation-invariant kernel on the torus, stored by displacement."""

    def __init__(self, torus: Torus, j: int, entries: dict, check_range: bool = True):
        self.torus = torus
        self.scale = j
        self.entries = {}
        for disp, val in entries.items():
            disp = tuple(disp) if isinstance(disp, (tuple, list)) else (disp,)
            r = torus.reduce(disp)
            r = torus.displacement(r, (0,) * torus.d)
            if val:
                self.entries[r] = Fraction(val) if not isinstance(val, complex) else val
        if check_range:
            limit = Fraction(torus.L**j, 2)
            for r in self.entries:
                if max(abs(c) for c in r) >= limit:
                    raise CovarianceError(f"entry at displacement {r} violates the range bound")
        for r, v in self.entries.items():
            neg = torus.displacement(tuple(-c for c in r), (0,) * torus.d)
            if self.entries.get(neg, 0) != v:
                raise CovarianceError("covariance is not symmetric")
        self._rows = None
        self._cache: dict = {}

    @property
    def range(self) -> int:
        return max((max(abs(c) for c in r) for r in self.entries), default=0)

    def value(self, x: int, y: int):
        T = self.torus
        r = T.displacement(T.coords(x), T.coords(y))
        return self.entries.get(r, 0)

    __call__ = value

    def rows(self) -> list[list[tuple[int, Fraction]]]:
        """rows[u] = [(v, C(u,v)) for the nonzero entries]."""
        if self._rows is None:
            T = self.torus
            out = []
            for u in range(T.volume):
                cu = T.coords(u)
                row = []
                for r, val in self.entries.items():
                    row.append((T.index(T.shift(cu, r)), val))
                out.append(sorted(row))
            self._rows = out
        return self._rows

    def matrix(self) -> list[list]:
        n = self.torus.volume
        return [[self.value(x, y) for y in range(n)] for x in range(n)]

    def __add__(self, other: Covariance) -> Covariance:
        if other.torus != self.torus:
            raise CovarianceError("covariances on different tori")
        ent = dict(self.entries)
        for r, v in other.entries.items():
            ent[r] = ent.get(r, 0) + v
        return Covariance(self.torus, max(self.scale, other.scale), ent, check_range=False)

    def min_eigenvalue(self) -> float:
        import numpy as np

        m = np.array([[complex(v) for v in row] for row in self.matrix()])
        return float(np.linalg.eigvalsh(m).min())

    def is_psd(self, tol: float = 1e-12) -> bool:
        return self.min_eigenvalue() >= -tol

    def to_json(self) -> dict:
        out = []
        for r, v in sorted(self.entries.items()):
            if isinstance(v, complex):
                out.append([list(r), v.real, v.imag])
            else:
                out.append([list(r), str(v), "0"])
        return {"j": self.scale, "entries": out}

    @classmethod
    def from_json(cls, torus: Torus, doc: dict, check_psd: bool = False) -> Covariance:
        ent = {}
        for disp, re, im in doc["entries"]:
            re, im = Fraction(str(re)), Fraction(str(im))
            ent[tuple(disp)] = complex(re, im) if im else re
        C = cls(torus, int(doc["j"]), ent)
        if check_psd and not C.is_psd():
            raise CovarianceError("covariance is not positive semidefinite")
        return C


def toy_amplitude(torus: Torus, j: int, m2) -> Fraction:
    m2 = Fraction(m2)
    return Fraction(1) / (1 + m2 * torus.L ** (2 * j)) / Fraction(torus.L) ** ((torus.d - 2) * j)


def toy_covariance(torus: Torus, j: int, m2=0) -> Covariance:
    """Amplitude times the autocorrelation of the indicator of [0, w)^d, divided by w^d.

    w is the largest width with w - 1 < L^j / 2, so the kernel vanishes at
    distance >= L^j / 2 and is positive semidefinite.
    """
    if j < 1:
        raise CovarianceError("toy covariances start at scale 1")
    width = -(-torus.L**j // 2)  # ceil(L^j / 2)
    amp = toy_amplitude(torus, j, m2)
    span = range(-(width - 1), width)
    ent = {}
    for r in itertools.product(span, repeat=torus.d):
        overlap = 1
        for c in r:
            overlap *= width - abs(c)
        ent[r] = amp * Fraction(overlap, width**torus.d)
    return Covariance(torus, j, ent)


@dataclass
class CovarianceDecomposition:
    torus: Torus
    slices: list
    m2: Fraction = Fraction(0)

    def at(self, j: int) -> Covariance:
        return self.slices[j - 1]

    def total(self) -> Covariance:
        out = self.slices[0]
        for c in self.slices[1:]:
            out = out + c
        return out


def make_toy_decomposition(torus: Torus, m2=0) -> CovarianceDecomposition:
    if Fraction(m2) < 0:
        raise CovarianceError("mass squared must be non-negative")
    return CovarianceDecomposition(torus, [toy_covariance(torus, j, m2) for j in range(1, torus.N + 1)],
                                   Fraction(m2))


# heat operator


class Expectation:
    """exp(Lap_C) on one field space, with a per-monomial cache."""

    def __init__(self, C: Covariance, space: FieldSpace):
        self.C = C
        self.space = space
        rows = C.rows()
        co = space.coerce
        self.rows = [[(v, co(c)) for v, c in row] for row in rows]
        self._col = [dict(r) for r in self.rows]
        self._cache: dict = {}
        self.strip = space.wmask | 3
        self.two_w = space.w_key(2)

    def _contract_once(self, key: int):
        """Lap_C applied to one packed monomial: list of (key, coefficient)."""
        sp = self.space
        sector, w, ferm, bos = sp.decode(key)
        out = []
        col = self._col
        if bos:
            for iu, eu in bos:
                if iu & 1:
                    continue
                u = iu >> 1
                cu = col[u]
                for iv, ev in bos:
                    if not iv & 1:
                        continue
                    c = cu.get(iv >> 1)
                    if c is None:
                        continue
                    nk = key - sp.boson_unit(u, 0) - sp.boson_unit(iv >> 1, 1) + self.two_w
                    out.append((nk, c * (eu * ev)))
        if len(ferm) >= 2:
            fo = sp.foff
            for pv, gv in enumerate(ferm):
                if not gv & 1:
                    continue
                v = gv >> 1
                for pu, gu in enumerate(ferm):
                    if gu & 1:
                        continue
                    c = col[gu >> 1].get(v)
                    if c is None:
                        continue
                    # d/dpsibar_v first, then d/dpsi_u in the shortened word
                    pos_u = pu if pu < pv else pu - 1
                    sign = -1 if (pv + pos_u) & 1 else 1
                    nk = key - (1 << (fo + gv)) - (1 << (fo + gu)) + self.two_w
                    out.append((nk, c if sign > 0 else -c))
        return out

    def _heat_monomial(self, key: int) -> list:
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        sp = self.space
        one = sp.coerce(1)
        total = {key: one}
        level = {key: one}
        k = 0
        while level:
            k += 1
            nxt: dict = {}
            for mk, mc in level.items():
                for nk, c in self._contract_once(mk):
                    v = nxt.get(nk)
                    c = c * mc
                    nxt[nk] = c if v is None else v + c
            inv = sp.coerce(Fraction(1, k)) if sp.mode != "complex" else 1.0 / k
            level = {kk: c * inv for kk, c in nxt.items() if c}
            for kk, c in level.items():
                v = total.get(kk)
                total[kk] = c if v is None else v + c
        out = [(kk, c) for kk, c in total.items() if c]
        self._cache[key] = out
        return out

    def theta(self, F: FieldElement) -> FieldElement:
        """E_C theta F: integrate the fluctuation field, keep external fields."""
        sp = self.space
        if not sp.compatible(F.space):
            raise CovarianceError("element and expectation use different field spaces")
        strip = self.strip
        parts: dict = {}
        for g, bucket in F.parts.items():
            tgt: dict = {}
            for k, c in bucket.items():
                extra = k & strip
                for rk, rc in self._heat_monomial(k & ~strip):
                    nk = rk + extra
                    v = tgt.get(nk)
                    x = rc * c
                    tgt[nk] = x if v is None else v + x
            tgt = {k: c for k, c in tgt.items() if c}
            if tgt:
                parts[g] = tgt
        return FieldElement(sp, parts)

    def full(self, F: FieldElement) -> FieldElement:
        """E_C F: the fluctuation integral with all external fields then set to zero."""
        return self.theta(F).at_zero_field()


class DoubledFields:
    """The field and an independent fluctuation field side by side.

    Sites 0..n-1 carry the external field and sites n..2n-1 the fluctuation.
    ``theta`` shifts every external field by its fluctuation partner and
    ``integrate`` contracts fluctuation pairs only, then sets the fluctuation to
    zero.  This is a direct realisation of E_C theta that does not go through the
    heat operator on a single copy of the fields.
    """

    def __init__(self, C: Covariance, space: FieldSpace):
        self.C = C
        self.base = space
        self.n = space.n_sites
        self.space = FieldSpace(2 * self.n, space.p, space.mode, space.torus)
        co = self.space.coerce
        n = self.n
        cols = [dict() for _ in range(2 * n)]
        for u, row in enumerate(C.rows()):
            cols[u + n] = {v + n: co(c) for v, c in row}
        self._engine = Expectation.__new__(Expectation)
        eng = self._engine
        eng.C = C
        eng.space = self.space
        eng._col = cols
        eng.rows = [sorted(c.items()) for c in cols]
        eng._cache = {}
        eng.strip = self.space.wmask | 3
        eng.two_w = self.space.w_key(2)
        fl = 0
        for x in range(n, 2 * n):
            fl |= self.space.fermion_bit(x, 0) | self.space.fermion_bit(x, 1)
            fl |= (self.space.boson_unit(x, 0) | self.space.boson_unit(x, 1)) * self.space.emask
        self._fluct_mask = fl

    def lift(self, F: FieldElement) -> FieldElement:
        """F as a function of the external field only."""
        return F.relabel(lambda x: x, self.space)

    def theta(self, F: FieldElement) -> FieldElement:
        sp, src, n = self.space, F.space, self.n
        out = sp.zero()
        for k, c in F.terms():
            sector, w, ferm, bos = src.decode(k)
            term = sp.element({sector | sp.w_key(w): c})
            for g in ferm:
                x, bar = g >> 1, g & 1
                gen = sp.psibar if bar else sp.psi
                term = term * (gen(x) + gen(x + n))
            for i, e in bos:
                x, bar = i >> 1, i & 1
                gen = sp.phibar if bar else sp.phi
                term = term * (gen(x) + gen(x + n)) ** e
            out = out + term
        return out

    def integrate(self, F: FieldElement) -> FieldElement:
        """Contract the fluctuation field, set it to zero, return to the base space."""
        H = self._engine.theta(F)
        fl = self._fluct_mask
        H = H.filter(lambda k: not k & fl)
        return H.relabel(lambda x: x, self.base)


_ENGINES: dict = {}


def engine(C: Covariance, space: FieldSpace) -> Expectation:
    key = (id(C), id(space))
    e = _ENGINES.get(key)
    if e is None or e.C is not C or e.space is not space:
        e = _ENGINES[key] = Expectation(C, space)
    return e


def expect_theta(C: Covariance, F: FieldElement) -> FieldElement:
    return engine(C, F.space).theta(F)


def expect(C: Covariance, F: FieldElement) -> FieldElement:
    return engine(C, F.space).full(F)


def truncated_pair_expectation(C: Covariance, A: FieldElement, B: FieldElement) -> FieldElement:
    """E theta (A; B) = E theta (AB) - (E theta A)(E theta B)."""
    e = engine(C, A.space)
    return e.theta(A * B) - e.theta(A) * e.theta(B)


def verify_factorization(C: Covariance, F1: FieldElement, F2: FieldElement) -> bool:
    e = engine(C, F1.space)
    return e.theta(F1 * F2) == e.theta(F1) * e.theta(F2)


def supersymmetry_residual(C: Covariance, F: FieldElement) -> FieldElement:
    """E F - F|_0; vanishes for polynomials in the tau's."""
    return expect(C, F) - F.at_zero_field()


def progressive_expectation(decomp: CovarianceDecomposition | Sequence[Covariance], F: FieldElement,
                            keep_fields: bool = True) -> FieldElement:
    slices = decomp.slices if isinstance(decomp, CovarianceDecomposition) else list(decomp)
    out = F
    for C in slices:
        out = expect_theta(C, out)
    return out if keep_fields else out.at_zero_field()


# independent oracles for Wick's theorem


def permanent(matrix: list[list]) -> object:
    n = len(matrix)
    if n == 0:
        return 1
    total = 0
    for perm in itertools.permutations(range(n)):
        prod = 1
        for i, j in enumerate(perm):
            prod = prod * matrix[i][j]
            if not prod:
                break
        total = total + prod
    return total


def determinant(matrix: list[list]) -> object:
    n = len(matrix)
    if n == 0:
        return 1
    total = 0
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        prod = -1 if inv & 1 else 1
        for i, j in enumerate(perm):
            prod = prod * matrix[i][j]
            if not prod:
                break
        total = total + prod
    return total


def boson_moment_oracle(C: Covariance, xs: Sequence[int], ys: Sequence[int]):
    """E[phi_{x1}..phi_{xk} phibar_{y1}..phibar_{yk}] as a permanent."""
    if len(xs) != len(ys):
        return 0
    return permanent([[C.value(x, y) for y in ys] for x in xs])


def fermion_moment_oracle(C: Covariance, xs: Sequence[int], ys: Sequence[int]):
    """E[psi_{x1} psibar_{y1} psi_{x2} psibar_{y2} ...] = det[-C(x_i, y_j)]."""
    if len(xs) != len(ys):
        return 0
    return determinant([[-C.value(x, y) for y in ys] for x in xs])
