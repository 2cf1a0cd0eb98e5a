"""Truncated boson/fermion/observable polynomials with exact coefficients.

A monomial is packed into one Python int.  From the low bits up:

* two observable bits (``sigma`` at bit 0, ``sigma_bar`` at bit 1);
* a contraction weight ``w`` counting how many fields were removed by Gaussian
  pairing.  It carries no field content but adds to the grade, so that
  expectation preserves the grade and truncation stays a ring homomorphism;
* one bit per fermion generator, ordered psi_0, psibar_0, psi_1, psibar_1, ...;
* one small exponent field per boson, ordered phi_0, phibar_0, phi_1, ...

The grade of a monomial is boson degree + fermion degree + w.  Products whose
grade exceeds ``p`` are dropped.  Multiplying two packed monomials is integer
addition once overlaps (repeated fermion, repeated observable) are excluded.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from gmpy2 import mpq

SECTORS = ("∅", "a", "b", "ab")
_SECTOR_BITS = {"∅": 0, "": 0, "0": 0, "a": 1, "b": 2, "ab": 3}


class TruncationMismatch(ValueError):
    pass


class GaussianRational:
    """Exact complex number with rational real and imaginary parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = mpq(re)
        self.im = mpq(im)

    @staticmethod
    def lift(x) -> GaussianRational:
        if isinstance(x, GaussianRational):
            return x
        if isinstance(x, complex):
            return GaussianRational(Fraction(x.real), Fraction(x.imag))
        return GaussianRational(x, 0)

    def __add__(self, o):
        o = GaussianRational.lift(o)
        return GaussianRational(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self):
        return GaussianRational(-self.re, -self.im)

    def __sub__(self, o):
        return self + (-GaussianRational.lift(o))

    def __rsub__(self, o):
        return GaussianRational.lift(o) - self

    def __mul__(self, o):
        o = GaussianRational.lift(o)
        return GaussianRational(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = GaussianRational.lift(o)
        den = o.re * o.re + o.im * o.im
        return self * GaussianRational(o.re / den, -o.im / den)

    def __rtruediv__(self, o):
        return GaussianRational.lift(o) / self

    def __eq__(self, o):
        try:
            o = GaussianRational.lift(o)
        except TypeError:
            return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __abs__(self):
        return math.hypot(float(self.re), float(self.im))

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        return f"({self.re}{'+' if self.im >= 0 else '-'}{abs(self.im)}i)"


def _to_mpq(x):
    if isinstance(x, GaussianRational):
        if x.im:
            raise TypeError("complex value in the exact rational mode")
        return x.re
    if isinstance(x, complex):
        if x.imag:
            raise TypeError("complex value in the exact rational mode")
        x = x.real
    if isinstance(x, float):
        return mpq(Fraction(x))
    return mpq(x)


_COERCE = {
    "exact": _to_mpq,
    "gaussian": GaussianRational.lift,
    "complex": lambda x: complex(x) if not isinstance(x, GaussianRational) else complex(x),
}


class FieldSpace:
    """Packing layout and shared caches for one set of sites and one truncation."""

    def __init__(self, n_sites: int, p: int = 4, coefficients: str = "exact", torus=None):
        if coefficients not in _COERCE:
            raise ValueError(f"unknown coefficient mode {coefficients!r}")
        if p < 0:
            raise ValueError("truncation must be non-negative")
        self.n_sites = n_sites
        self.p = p
        self.mode = coefficients
        self.torus = torus
        self.coerce = _COERCE[coefficients]
        self.wbits = max(p.bit_length(), 1)
        self.woff = 2
        self.wmask = ((1 << self.wbits) - 1) << self.woff
        self.foff = self.woff + self.wbits
        self.nferm = 2 * n_sites
        self.fmask = (1 << self.nferm) - 1
        self.boff = self.foff + self.nferm
        self.ebits = max(p.bit_length(), 1)
        self.emask = (1 << self.ebits) - 1
        # fermion bits and observable bits may not repeat in a product
        self.overlap = (self.fmask << self.foff) | 3
        self.field_mask = ~((1 << self.foff) - 1)
        self._signs: dict = {}
        self._decoded: dict = {}
        self.one_coef = self.coerce(1)

    def compatible(self, other: FieldSpace) -> bool:
        return self is other or (self.n_sites == other.n_sites and self.p == other.p
                                 and self.mode == other.mode)

    # packing

    def w_key(self, w: int) -> int:
        return w << self.woff

    def fermion_bit(self, site: int, bar: int) -> int:
        return 1 << (self.foff + 2 * site + bar)

    def boson_unit(self, site: int, bar: int) -> int:
        return 1 << (self.boff + self.ebits * (2 * site + bar))

    def sector_of(self, key: int) -> int:
        return key & 3

    def weight_of(self, key: int) -> int:
        return (key & self.wmask) >> self.woff

    def fermion_bits(self, key: int) -> int:
        return (key >> self.foff) & self.fmask

    def fermion_sign(self, fa: int, fb: int) -> int:
        """Sign from reordering (A-word)(B-word) into increasing generator order."""
        k = (fa, fb)
        s = self._signs.get(k)
        if s is None:
            n = 0
            m = fb
            while m:
                low = m & -m
                n += bin(fa >> low.bit_length()).count("1")
                m ^= low
            s = -1 if n & 1 else 1
            self._signs[k] = s
        return s

    def decode(self, key: int):
        """(sector bits, w, fermion generator indices, ((boson field index, exponent), ...))."""
        out = self._decoded.get(key)
        if out is not None:
            return out
        f = self.fermion_bits(key)
        ferm = []
        while f:
            low = f & -f
            ferm.append(low.bit_length() - 1)
            f ^= low
        bos = []
        b = key >> self.boff
        idx = 0
        while b:
            e = b & self.emask
            if e:
                bos.append((idx, e))
            b >>= self.ebits
            idx += 1
        out = (key & 3, self.weight_of(key), tuple(ferm), tuple(bos))
        self._decoded[key] = out
        return out

    def grade_of(self, key: int) -> int:
        _, w, ferm, bos = self.decode(key)
        return w + len(ferm) + sum(e for _, e in bos)

    def field_degree(self, key: int) -> int:
        _, _, ferm, bos = self.decode(key)
        return len(ferm) + sum(e for _, e in bos)

    def encode(self, sector: int = 0, w: int = 0, fermions=(), bosons=()) -> tuple[int, int]:
        """Pack a monomial; returns (sign, key) with sign from sorting the fermion word.

        ``fermions`` is a word of generator indices (2*site + bar) in the given order;
        ``bosons`` an iterable of (field index, exponent).  Returns (0, 0) for a
        vanishing word.
        """
        if w > self.p:
            return 0, 0
        key = sector | self.w_key(w)
        fb = 0
        sign = 1
        for g in fermions:
            bit = 1 << g
            if fb & bit:
                return 0, 0
            # moving the new generator left past the larger ones already placed
            if bin(fb >> (g + 1)).count("1") & 1:
                sign = -sign
            fb |= bit
        key |= fb << self.foff
        for idx, e in bosons:
            if e > self.p:
                return 0, 0
            key += e << (self.boff + self.ebits * idx)
        return sign, key

    def element(self, terms: dict | None = None) -> FieldElement:
        out = FieldElement(self)
        if terms:
            for k, c in terms.items():
                out._add_term(k, self.coerce(c))
        return out

    # generators

    def const(self, c=1) -> FieldElement:
        return self.element({0: c})

    def zero(self) -> FieldElement:
        return FieldElement(self)

    def _gen(self, key) -> FieldElement:
        return self.element({key: 1})

    def phi(self, x: int) -> FieldElement:
        return self._gen(self.boson_unit(x, 0))

    def phibar(self, x: int) -> FieldElement:
        return self._gen(self.boson_unit(x, 1))

    def psi(self, x: int) -> FieldElement:
        return self._gen(self.fermion_bit(x, 0))

    def psibar(self, x: int) -> FieldElement:
        return self._gen(self.fermion_bit(x, 1))

    def sigma(self) -> FieldElement:
        return self._gen(1)

    def sigmabar(self) -> FieldElement:
        return self._gen(2)

    def weight(self, w: int) -> FieldElement:
        return self._gen(self.w_key(w))

    def monomial_key(self, phi=(), phibar=(), psi=(), psibar=(), sector="∅", w: int = 0) -> tuple[int, int]:
        """(sign, key) of phi^.. phibar^.. psi_{x1}..psi_{xk} psibar_{y1}..psibar_{yk}."""
        bos = {}
        for x in phi:
            bos[2 * x] = bos.get(2 * x, 0) + 1
        for x in phibar:
            bos[2 * x + 1] = bos.get(2 * x + 1, 0) + 1
        word = [2 * x for x in psi] + [2 * x + 1 for x in psibar]
        return self.encode(_SECTOR_BITS[sector], w, word, bos.items())

    def monomial(self, coef=1, **kw) -> FieldElement:
        sign, key = self.monomial_key(**kw)
        if sign == 0:
            return self.zero()
        return self.element({key: self.coerce(coef) * sign})


def _clean(d: dict) -> dict:
    return {k: c for k, c in d.items() if c}


class FieldElement:
    """Element of the truncated algebra: grade -> {packed monomial: coefficient}."""

    __slots__ = ("space", "parts")

    def __init__(self, space: FieldSpace, parts: dict | None = None):
        self.space = space
        self.parts = parts if parts is not None else {}

    # construction helpers

    def _add_term(self, key: int, c):
        if not c:
            return
        g = self.space.grade_of(key)
        if g > self.space.p:
            return
        bucket = self.parts.setdefault(g, {})
        v = bucket.get(key)
        v = c if v is None else v + c
        if v:
            bucket[key] = v
        else:
            del bucket[key]
            if not bucket:
                del self.parts[g]

    @classmethod
    def from_terms(cls, space: FieldSpace, items: Iterable) -> FieldElement:
        out = cls(space)
        for k, c in items:
            out._add_term(k, c)
        return out

    def copy(self) -> FieldElement:
        return FieldElement(self.space, {g: dict(b) for g, b in self.parts.items()})

    # inspection

    def terms(self):
        for bucket in self.parts.values():
            yield from bucket.items()

    def items_sorted(self):
        return sorted(self.terms())

    def __len__(self) -> int:
        return sum(len(b) for b in self.parts.values())

    def is_zero(self) -> bool:
        return not self.parts

    def __bool__(self) -> bool:
        return bool(self.parts)

    def coefficient(self, key: int, collapse_weight: bool = True):
        """Coefficient of a packed monomial; by default summed over contraction weight."""
        sp = self.space
        if not collapse_weight:
            g = sp.grade_of(key)
            return self.parts.get(g, {}).get(key, sp.coerce(0))
        base = key & ~sp.wmask
        total = sp.coerce(0)
        for k, c in self.terms():
            if k & ~sp.wmask == base:
                total = total + c
        return total

    def max_grade(self) -> int:
        return max(self.parts) if self.parts else -1

    def min_grade(self) -> int:
        return min(self.parts) if self.parts else self.space.p + 1

    def sites(self) -> set:
        sp = self.space
        out = set()
        for k, _ in self.terms():
            _, _, ferm, bos = sp.decode(k)
            out.update(g >> 1 for g in ferm)
            out.update(i >> 1 for i, _ in bos)
        return out

    def sectors(self) -> set:
        return {SECTORS[k & 3] for k, _ in self.terms()}

    # arithmetic

    def _check(self, other: FieldElement):
        if not self.space.compatible(other.space):
            raise TruncationMismatch("elements belong to different field spaces")

    def __add__(self, other):
        if not isinstance(other, FieldElement):
            other = self.space.const(other)
        self._check(other)
        parts = {g: dict(b) for g, b in self.parts.items()}
        for g, b in other.parts.items():
            tgt = parts.get(g)
            if tgt is None:
                parts[g] = dict(b)
                continue
            for k, c in b.items():
                v = tgt.get(k)
                if v is None:
                    tgt[k] = c
                else:
                    v = v + c
                    if v:
                        tgt[k] = v
                    else:
                        del tgt[k]
            if not tgt:
                del parts[g]
        return FieldElement(self.space, parts)

    __radd__ = __add__

    def __neg__(self):
        return FieldElement(self.space, {g: {k: -c for k, c in b.items()} for g, b in self.parts.items()})

    def __sub__(self, other):
        if not isinstance(other, FieldElement):
            other = self.space.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c) -> FieldElement:
        c = self.space.coerce(c)
        if not c:
            return FieldElement(self.space)
        return FieldElement(self.space, {g: _clean({k: v * c for k, v in b.items()})
                                         for g, b in self.parts.items()})

    def __mul__(self, other):
        if not isinstance(other, FieldElement):
            return self.scale(other)
        self._check(other)
        return FieldElement(self.space, _multiply(self.space, self.parts, other.parts))

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, n: int):
        out = self.space.const(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, FieldElement):
            return self == self.space.const(other)
        if self.space.mode == "complex" or other.space.mode == "complex":
            return self.close_to(other)
        return self.parts == other.parts

    def __hash__(self):
        return hash(tuple(self.items_sorted()))

    def close_to(self, other: FieldElement, tol: float = 1e-9) -> bool:
        diff = self - other
        return all(abs(c) <= tol for _, c in diff.terms())

    # structural maps

    def filter(self, keep) -> FieldElement:
        """Terms whose key satisfies ``keep(key)``."""
        parts = {}
        for g, b in self.parts.items():
            nb = {k: c for k, c in b.items() if keep(k)}
            if nb:
                parts[g] = nb
        return FieldElement(self.space, parts)

    def project(self, sector: str) -> FieldElement:
        if sector == "*":
            return self.filter(lambda k: k & 3 != 0)
        s = _SECTOR_BITS[sector]
        return self.filter(lambda k: k & 3 == s)

    def at_zero_field(self) -> FieldElement:
        """F|_0: every boson and fermion set to zero (observables and weight kept)."""
        fm = self.space.field_mask
        return self.filter(lambda k: not k & fm)

    def constant_part(self, sector: str = "∅"):
        """Coefficient of the field-free monomial in a sector, summed over weight."""
        return self.coefficient(_SECTOR_BITS[sector])

    def collapse_weight(self) -> FieldElement:
        """Forget the contraction weight (sum coefficients over w)."""
        sp = self.space
        out = FieldElement(sp)
        for k, c in self.terms():
            out._add_term(k & ~sp.wmask, c)
        return out

    def strip_sector(self) -> FieldElement:
        out = FieldElement(self.space)
        for k, c in self.terms():
            out._add_term(k & ~3, c)
        return out

    def map_keys(self, fn, target: FieldSpace | None = None) -> FieldElement:
        """Apply ``fn(key) -> (sign, new_key)`` termwise into ``target``."""
        sp = target or self.space
        out = FieldElement(sp)
        for k, c in self.terms():
            s, nk = fn(k)
            if s:
                out._add_term(nk, c if s > 0 else -c)
        return out

    def relabel(self, site_map, target: FieldSpace | None = None) -> FieldElement:
        """Move every field from site x to site_map[x] (a dict or callable)."""
        src = self.space
        tgt = target or src
        get = site_map.__getitem__ if hasattr(site_map, "__getitem__") else site_map

        def move(k):
            sector, w, ferm, bos = src.decode(k)
            word = [2 * get(g >> 1) + (g & 1) for g in ferm]
            nb = [(2 * get(i >> 1) + (i & 1), e) for i, e in bos]
            return tgt.encode(sector, w, word, nb)

        return self.map_keys(move, tgt)

    def conjugate_coefficients(self) -> FieldElement:
        if self.space.mode == "exact":
            return self
        out = FieldElement(self.space)
        for k, c in self.terms():
            if isinstance(c, GaussianRational):
                c = GaussianRational(c.re, -c.im)
            else:
                c = c.conjugate()
            out._add_term(k, c)
        return out

    def to_json(self) -> list:
        sp = self.space
        out = []
        for k, c in self.items_sorted():
            sector, w, ferm, bos = sp.decode(k)
            bosons = []
            for i, e in bos:
                bosons.extend([[i >> 1, i & 1]] * e)
            entry = {
                "bosons": bosons,
                "fermions": [[g >> 1, g & 1] for g in ferm],
                "sector": SECTORS[sector],
                "w": w,
            }
            entry.update(_coef_json(c))
            out.append(entry)
        return out

    @classmethod
    def from_json(cls, space: FieldSpace, doc: list) -> FieldElement:
        out = cls(space)
        for t in doc:
            bos = {}
            for site, bar in t["bosons"]:
                bos[2 * site + bar] = bos.get(2 * site + bar, 0) + 1
            word = [2 * site + bar for site, bar in t["fermions"]]
            sign, key = space.encode(_SECTOR_BITS[t["sector"]], t.get("w", 0), word, bos.items())
            c = _coef_from_json(space, t)
            if sign:
                out._add_term(key, c if sign > 0 else -c)
        return out

    def __repr__(self):
        if not self.parts:
            return "0"
        shown = [f"{c}*{describe_key(self.space, k)}" for k, c in self.items_sorted()[:12]]
        more = "" if len(self) <= 12 else f" + ...({len(self)} terms)"
        return " + ".join(shown) + more


def _coef_json(c) -> dict:
    if isinstance(c, GaussianRational):
        return {"re": str(c.re), "im": str(c.im)}
    if isinstance(c, complex):
        return {"re": c.real, "im": c.imag}
    if isinstance(c, float):
        return {"re": c, "im": 0.0}
    return {"re": str(c), "im": "0"}


def _coef_from_json(space: FieldSpace, t: dict):
    re, im = t.get("re", 0), t.get("im", 0)
    if isinstance(re, str):
        re, im = Fraction(re), Fraction(im)
    if space.mode == "exact":
        if im:
            raise TypeError("imaginary part in the exact rational mode")
        return mpq(re)
    if space.mode == "gaussian":
        return GaussianRational(re, im)
    return complex(float(re), float(im))


def describe_key(space: FieldSpace, key: int) -> str:
    sector, w, ferm, bos = space.decode(key)
    parts = []
    for i, e in bos:
        name = ("phibar" if i & 1 else "phi") + f"_{i >> 1}"
        parts.append(name if e == 1 else f"{name}^{e}")
    for g in ferm:
        parts.append(("psibar" if g & 1 else "psi") + f"_{g >> 1}")
    if sector & 1:
        parts.append("sigma")
    if sector & 2:
        parts.append("sigmabar")
    if w:
        parts.append(f"[w{w}]")
    return "*".join(parts) or "1"


def _multiply(sp: FieldSpace, A: dict, B: dict) -> dict:
    p = sp.p
    ovl = sp.overlap
    foff, fmask = sp.foff, sp.fmask
    sign_of = sp.fermion_sign
    out: dict = {}
    for ga, da in A.items():
        for gb, db in B.items():
            g = ga + gb
            if g > p:
                continue
            tgt = out.get(g)
            if tgt is None:
                tgt = out[g] = {}
            get = tgt.get
            for ka, ca in da.items():
                fa = (ka >> foff) & fmask
                for kb, cb in db.items():
                    if ka & kb & ovl:
                        continue
                    c = ca * cb
                    if fa:
                        fb = (kb >> foff) & fmask
                        if fb and sign_of(fa, fb) < 0:
                            c = -c
                    k = ka + kb
                    v = get(k)
                    tgt[k] = c if v is None else v + c
    for g in list(out):
        b = _clean(out[g])
        if b:
            out[g] = b
        else:
            del out[g]
    return out


def product(items: Iterable[FieldElement], space: FieldSpace) -> FieldElement:
    out = space.const(1)
    for f in items:
        out = out * f
    return out


def exp_truncated(F: FieldElement) -> FieldElement:
    """Truncated exponential; the field-free part of F must vanish outside the observable sectors.

    Observable-only terms (sigma, sigma_bar) are nilpotent, and every other term
    raises the grade, so the series terminates.
    """
    sp = F.space
    c0 = F.coefficient(0, collapse_weight=False)
    if c0:
        if sp.mode != "complex":
            raise ValueError("exact exponential needs a vanishing constant term")
        return exp_truncated(F - sp.const(c0)).scale(cmath.exp(complex(c0)))
    out = sp.const(1)
    term = sp.const(1)
    k = 0
    while True:
        k += 1
        term = (term * F).scale(mpq(1, k) if sp.mode != "complex" else 1.0 / k)
        if term.is_zero():
            return out
        out = out + term
        if k > 4 * (sp.p + 2):
            raise RuntimeError("exponential series failed to terminate")


def inverse_truncated(F: FieldElement) -> FieldElement:
    """1/F for F with invertible constant term, by the geometric series."""
    sp = F.space
    c0 = F.coefficient(0, collapse_weight=False)
    if not c0:
        raise ZeroDivisionError("constant term vanishes")
    inv0 = sp.coerce(1) / c0 if sp.mode != "exact" else mpq(1) / c0
    N = sp.const(1) - F.scale(inv0)  # nilpotent part
    out = sp.const(1)
    term = sp.const(1)
    for _ in range(4 * (sp.p + 2)):
        term = term * N
        if term.is_zero():
            return out.scale(inv0)
        out = out + term
    raise RuntimeError("inverse series failed to terminate")


# tau polynomials and the coupling polynomial


def _site(torus, x):
    if isinstance(x, int):
        return x
    return torus.index(x)


def _neighbors(torus, x: int) -> list[int]:
    return [torus.index(y) for y in torus.neighbors(torus.coords(x))]


def tau(space: FieldSpace, x: int) -> FieldElement:
    return space.phi(x) * space.phibar(x) + space.psi(x) * space.psibar(x)


def tau_pair(space: FieldSpace, x: int, y: int) -> FieldElement:
    """phi_x phibar_y + psi_x psibar_y."""
    return space.phi(x) * space.phibar(y) + space.psi(x) * space.psibar(y)


def minus_laplacian(space: FieldSpace, torus, gen, x: int) -> FieldElement:
    """(-Delta f)_x = 2d f_x - sum_e f_{x+e} for a generator family ``gen``."""
    out = gen(x).scale(2 * torus.d)
    for y in _neighbors(torus, x):
        out = out - gen(y)
    return out


def tau_nabla_nabla(space: FieldSpace, torus, x) -> FieldElement:
    """1/2 sum_e [(grad_e phi)_x (grad_e phibar)_x + (grad_e psi)_x (grad_e psibar)_x]."""
    x = _site(torus, x)
    out = space.zero()
    for y in _neighbors(torus, x):
        dphi = space.phi(y) - space.phi(x)
        dphibar = space.phibar(y) - space.phibar(x)
        dpsi = space.psi(y) - space.psi(x)
        dpsibar = space.psibar(y) - space.psibar(x)
        out = out + dphi * dphibar + dpsi * dpsibar
    return out.scale(mpq(1, 2) if space.mode != "complex" else 0.5)


def tau_Delta(space: FieldSpace, torus, x) -> FieldElement:
    """1/2 [(-Delta phi)_x phibar_x + phi_x (-Delta phibar)_x + same for psi]."""
    x = _site(torus, x)
    lap = lambda gen: minus_laplacian(space, torus, gen, x)
    out = (lap(space.phi) * space.phibar(x) + space.phi(x) * lap(space.phibar)
           + lap(space.psi) * space.psibar(x) + space.psi(x) * lap(space.psibar))
    return out.scale(mpq(1, 2) if space.mode != "complex" else 0.5)


def tau_site(space: FieldSpace, torus, x) -> FieldElement:
    return tau(space, _site(torus, x))


@dataclass(frozen=True)
class CouplingConstants:
    g: object = 0
    nu: object = 0
    z: object = 0
    y: object = 0
    lam_a: object = 0
    lam_b: object = 0
    q_a: object = 0
    q_b: object = 0

    NAMES = ("g", "nu", "z", "y", "lam_a", "lam_b", "q_a", "q_b")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, n) for n in self.NAMES)

    def __add__(self, o: CouplingConstants) -> CouplingConstants:
        return CouplingConstants(*(a + b for a, b in zip(self.as_tuple(), o.as_tuple())))

    def __sub__(self, o: CouplingConstants) -> CouplingConstants:
        return CouplingConstants(*(a - b for a, b in zip(self.as_tuple(), o.as_tuple())))

    def __neg__(self):
        return CouplingConstants(*(-a for a in self.as_tuple()))

    def scaled(self, c) -> CouplingConstants:
        return CouplingConstants(*(c * a for a in self.as_tuple()))

    def replace(self, **kw) -> CouplingConstants:
        vals = dict(zip(self.NAMES, self.as_tuple()))
        vals.update(kw)
        return CouplingConstants(**vals)

    def in_subspace(self, level: int) -> bool:
        """level 0: y = q_a = q_b = 0; level 1: y = 0."""
        if level == 0:
            return not self.y and not self.q_a and not self.q_b
        if level == 1:
            return not self.y
        raise ValueError("subspace level must be 0 or 1")

    def bulk_only(self) -> CouplingConstants:
        return CouplingConstants(self.g, self.nu, self.z, self.y)

    def to_json(self) -> dict:
        return {n: _coef_json(v) for n, v in zip(self.NAMES, self.as_tuple())}

    @classmethod
    def from_json(cls, doc: dict) -> CouplingConstants:
        vals = {}
        for n in cls.NAMES:
            v = doc.get(n, 0)
            if isinstance(v, dict):
                re, im = Fraction(str(v.get("re", 0))), Fraction(str(v.get("im", 0)))
                v = GaussianRational(re, im) if im else mpq(re)
            elif isinstance(v, str):
                v = mpq(Fraction(v))
            elif isinstance(v, (int, float)):
                v = mpq(Fraction(v))
            vals[n] = v
        return cls(**vals)


class PolynomialCache:
    """Per-space cache of the site polynomials tau_x, tau_x^2, tau_Delta,x and tau_grad,x."""

    def __init__(self, space: FieldSpace, torus):
        self.space = space
        self.torus = torus
        self._tau: dict = {}
        self._tau2: dict = {}
        self._lap: dict = {}
        self._grad: dict = {}

    def tau(self, x):
        if x not in self._tau:
            self._tau[x] = tau(self.space, x)
        return self._tau[x]

    def tau2(self, x):
        if x not in self._tau2:
            t = self.tau(x)
            self._tau2[x] = t * t
        return self._tau2[x]

    def tau_Delta(self, x):
        if x not in self._lap:
            self._lap[x] = tau_Delta(self.space, self.torus, x)
        return self._lap[x]

    def tau_nabla_nabla(self, x):
        if x not in self._grad:
            self._grad[x] = tau_nabla_nabla(self.space, self.torus, x)
        return self._grad[x]


_POLY_CACHES: dict = {}


def polynomial_cache(space: FieldSpace, torus) -> PolynomialCache:
    key = (id(space), torus)
    pc = _POLY_CACHES.get(key)
    if pc is None or pc.space is not space:
        pc = _POLY_CACHES[key] = PolynomialCache(space, torus)
    return pc


def V_site(v: CouplingConstants, x, torus, space: FieldSpace) -> FieldElement:
    x = _site(torus, x)
    pc = polynomial_cache(space, torus)
    c = space.coerce
    out = space.zero()
    if v.g:
        out = out + pc.tau2(x).scale(c(v.g))
    if v.nu:
        out = out + pc.tau(x).scale(c(v.nu))
    if v.z:
        out = out + pc.tau_Delta(x).scale(c(v.z))
    if v.y:
        out = out + pc.tau_nabla_nabla(x).scale(c(v.y))
    a = torus.index(torus.a) if torus.a is not None else None
    b = torus.index(torus.b) if torus.b is not None else None
    if x == a and v.lam_a:
        out = out + (space.sigma() * space.phibar(x)).scale(-c(v.lam_a))
    if x == b and v.lam_b:
        out = out + (space.sigmabar() * space.phi(x)).scale(-c(v.lam_b))
    q = c(0)
    if x == a:
        q = q + c(v.q_a)
    if x == b:
        q = q + c(v.q_b)
    if q:
        half = mpq(1, 2) if space.mode != "complex" else 0.5
        out = out + (space.sigma() * space.sigmabar()).scale(-q * half)
    return out


def V_of(v: CouplingConstants, X: Iterable, torus, space: FieldSpace) -> FieldElement:
    """V(X) = sum over sites x in X of V_x."""
    out = space.zero()
    for x in X:
        out = out + V_site(v, x, torus, space)
    return out


def project(F: FieldElement, sector: str) -> FieldElement:
    return F.project(sector)


def multiply(F: FieldElement, G: FieldElement) -> FieldElement:
    if F.space.p != G.space.p:
        raise TruncationMismatch("truncation orders differ")
    return F * G


def constant_part(F: FieldElement, sector: str = "∅"):
    return F.constant_part(sector)


# supersymmetry and gauge charge


def supersymmetry_generator(F: FieldElement) -> FieldElement:
    """Antiderivation with phi -> psi, phibar -> psibar, psi -> -phi, psibar -> phibar.

    Annihilates tau_x and every polynomial in the tau's.  Needs odd monomials, so
    the result is a general (not necessarily even) element.
    """
    sp = F.space
    out = FieldElement(sp)
    for k, c in F.terms():
        sector, w, ferm, bos = sp.decode(k)
        bos_d = dict(bos)
        # derivative through each boson: phi_x^e -> e phi_x^{e-1} psi_x placed left of the word
        for i, e in bos:
            nb = dict(bos_d)
            nb[i] -= 1
            if not nb[i]:
                del nb[i]
            word = [i] + list(ferm)  # generator index matches: phi_x -> psi_x, phibar_x -> psibar_x
            s, nk = sp.encode(sector, w, word, nb.items())
            if s:
                out._add_term(nk, c * (e * s))
        # through each fermion: the antiderivation picks (-1)^position
        for pos, g in enumerate(ferm):
            nb = dict(bos_d)
            nb[g] = nb.get(g, 0) + 1
            word = list(ferm[:pos]) + list(ferm[pos + 1:])
            s, nk = sp.encode(sector, w, word, nb.items())
            sign = -1 if pos & 1 else 1
            if g & 1 == 0:
                sign = -sign  # psi -> -phi
            out._add_term(nk, c * (s * sign))
    return out


def gauge_charge(space: FieldSpace, key: int) -> int:
    sector, _, ferm, bos = space.decode(key)
    q = sum(1 if g & 1 == 0 else -1 for g in ferm)
    q += sum(e if i & 1 == 0 else -e for i, e in bos)
    q += (1 if sector & 1 else 0) - (1 if sector & 2 else 0)
    return q


def is_gauge_invariant(F: FieldElement) -> bool:
    return all(gauge_charge(F.space, k) == 0 for k, _ in F.terms())


# norms


@dataclass(frozen=True)
class NormParams:
    j: int
    L: int
    d: int
    ell0: float = 1.0
    k0: float = 1.0
    gtilde: float = 1.0
    j_ab: int = 0

    @property
    def field_dim(self) -> float:
        return (self.d - 2) / 2

    @property
    def ell(self) -> float:
        return self.ell0 * self.L ** (-self.j * self.field_dim)

    @property
    def h(self) -> float:
        return self.k0 * self.gtilde ** (-0.25) * self.L ** (-self.j * self.d / 4)

    def _sigma_scale(self) -> float:
        return self.L ** (min(self.j, self.j_ab) * self.field_dim) * 2 ** max(self.j - self.j_ab, 0)

    @property
    def ell_sigma(self) -> float:
        return self.gtilde * self._sigma_scale()

    @property
    def h_sigma(self) -> float:
        return self.gtilde**0.25 * self._sigma_scale()


def gtilde_sequence_ok(seq) -> bool:
    return all(0.5 * b <= a <= 2 * b for a, b in zip(seq, seq[1:]))


def magnitude(c) -> float:
    if isinstance(c, (GaussianRational, complex)):
        return abs(c)
    return abs(float(c))


def T0_norm(F: FieldElement, params: NormParams, variant: str = "ell") -> float:
    """Sum of |coefficient| * h^(field degree) * h_sigma^(observable degree), weight collapsed."""
    if variant == "ell":
        h, hs = params.ell, params.ell_sigma
    elif variant == "h":
        h, hs = params.h, params.h_sigma
    else:
        raise ValueError("variant is 'ell' or 'h'")
    sp = F.space
    total = 0.0
    for k, c in F.collapse_weight().terms():
        sector, _, ferm, bos = sp.decode(k)
        deg = len(ferm) + sum(e for _, e in bos)
        obs = (sector & 1) + (sector >> 1)
        total += magnitude(c) * h**deg * hs**obs
    return total


def Q_norm(v: CouplingConstants, params: NormParams) -> float:
    ell, ls = params.ell, params.ell_sigma
    mag = magnitude
    return max(
        mag(v.g), mag(v.z), mag(v.y), params.L ** (2 * params.j) * mag(v.nu),
        ell * ls * mag(v.lam_a), ell * ls * mag(v.lam_b),
        ls**2 * mag(v.q_a), ls**2 * mag(v.q_b),
    )


def random_element(space: FieldSpace, rng, sites, n_terms: int = 6, max_deg: int | None = None,
                   even: bool = True, sectors=("∅", "a", "b", "ab"), denom: int = 7) -> FieldElement:
    """Random gauge-agnostic element with small rational coefficients (test helper)."""
    max_deg = space.p if max_deg is None else max_deg
    sites = list(sites)
    out = space.zero()
    for _ in range(n_terms):
        deg = rng.randrange(0, max_deg + 1)
        nf = rng.randrange(0, deg + 1)
        if even and nf % 2:
            nf -= 1
        gens = rng.sample(range(2 * len(sites)), min(nf, 2 * len(sites)))
        word = [2 * sites[g >> 1] + (g & 1) for g in gens]
        bos: dict = {}
        for _ in range(deg - len(word)):
            i = 2 * rng.choice(sites) + rng.randrange(2)
            bos[i] = bos.get(i, 0) + 1
        sector = {"∅": 0, "a": 1, "b": 2, "ab": 3}[rng.choice(list(sectors))]
        s, k = space.encode(sector, 0, word, bos.items())
        if s:
            num = rng.randrange(-denom, denom + 1)
            if num:
                out._add_term(k, space.coerce(Fraction(num * s, rng.randrange(1, denom + 1))))
    return out
