"""Polymers as bitmasks over the scale-j blocks of a torus, plus geometry checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Iterator

from .lattice import Block, GeometryError, Torus


class EnumerationCapError(RuntimeError):
    pass


def popcount(m: int) -> int:
    return bin(m).count("1")


def bits(m: int) -> Iterator[int]:
    while m:
        low = m & -m
        yield low.bit_length() - 1
        m ^= low


class Paving:
    """Block adjacency data for one torus at one scale. Obtain through ``paving()``."""

    def __init__(self, torus: Torus, j: int):
        self.torus = torus
        self.scale = j
        self.side = torus.blocks_per_side(j)  # blocks per axis
        self.step = torus.L**j
        self.blocks = torus.blocks(j)
        self.n = len(self.blocks)
        self.full = (1 << self.n) - 1
        self.grid = [tuple(c // self.step for c in b.corner) for b in self.blocks]
        offsets = self._offsets(1)
        self.touch = [self._ball(i, offsets) for i in range(self.n)]
        self._dilations = {1: self.touch}

    def _offsets(self, r: int):
        m = self.side
        span = range(-r, r + 1) if 2 * r + 1 < m else range(m)
        return list(itertools.product(span, repeat=self.torus.d))

    def _ball(self, i: int, offsets) -> int:
        g = self.grid
        out = 0
        for off in offsets:
            out |= 1 << self.grid_index(tuple(c + o for c, o in zip(g[i], off)))
        return out

    def grid_index(self, g) -> int:
        i = 0
        for c in g:
            i = i * self.side + c % self.side
        return i

    def index_of(self, block: Block) -> int:
        if block.scale != self.scale:
            raise GeometryError("block scale mismatch")
        return self.grid_index(tuple(c // self.step for c in block.corner))

    def site_block(self, x) -> int:
        return self.grid_index(tuple((c % self.torus.side) // self.step for c in x))

    def dilation_table(self, r: int) -> list[int]:
        """Per-block mask of blocks within block-distance r."""
        if r not in self._dilations:
            offsets = self._offsets(r)
            self._dilations[r] = [self._ball(i, offsets) for i in range(self.n)]
        return self._dilations[r]

    def dilate(self, mask: int, r: int = 1) -> int:
        if r == 0:
            return mask
        table = self.dilation_table(r)
        out = 0
        for i in bits(mask):
            out |= table[i]
        return out

    def component_masks(self, mask: int) -> list[int]:
        out = []
        rest = mask
        touch = self.touch
        while rest:
            low = rest & -rest
            comp = low
            frontier = low
            while frontier:
                grow = 0
                for i in bits(frontier):
                    grow |= touch[i]
                grow &= rest & ~comp
                comp |= grow
                frontier = grow
            out.append(comp)
            rest &= ~comp
        return out

    def is_connected_mask(self, mask: int) -> bool:
        if not mask:
            return False
        return len(self.component_masks(mask)) == 1

    def touches_mask(self, x: int, y: int) -> bool:
        return bool(self.dilate(x) & y)

    @property
    def small_size(self) -> int:
        return 2**self.torus.d

    def small_hood(self, mask: int) -> int:
        # A small set through B reaches exactly the blocks within king distance 2^d - 1 of B.
        return self.dilate(mask, self.small_size - 1)

    # closure

    @property
    def parent_table(self) -> list[int]:
        if not hasattr(self, "_parents"):
            up = paving(self.torus, self.scale + 1)
            self._parents = [up.site_block(b.corner) for b in self.blocks]
        return self._parents

    def closure_mask(self, mask: int) -> int:
        parents = self.parent_table
        out = 0
        for i in bits(mask):
            out |= 1 << parents[i]
        return out

    def children_mask(self, parent_mask: int) -> int:
        parents = self.parent_table
        out = 0
        for i in range(self.n):
            if parent_mask >> parents[i] & 1:
                out |= 1 << i
        return out

    # enumeration

    def connected_masks(self, max_size: int, prune=None, within: int | None = None,
                        root: int | None = None) -> Iterator[int]:
        """All connected polymers of at most ``max_size`` blocks, each once.

        ``prune(mask)`` returning True skips every extension of ``mask`` (the mask
        itself is still yielded).  ``within`` restricts to blocks of that mask.
        With ``root`` given, only polymers whose lowest block is ``root`` appear.
        """
        allowed = self.full if within is None else within
        touch = self.touch
        roots = bits(allowed) if root is None else ([root] if allowed >> root & 1 else [])
        for root in roots:
            above = allowed & ~((1 << (root + 1)) - 1)
            start = 1 << root
            stack = [(start, touch[root] & above, start | touch[root])]
            # stack entries: (current set, untried frontier, blocks already seen)
            while stack:
                cur, untried, seen = stack.pop()
                yield cur
                if popcount(cur) >= max_size or (prune is not None and prune(cur)):
                    continue
                while untried:
                    low = untried & -untried
                    untried ^= low
                    i = low.bit_length() - 1
                    new_front = touch[i] & above & ~seen
                    stack.append((cur | low, untried | new_front, seen | new_front))


@lru_cache(maxsize=None)
def paving(torus: Torus, j: int) -> Paving:
    return Paving(torus, j)


@dataclass(frozen=True)
class Polymer:
    """A set of scale-j blocks; ``mask`` bit i marks block i of ``torus.blocks(j)``."""

    torus: Torus
    scale: int
    mask: int = 0

    @classmethod
    def from_blocks(cls, torus: Torus, j: int, blocks: Iterable) -> Polymer:
        pv = paving(torus, j)
        mask = 0
        for b in blocks:
            if isinstance(b, Block):
                mask |= 1 << pv.index_of(b)
            else:
                corner = tuple(b) if isinstance(b, (tuple, list)) else (b,)
                if any(c % pv.step for c in corner):
                    raise GeometryError(f"{corner} is not a scale-{j} block corner")
                mask |= 1 << pv.site_block(corner)
        return cls(torus, j, mask)

    @classmethod
    def from_sites(cls, torus: Torus, j: int, sites: Iterable) -> Polymer:
        """Smallest scale-j polymer containing the given sites."""
        pv = paving(torus, j)
        mask = 0
        for x in sites:
            x = tuple(x) if isinstance(x, (tuple, list)) else (x,)
            mask |= 1 << pv.site_block(x)
        return cls(torus, j, mask)

    @classmethod
    def whole(cls, torus: Torus, j: int) -> Polymer:
        return cls(torus, j, paving(torus, j).full)

    @property
    def paving(self) -> Paving:
        return paving(self.torus, self.scale)

    def _same(self, other: Polymer):
        if other.torus != self.torus or other.scale != self.scale:
            raise GeometryError("polymers live on different scales or tori")

    def with_mask(self, mask: int) -> Polymer:
        return Polymer(self.torus, self.scale, mask)

    @property
    def blocks(self) -> list[Block]:
        pv = self.paving
        return [pv.blocks[i] for i in bits(self.mask)]

    def block_polymers(self) -> list[Polymer]:
        return [self.with_mask(1 << i) for i in bits(self.mask)]

    def sites(self) -> list:
        out = []
        for b in self.blocks:
            out.extend(self.torus.block_sites(b))
        return sorted(out)

    def __len__(self) -> int:
        return popcount(self.mask)

    def __bool__(self) -> bool:
        return self.mask != 0

    def __contains__(self, x) -> bool:
        if isinstance(x, Polymer):
            return x.mask & ~self.mask == 0
        if isinstance(x, Block):
            return bool(self.mask >> self.paving.index_of(x) & 1)
        x = tuple(x) if isinstance(x, (tuple, list)) else (x,)
        return bool(self.mask >> self.paving.site_block(x) & 1)

    def __or__(self, other: Polymer) -> Polymer:
        self._same(other)
        return self.with_mask(self.mask | other.mask)

    def __and__(self, other: Polymer) -> Polymer:
        self._same(other)
        return self.with_mask(self.mask & other.mask)

    def __sub__(self, other: Polymer) -> Polymer:
        self._same(other)
        return self.with_mask(self.mask & ~other.mask)

    def __le__(self, other: Polymer) -> bool:
        self._same(other)
        return self.mask & ~other.mask == 0

    def complement(self) -> Polymer:
        return self.with_mask(self.paving.full & ~self.mask)

    def subsets(self) -> Iterator[Polymer]:
        """Every sub-polymer, the empty one included."""
        m = self.mask
        s = m
        while True:
            yield self.with_mask(s)
            if s == 0:
                break
            s = (s - 1) & m

    def to_json(self) -> dict:
        return {"scale": self.scale, "blocks": [list(b.corner) for b in self.blocks]}

    @classmethod
    def from_json(cls, torus: Torus, doc: dict) -> Polymer:
        return cls.from_blocks(torus, int(doc["scale"]), [tuple(c) for c in doc["blocks"]])

    def __repr__(self) -> str:
        corners = [b.corner if len(b.corner) > 1 else b.corner[0] for b in self.blocks]
        return f"Polymer(j={self.scale}, {corners})"


def submasks(m: int) -> Iterator[int]:
    s = m
    while True:
        yield s
        if s == 0:
            return
        s = (s - 1) & m


# operations


def is_connected(X: Polymer) -> bool:
    return X.paving.is_connected_mask(X.mask)


def components(X: Polymer) -> list[Polymer]:
    return [X.with_mask(c) for c in sorted(X.paving.component_masks(X.mask))]


def touches(X: Polymer, Y: Polymer) -> bool:
    X._same(Y)
    return X.paving.touches_mask(X.mask, Y.mask)


def is_small_set(X: Polymer) -> bool:
    return len(X) <= 2**X.torus.d and is_connected(X)


def small_set_neighborhood(X: Polymer) -> Polymer:
    return X.with_mask(X.paving.small_hood(X.mask))


def closure(X: Polymer) -> Polymer:
    if X.scale >= X.torus.N:
        raise GeometryError("closure is undefined at the top scale")
    return Polymer(X.torus, X.scale + 1, X.paving.closure_mask(X.mask))


def polymers_with_closure(U: Polymer, connected: bool = False, cap: int = 1 << 16) -> list[Polymer]:
    """Every scale-(j-1) polymer whose closure is U (connected ones if asked)."""
    if U.scale == 0:
        raise GeometryError("no finer scale below 0")
    fine = paving(U.torus, U.scale - 1)
    groups = [fine.children_mask(1 << p) for p in bits(U.mask)]
    count = 1
    for g in groups:
        count *= (1 << popcount(g)) - 1
    if count > cap:
        raise EnumerationCapError(f"{count} polymers exceed the enumeration cap {cap}")
    choices = [[s for s in submasks(g) if s] for g in groups]
    out = []
    for combo in itertools.product(*choices):
        m = 0
        for s in combo:
            m |= s
        if connected and not fine.is_connected_mask(m):
            continue
        out.append(Polymer(U.torus, U.scale - 1, m))
    return out


@dataclass(frozen=True)
class WeightExponentParams:
    a: Fraction | float
    z: Fraction | float = 1


def f_weight(params: WeightExponentParams, X: Polymer | int, d: int | None = None):
    """z + a(|X| - 2^d)_+ for nonempty X and 0 for the empty polymer.

    X may be a Polymer or a block count (then ``d`` is required).
    """
    if isinstance(X, Polymer):
        n, d = len(X), X.torus.d
    else:
        n = X
        if d is None:
            raise ValueError("dimension required with a bare block count")
    if n == 0:
        return 0
    return params.z + params.a * max(n - 2**d, 0)


def coalescence_scale(torus: Torus) -> int:
    if torus.a is None or torus.b is None:
        raise GeometryError("both observable sites are needed")
    dist = torus.dist(torus.a, torus.b)
    if dist == 0:
        raise GeometryError("observable sites coincide")
    # largest k with L^k <= 2|a-b|, in integers
    k = 0
    while torus.L ** (k + 1) <= 2 * dist:
        k += 1
    return k


# lemma checks


def touching_number(d: int) -> int:
    """Most blocks outside a connected set of 2^d + 1 blocks that can touch it.

    Grow the set one touching block at a time: two touching 3^d cubes share at
    least 2^d cells, so each new block adds at most 3^d - 2^d cells to the
    dilation, and a diagonal line attains this.  touching_number_search checks
    the formula by exhaustive search where that is affordable.
    """
    size = 2**d + 1
    return 3**d + (size - 1) * (3**d - 2**d) - size


@lru_cache(maxsize=None)
def touching_number_search(d: int) -> int:
    """touching_number by search over all shapes in Z^d (feasible for d <= 2).

    A torus large enough that no shape wraps is used.
    """
    size = 2**d + 1
    side = 2 * size + 3
    grid = Torus(d, side, 1)
    pv = paving(grid, 0)
    root = pv.grid_index((size + 1,) * d)
    best = 0
    # every fixed shape, translated so that its lowest index is the central root
    above = pv.full & ~((1 << (root + 1)) - 1)
    start = 1 << root
    stack = [(start, pv.touch[root] & above, start | pv.touch[root])]
    while stack:
        cur, untried, seen = stack.pop()
        if popcount(cur) == size:
            best = max(best, popcount(pv.dilate(cur) & ~cur))
            continue
        while untried:
            low = untried & -untried
            untried ^= low
            i = low.bit_length() - 1
            new_front = pv.touch[i] & above & ~seen
            stack.append((cur | low, untried | new_front, seen | new_front))
    return best


def eta_constant(d: int) -> Fraction:
    return 1 + Fraction(1, 2**d + 1 + 2**d * touching_number(d))


@dataclass
class LemmaReport:
    name: str
    passed: bool
    checked: int
    worst: object = None
    details: dict | None = None

    def to_json(self) -> dict:
        worst = self.worst
        if isinstance(worst, Polymer):
            worst = worst.to_json()
        elif isinstance(worst, (tuple, list)):
            worst = [w.to_json() if isinstance(w, Polymer) else _plain(w) for w in worst]
        else:
            worst = _plain(worst)
        return {"name": self.name, "passed": self.passed, "checked": self.checked,
                "worst": worst, "details": {k: _plain(v) for k, v in (self.details or {}).items()}}


def _plain(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def verify_eta_lemma(torus: Torus, j: int, max_size: int | None = None,
                     prune: bool = True) -> LemmaReport:
    """Check |X|_j >= eta |closure X|_{j+1} for large connected X and eta = 1 for all X.

    The search over connected sets stops extending a set once |X| - |closure X|
    is large enough that no extension within ``max_size`` can violate the bound;
    that difference never decreases as blocks are added.
    """
    if torus.L < 2**torus.d + 1:
        raise GeometryError(f"need L >= {2**torus.d + 1} for the eta bound")
    pv = paving(torus, j)
    cap = pv.n if max_size is None else min(max_size, pv.n)
    eta = eta_constant(torus.d)
    small = 2**torus.d
    slack = math.ceil((1 - 1 / eta) * cap)

    def prune_fn(mask):
        return popcount(mask) - popcount(pv.closure_mask(mask)) >= slack

    passed = True
    checked = 0
    worst, worst_ratio = None, None
    small_closure_ok = True
    for m in pv.connected_masks(cap, prune=prune_fn if prune else None):
        checked += 1
        n, nbar = popcount(m), popcount(pv.closure_mask(m))
        if n < nbar:
            passed = False
        if n > small:
            ratio = Fraction(n, nbar)
            if worst_ratio is None or ratio < worst_ratio:
                worst, worst_ratio = m, ratio
            if ratio < eta:
                passed = False
        elif nbar > small:
            small_closure_ok = False
            passed = False
    return LemmaReport(
        "eta-inequality", passed, checked,
        Polymer(torus, j, worst) if worst is not None else None,
        {"eta": eta, "touching_number": touching_number(torus.d), "worst_ratio": worst_ratio,
         "small_closure_small": small_closure_ok, "max_size": cap, "pruned": prune},
    )


def all_polymers(torus: Torus, j: int, cap: int = 1 << 16) -> Iterator[Polymer]:
    pv = paving(torus, j)
    if (1 << pv.n) > cap:
        raise EnumerationCapError(f"2^{pv.n} polymers exceed the enumeration cap {cap}")
    for m in range(1 << pv.n):
        yield Polymer(torus, j, m)


def _partitions_of_mask(m: int) -> Iterator[list[int]]:
    if m == 0:
        yield []
        return
    low = m & -m
    rest = m ^ low
    for s in submasks(rest):
        for tail in _partitions_of_mask(rest & ~s):
            yield [low | s] + tail


def _integer_partitions(n: int, largest: int | None = None) -> Iterator[list[int]]:
    if largest is None:
        largest = n
    if n == 0:
        yield []
        return
    for k in range(min(n, largest), 0, -1):
        for tail in _integer_partitions(n - k, k):
            yield [k] + tail


def verify_subadditivity(params: WeightExponentParams, torus: Torus, j: int = 0,
                         max_blocks: int = 9, exhaustive_sets: bool | None = None) -> LemmaReport:
    """f(z, a, X) <= sum_i f(z, a, X_i) over partitions of X.

    With ``exhaustive_sets`` every polymer and every set partition is visited;
    otherwise only block counts matter, so integer partitions up to ``max_blocks``
    are checked.
    """
    d = torus.d
    if not 0 <= params.a <= Fraction(params.z) / 2**d:
        raise ValueError("subadditivity needs 0 <= a <= z 2^-d")
    pv = paving(torus, j)
    if exhaustive_sets is None:
        exhaustive_sets = pv.n <= 9
    checked, passed, worst = 0, True, None
    if exhaustive_sets:
        for m in range(1, 1 << pv.n):
            lhs = f_weight(params, popcount(m), d)
            for parts in _partitions_of_mask(m):
                checked += 1
                rhs = sum(f_weight(params, popcount(p), d) for p in parts)
                if lhs > rhs:
                    passed, worst = False, [Polymer(torus, j, p) for p in parts]
    else:
        for n in range(1, min(max_blocks, pv.n) + 1):
            lhs = f_weight(params, n, d)
            for parts in _integer_partitions(n):
                checked += 1
                if lhs > sum(f_weight(params, k, d) for k in parts):
                    passed, worst = False, parts
    return LemmaReport("subadditivity", passed, checked, worst, {"exhaustive_sets": exhaustive_sets})


def verify_union_bound(torus: Torus, j: int, z, z_lead, a, max_blocks: int = 12,
                       exhaustive_sets: bool | None = None) -> LemmaReport:
    """f(z, a, X) + z_lead |Y| >= f(z, a, X u Y) for disjoint X != empty, Y."""
    if not (z >= 0 and z_lead >= a >= 0):
        raise ValueError("need z >= 0 and z_lead >= a >= 0")
    d = torus.d
    pv = paving(torus, j)
    params = WeightExponentParams(a, z)
    if exhaustive_sets is None:
        exhaustive_sets = pv.n <= 9
    checked, passed, worst = 0, True, None
    if exhaustive_sets:
        for x in range(1, 1 << pv.n):
            fx = f_weight(params, popcount(x), d)
            for y in submasks(pv.full & ~x):
                checked += 1
                ny = popcount(y)
                if fx + z_lead * ny < f_weight(params, popcount(x) + ny, d):
                    passed, worst = False, (Polymer(torus, j, x), Polymer(torus, j, y))
    else:
        top = min(max_blocks, pv.n)
        for nx in range(1, top + 1):
            for ny in range(0, top - nx + 1):
                checked += 1
                if f_weight(params, nx, d) + z_lead * ny < f_weight(params, nx + ny, d):
                    passed, worst = False, (nx, ny)
    return LemmaReport("union-bound", passed, checked, worst, {"exhaustive_sets": exhaustive_sets})


def verify_coalescing_bound(torus: Torus, j: int, z, a, a_big, grid: int = 40) -> LemmaReport:
    """Search positive (delta, v) with

        n_dI + sum_i f_j(z, a, X_K,i) >= v + delta |cl|_{j+1} + f_{j+1}(z, a_big, cl)

    for every admissible disjoint pair (X_dI, X_K), cl the closure of their union.
    Admissible: X_K has two or more components, or one component and X_dI nonempty.
    """
    pv = paving(torus, j)
    d = torus.d
    if (3**pv.n) > 1 << 22:
        raise EnumerationCapError("too many pairs for an exhaustive search")
    eta = eta_constant(d)
    if not (0 < a <= 1 and a < a_big < eta * a):
        raise ValueError("need 0 < a <= 1 and a < a_big < eta a")
    lo = WeightExponentParams(a, z)
    hi = WeightExponentParams(a_big, z)
    # gather (lhs - f_{j+1}, |cl|) for every admissible configuration
    margins = {}
    for xk in range(1 << pv.n):
        comps = pv.component_masks(xk)
        fk = sum(f_weight(lo, popcount(c), d) for c in comps)
        for xi in submasks(pv.full & ~xk):
            if not (len(comps) >= 2 or (len(comps) == 1 and xi)):
                continue
            nbar = popcount(pv.closure_mask(xi | xk))
            gap = popcount(xi) + fk - f_weight(hi, nbar, d)
            key = nbar
            if key not in margins or gap < margins[key]:
                margins[key] = gap
    best = None
    for k in range(1, grid + 1):
        delta = Fraction(k, grid)
        v = min(gap - delta * nbar for nbar, gap in margins.items())
        if v > 0 and (best is None or (v, delta) > best):
            best = (v, delta)
    passed = best is not None
    return LemmaReport(
        "coalescing-bound", passed, len(margins), None,
        {"v": best[0] if best else None, "delta": best[1] if best else None},
    )


def admissible_triples(W_mask: int, pv: Paving, small_sets_by_block: dict) -> Iterator[tuple]:
    """(X, {U_B}, U_M) triples with X^small-hood u U_M = W.

    Each U_B is a small set containing B, the U_B pairwise do not touch and
    U_M does not touch their union.
    """
    for x in submasks(W_mask):
        if x == 0:
            continue
        hood = pv.small_hood(x)
        if hood & ~W_mask:
            continue
        blocks = list(bits(x))
        if any(pv.touch[b] & (x & ~(1 << b)) for b in blocks):
            continue
        rest = W_mask & ~hood
        for choice in _disjoint_small_sets(blocks, small_sets_by_block, pv):
            uj = 0
            for u in choice:
                uj |= u
            near = pv.dilate(uj)
            if rest & near:
                continue
            free = hood & ~near
            for s in submasks(free):
                yield x, choice, rest | s


def _disjoint_small_sets(blocks, table, pv, chosen=()):
    if not blocks:
        yield chosen
        return
    b = blocks[0]
    for u in table[b]:
        if all(not (pv.dilate(u) & w) for w in chosen):
            yield from _disjoint_small_sets(blocks[1:], table, pv, chosen + (u,))


def small_sets_containing(pv: Paving) -> dict:
    out = {b: [] for b in range(pv.n)}
    for m in pv.connected_masks(2**pv.torus.d):
        for b in bits(m):
            out[b].append(m)
    return out


def verify_reblocking_bound(torus: Torus, j: int, z, z_prime, grid: int = 64,
                            max_w: int | None = None) -> LemmaReport:
    """Search c so that for a_in in (0, c) and a_out in [0, a_in]

        z'|X| + sum_i f(z, a_in, U_M,i) >= (a_in - a_out)|W| + f(z, a_out, W)

    holds on every admissible triple of every connected W (triples with a single
    block X and empty U_M, or empty X, are excluded).
    """
    if not 0 < z < 2 * z_prime:
        raise ValueError("need 0 < z < 2 z'")
    pv = paving(torus, j)
    d = torus.d
    table = small_sets_containing(pv)
    records = set()
    top = pv.n if max_w is None else max_w
    for w in pv.connected_masks(top):
        nw = popcount(w)
        for x, choice, um in admissible_triples(w, pv, table):
            nx = popcount(x)
            if nx == 1 and um == 0:
                continue
            sizes = tuple(sorted(popcount(c) for c in pv.component_masks(um)))
            records.add((nx, sizes, nw))

    def ok(a_in, a_out):
        pin = WeightExponentParams(a_in, z)
        pout = WeightExponentParams(a_out, z)
        for nx, sizes, nw in records:
            lhs = z_prime * nx + sum(f_weight(pin, s, d) for s in sizes)
            if lhs < (a_in - a_out) * nw + f_weight(pout, nw, d):
                return False
        return True

    c = Fraction(0)
    for k in range(1, grid + 1):
        a_in = Fraction(k, grid) * Fraction(1, 2**d)
        # linear in a_out, so the endpoints suffice
        if ok(a_in, Fraction(0)) and ok(a_in, a_in):
            c = a_in
        else:
            break
    return LemmaReport("reblocking-bound", c > 0, len(records), None, {"c": c})


def verify_combination_lemmas(torus: Torus, j: int = 0, z=1, a=Fraction(1, 4), z_lead=1,
                              a_big=None, z_prime=None) -> dict:
    d = torus.d
    eta = eta_constant(d)
    if a_big is None:
        a_big = a * (1 + eta) / 2
    if z_prime is None:
        z_prime = Fraction(z) * Fraction(3, 4)
    return {
        "union-bound": verify_union_bound(torus, j, z, z_lead, a),
        "coalescing-bound": verify_coalescing_bound(torus, j, z, a, a_big),
        "reblocking-bound": verify_reblocking_bound(torus, j, z, z_prime),
    }


def power_weight_check(X_size: int, d: int, C, eps, z, a, a_prime) -> bool:
    """C^|X| eps^f(z,a,X) <= C^(2^d) eps^f(z,a',X)."""
    pa = WeightExponentParams(a, z)
    pb = WeightExponentParams(a_prime, z)
    lhs = C**X_size * eps ** f_weight(pa, X_size, d)
    rhs = C ** (2**d) * eps ** f_weight(pb, X_size, d)
    return lhs <= rhs * (1 + 1e-12)
