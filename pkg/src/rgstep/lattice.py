"""Torus geometry, block pavings at every scale, and coordinate maps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class GeometryError(ValueError):
    pass


Site = tuple


@dataclass(frozen=True)
class Torus:
    """The periodic lattice of side L**N in d dimensions with observable sites a, b."""

    d: int
    L: int
    N: int
    a: Site | None = None
    b: Site | None = None
    side: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise GeometryError("dimension must be at least 1")
        if self.L < 3:
            raise GeometryError("block side L must be at least 3")
        if self.N < 1:
            raise GeometryError("number of scales N must be at least 1")
        object.__setattr__(self, "side", self.L**self.N)
        for name in ("a", "b"):
            pt = getattr(self, name)
            if pt is not None:
                pt = tuple(pt) if isinstance(pt, (tuple, list)) else (pt,)
                if len(pt) != self.d:
                    raise GeometryError(f"observable site {name} must have {self.d} coordinates")
                object.__setattr__(self, name, self.reduce(pt))
        if self.a is not None and self.a == self.b:
            raise GeometryError("observable sites a and b must differ")

    # sites

    @property
    def volume(self) -> int:
        return self.side**self.d

    def reduce(self, x: Sequence[int]) -> Site:
        return tuple(c % self.side for c in x)

    def index(self, x: Sequence[int]) -> int:
        i = 0
        for c in x:
            i = i * self.side + c % self.side
        return i

    def coords(self, i: int) -> Site:
        out = []
        for _ in range(self.d):
            i, r = divmod(i, self.side)
            out.append(r)
        return tuple(reversed(out))

    def sites(self) -> list[Site]:
        return [self.coords(i) for i in range(self.volume)]

    def displacement(self, x: Sequence[int], y: Sequence[int]) -> Site:
        """Minimal-image difference x - y, each coordinate in (-side/2, side/2]."""
        out = []
        for u, v in zip(x, y):
            t = (u - v) % self.side
            if t > self.side // 2:
                t -= self.side
            out.append(t)
        return tuple(out)

    def dist(self, x: Sequence[int], y: Sequence[int]) -> int:
        return max(abs(t) for t in self.displacement(x, y))

    def unit_vectors(self) -> list[Site]:
        out = []
        for k in range(self.d):
            for s in (1, -1):
                e = [0] * self.d
                e[k] = s
                out.append(tuple(e))
        return out

    def shift(self, x: Sequence[int], e: Sequence[int]) -> Site:
        return tuple((u + v) % self.side for u, v in zip(x, e))

    def neighbors(self, x: Sequence[int]) -> list[Site]:
        return [self.shift(x, e) for e in self.unit_vectors()]

    # blocks

    def _check_scale(self, j: int):
        if not 0 <= j <= self.N:
            raise GeometryError(f"scale {j} outside [0, {self.N}]")

    def blocks_per_side(self, j: int) -> int:
        self._check_scale(j)
        return self.L ** (self.N - j)

    def n_blocks(self, j: int) -> int:
        return self.blocks_per_side(j) ** self.d

    def blocks(self, j: int) -> list[Block]:
        m = self.blocks_per_side(j)
        step = self.L**j
        return [Block(j, tuple(c * step for c in idx)) for idx in itertools.product(range(m), repeat=self.d)]

    def block_index(self, block: Block) -> int:
        m = self.blocks_per_side(block.scale)
        step = self.L**block.scale
        i = 0
        for c in block.corner:
            i = i * m + c // step
        return i

    def block_of(self, j: int, x: Sequence[int]) -> Block:
        self._check_scale(j)
        step = self.L**j
        return Block(j, tuple((c % self.side) // step * step for c in x))

    def block_sites(self, block: Block) -> list[Site]:
        step = self.L**block.scale
        ranges = [range(c, c + step) for c in block.corner]
        return [tuple(p) for p in itertools.product(*ranges)]

    def block_site_indices(self, block: Block) -> list[int]:
        return [self.index(x) for x in self.block_sites(block)]

    def observables(self) -> dict:
        out = {}
        if self.a is not None:
            out["a"] = self.a
        if self.b is not None:
            out["b"] = self.b
        return out

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "N": self.N,
            "a": list(self.a) if self.a is not None else None,
            "b": list(self.b) if self.b is not None else None,
        }

    @classmethod
    def from_json(cls, doc: dict) -> Torus:
        for key in ("d", "L", "N"):
            if key not in doc:
                raise GeometryError(f"torus document lacks '{key}'")
        a = doc.get("a")
        b = doc.get("b")
        return cls(int(doc["d"]), int(doc["L"]), int(doc["N"]),
                   tuple(a) if a is not None else None,
                   tuple(b) if b is not None else None)


@dataclass(frozen=True, order=True)
class Block:
    scale: int
    corner: Site


def blocks_at_scale(torus: Torus, j: int) -> list[Block]:
    return torus.blocks(j)


def block_of_site(torus: Torus, j: int, x) -> Block:
    if isinstance(x, int):
        x = (x,)
    return torus.block_of(j, x)


def torus_neighbors(torus: Torus, x) -> list[Site]:
    if isinstance(x, int):
        x = (x,)
    return torus.neighbors(x)


@dataclass(frozen=True)
class CoordinateMap:
    """Injective site map from a subset of ``source`` into ``target``."""

    source: Torus
    target: Torus
    images: tuple  # sorted pairs (site, image)

    @classmethod
    def from_function(cls, source: Torus, target: Torus, domain: Iterable[Site], fn) -> CoordinateMap:
        pairs = tuple(sorted((source.reduce(x), target.reduce(fn(x))) for x in domain))
        return cls(source, target, pairs)

    @classmethod
    def translation(cls, source: Torus, target: Torus, domain: Iterable[Site], v: Sequence[int]) -> CoordinateMap:
        return cls.from_function(source, target, domain, lambda x: tuple(c + t for c, t in zip(x, v)))

    @property
    def mapping(self) -> dict:
        return dict(self.images)

    @property
    def domain(self) -> set:
        return {x for x, _ in self.images}

    def __call__(self, x: Site) -> Site:
        return self.mapping[self.source.reduce(x)]

    def compose(self, inner: CoordinateMap) -> CoordinateMap:
        """self after inner."""
        outer = self.mapping
        pairs = []
        for x, y in inner.images:
            if y not in outer:
                raise GeometryError("composition leaves the domain of the outer map")
            pairs.append((x, outer[y]))
        return CoordinateMap(inner.source, self.target, tuple(sorted(pairs)))


def apply_coordinate_map(iota: CoordinateMap, X: Iterable[Site]) -> set:
    m = iota.mapping
    out = set()
    for x in X:
        x = iota.source.reduce(x)
        if x not in m:
            raise GeometryError(f"site {x} outside the domain of the coordinate map")
        out.add(m[x])
    return out


def validate_coordinate_map(iota: CoordinateMap) -> bool:
    m = iota.mapping
    if len(set(m.values())) != len(m):
        return False
    src, tgt = iota.source, iota.target
    inverse = {v: k for k, v in m.items()}
    for x, y in m.items():
        tgt_nbrs = set(tgt.neighbors(y))
        src_nbrs = set(src.neighbors(x))
        for nx in src_nbrs:
            if nx in m and m[nx] not in tgt_nbrs:
                return False
        for ny in tgt_nbrs:
            if ny in inverse and inverse[ny] not in src_nbrs:
                return False
    for name in ("a", "b"):
        pt = getattr(src, name)
        if pt is not None and pt in m and m[pt] != getattr(tgt, name):
            return False
    for name in ("a", "b"):
        pt = getattr(tgt, name)
        if pt is not None and pt in inverse and inverse[pt] != getattr(src, name):
            return False
    return True
