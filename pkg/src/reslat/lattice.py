"""Finite regions of Z^d, nearest-neighbour bonds and bond-sequence counting."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

Point = tuple  # plain tuple of ints


def _as_point(p, dim=None):
    pt = tuple(int(c) for c in (p if isinstance(p, Iterable) else (p,)))
    if dim is not None and len(pt) != dim:
        raise ValueError(f"point {pt} does not have dimension {dim}")
    return pt


@dataclass(frozen=True)
class LatticeRegion:
    """A finite subset of Z^d. Points are kept sorted lexicographically;
    that order fixes the tensor-leg order everywhere else in the package."""

    dim: int
    points: tuple

    def __init__(self, dim, points=()):
        if int(dim) < 1:
            raise ValueError("dim must be >= 1")
        pts = sorted({_as_point(p, int(dim)) for p in points})
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "points", tuple(pts))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __contains__(self, p):
        return _as_point(p) in self._index

    @property
    def _index(self):
        # small regions; a dict rebuilt on demand keeps the dataclass frozen and hashable
        return {p: i for i, p in enumerate(self.points)}

    def index(self, p):
        return self._index[_as_point(p)]

    def union(self, other):
        _same_dim(self, other)
        return LatticeRegion(self.dim, self.points + other.points)

    def difference(self, other):
        _same_dim(self, other)
        drop = set(other.points)
        return LatticeRegion(self.dim, [p for p in self.points if p not in drop])

    def issubset(self, other):
        return self.dim == other.dim and set(self.points) <= set(other.points)

    def to_json(self):
        return json.dumps([list(p) for p in self.points])

    @classmethod
    def from_json(cls, text, dim=None):
        pts = json.loads(text)
        if not pts and dim is None:
            raise ValueError("empty region needs an explicit dim")
        d = dim if dim is not None else len(pts[0])
        return cls(d, pts)

    def label(self):
        return ";".join(",".join(str(c) for c in p) for p in self.points)


def _same_dim(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


@dataclass(frozen=True, order=True)
class NeighborBond:
    first: tuple
    second: tuple

    def __post_init__(self):
        a, b = _as_point(self.first), _as_point(self.second)
        if len(a) != len(b):
            raise ValueError("bond endpoints have different dimensions")
        if sum(abs(x - y) for x, y in zip(a, b)) != 1:
            raise ValueError(f"{a} and {b} are not nearest neighbours")
        if b < a:
            a, b = b, a
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)

    @property
    def sites(self):
        return (self.first, self.second)

    def touches(self, points):
        s = set(points)
        return self.first in s or self.second in s


def make_box_region(dim, side_lengths, origin=None):
    """Axis-aligned box with the given side lengths anchored at ``origin``."""
    sides = [int(s) for s in side_lengths]
    origin = [0] * dim if origin is None else [int(o) for o in origin]
    if len(sides) != dim or len(origin) != dim:
        raise ValueError("side_lengths and origin must have `dim` entries")
    if any(s < 1 for s in sides):
        raise ValueError("side lengths must be >= 1")
    ranges = [range(o, o + s) for o, s in zip(origin, sides)]
    return LatticeRegion(dim, itertools.product(*ranges))


def chain(length, start=0):
    return make_box_region(1, [length], [start])


def neighbors(p):
    p = _as_point(p)
    out = []
    for axis in range(len(p)):
        for step in (-1, 1):
            q = list(p)
            q[axis] += step
            out.append(tuple(q))
    return out


def enumerate_bonds(region):
    """Every unordered nearest-neighbour pair inside ``region``, lexicographic."""
    pts = set(region.points)
    bonds = []
    for p in region.points:
        for axis in range(region.dim):
            q = list(p)
            q[axis] += 1
            q = tuple(q)
            if q in pts:
                bonds.append(NeighborBond(p, q))
    return sorted(bonds)


def bonds_touching(region, sites):
    s = set(_as_point(x) for x in sites)
    return [b for b in enumerate_bonds(region) if b.first in s or b.second in s]


def inflate_region(region, n):
    """Union of L-infinity balls of radius n around the points of ``region``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    offsets = list(itertools.product(range(-n, n + 1), repeat=region.dim))
    pts = {tuple(a + b for a, b in zip(p, off)) for p in region.points for off in offsets}
    return LatticeRegion(region.dim, pts)


@dataclass(frozen=True)
class CombinatoricsReport:
    L0: int
    n: int
    d: int
    N_n_bound: int
    L_n_bound: int


def combinatorics_report(L0, n, d, limit=2**63 - 1):
    """Exact bounds on the number of contributing bond sequences of length n
    and on the size of the support they generate, starting from L0 sites.

    ``limit`` guards callers that feed the result into fixed-width storage;
    exceeding it raises OverflowError instead of wrapping.
    """
    for name, v in (("L0", L0), ("n", n), ("d", d)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1")
    L0, n, d = int(L0), int(n), int(d)
    N = 2 ** ((d + 1) * n) * math.prod(range(L0, L0 + n))
    if N > limit:
        raise OverflowError(f"N_n bound {N} exceeds limit {limit}")
    return CombinatoricsReport(L0, n, d, N, L0 + n)


def count_contributing_sequences(start, n):
    """Brute force: number of bond n-tuples on Z^d in which every bond shares a
    site with the support accumulated so far (start region plus earlier bonds).
    Other sequences give vanishing iterated commutators."""
    dim = start.dim

    def rec(support, k):
        if k == 0:
            return 1
        total = 0
        seen = set()
        for p in sorted(support):
            for q in neighbors(p):
                b = NeighborBond(p, q)
                if b in seen:
                    continue
                seen.add(b)
                total += rec(support | {q}, k - 1)
        return total

    return rec(frozenset(start.points), n) if dim else 0


def neighbor_norm_bounds(d, v_norm):
    """Two upper bounds for the norm of all bonds at one site: the loose 2^d
    form and the sharp count 2d of neighbours."""
    return {"pow2": 2 ** d * v_norm, "neighbor_count": 2 * d * v_norm}
