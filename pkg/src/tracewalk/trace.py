"""Sparse lattice subgraphs built from walk paths.

The trace of a walk is the subgraph of Z^d whose vertices and edges are
exactly the points visited and the edges traversed. A trace is the state
space of the next walk in a nested simulation, so vertex membership and
incident-edge queries sit on the hot path. Vertices are packed into single
integers (32 bits per signed coordinate) and each vertex stores a bitmask
of its incident edges, which makes the neighbourhood query one dict lookup.

Bit convention for direction k: k = 2j is +e_j, k = 2j+1 is -e_j, with
axes numbered from 0. The packed key of x + e_j is key(x) + (1 << 32*(d-1-j)).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

OFFSET = 1 << 31
COORD_BITS = 32
COORD_MASK = (1 << COORD_BITS) - 1

_DUMP_MAGIC = b"TWTG"
_DUMP_VERSION = 1


class NonAdjacentStep(ValueError):
    """A path contains consecutive points at lattice distance != 1."""


class DiscontinuousExtension(ValueError):
    """An extension segment does not begin at the end of the existing path."""


class VertexAbsent(KeyError):
    """Queried vertex is not in the graph."""


def pack(coords: Sequence[int]) -> int:
    key = 0
    for c in coords:
        key = (key << COORD_BITS) | (int(c) + OFFSET)
    return key


def unpack(key: int, d: int) -> tuple[int, ...]:
    out = [0] * d
    for j in range(d - 1, -1, -1):
        out[j] = (key & COORD_MASK) - OFFSET
        key >>= COORD_BITS
    return tuple(out)


def pack_array(steps: np.ndarray) -> list[int]:
    """Pack an (n, d) coordinate array into a list of integer keys."""
    n, d = steps.shape
    if d <= 2:
        key = (steps[:, 0].astype(np.int64) + OFFSET).astype(np.uint64)
        for j in range(1, d):
            key = (key << np.uint64(COORD_BITS)) | (
                steps[:, j].astype(np.int64) + OFFSET
            ).astype(np.uint64)
        return key.tolist()
    return [pack(row) for row in steps.tolist()]


@lru_cache(maxsize=None)
def directions(d: int) -> tuple[tuple[tuple[int, ...], int], ...]:
    """All 2d signed unit direction vectors with their bit index k."""
    out = []
    for j in range(d):
        plus = tuple(1 if i == j else 0 for i in range(d))
        minus = tuple(-1 if i == j else 0 for i in range(d))
        out.append((plus, 2 * j))
        out.append((minus, 2 * j + 1))
    return tuple(out)


@lru_cache(maxsize=None)
def packed_deltas(d: int) -> tuple[int, ...]:
    """Packed-key increment for each direction index k."""
    out = []
    for j in range(d):
        step = 1 << (COORD_BITS * (d - 1 - j))
        out.append(step)
        out.append(-step)
    return tuple(out)


@lru_cache(maxsize=None)
def _lex_direction_order(d: int) -> tuple[int, ...]:
    dirs = directions(d)
    order = sorted(range(2 * d), key=lambda k: dirs[k][0])
    return tuple(order)


@dataclass
class WalkPath:
    """An ordered nearest-neighbour path on Z^d.

    steps holds the (n_steps + 1, d) array of visited points, steps[0]
    being the start. seed identifies the RNG stream that generated the
    path; level is the index of the walk in a nested run (0 for the walk
    on the full lattice).
    """

    steps: np.ndarray
    seed: object = None
    level: int = 0

    @property
    def d(self) -> int:
        return self.steps.shape[1]

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0] - 1

    @property
    def start(self) -> tuple[int, ...]:
        return tuple(int(c) for c in self.steps[0])

    @property
    def end(self) -> tuple[int, ...]:
        return tuple(int(c) for c in self.steps[-1])

    def validate(self) -> None:
        if self.steps.ndim != 2 or self.steps.shape[0] < 1:
            raise NonAdjacentStep("path needs at least one point")
        if self.steps.shape[0] > 1:
            d = np.abs(np.diff(self.steps.astype(np.int64), axis=0)).sum(axis=1)
            bad = np.nonzero(d != 1)[0]
            if bad.size:
                raise NonAdjacentStep(
                    f"step {int(bad[0])} has lattice length {int(d[bad[0]])}"
                )

    def projection(self, ell: np.ndarray) -> np.ndarray:
        """Inner product of every visited point with a direction vector."""
        return self.steps.astype(np.float64) @ np.asarray(ell, dtype=np.float64)

    def e1_projection(self) -> np.ndarray:
        return self.steps[:, 0].astype(np.int64)


class TraceGraph:
    """Trace of a walk: visited vertices plus traversed edges.

    settled_level marks the certified frontier: all structure whose first
    coordinate lies strictly below it is final and can no longer change
    when the generating walk is extended (an edge's first coordinate is
    that of its lower endpoint along the step axis, matching the
    min-endpoint edge keying).
    """

    __slots__ = ("d", "_adj", "origin", "_end", "settled_level", "_edge_count")

    def __init__(self, d: int, origin: Sequence[int] | None = None):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.d = d
        self._adj: dict[int, int] = {}
        org = tuple(int(c) for c in (origin if origin is not None else (0,) * d))
        self.origin = org
        key = pack(org)
        self._adj[key] = 0
        self._end = key
        self.settled_level = float("-inf")
        self._edge_count = 0

    @classmethod
    def from_path(cls, path: WalkPath) -> "TraceGraph":
        path.validate()
        g = cls(path.d, origin=path.start)
        g._add_points(path.steps)
        return g

    def extend(self, segment: WalkPath) -> "TraceGraph":
        """Add a path suffix; it must start where the previous path ended."""
        segment.validate()
        if pack(segment.start) != self._end:
            raise DiscontinuousExtension(
                f"segment starts at {segment.start}, path ends at unpack"
                f" {unpack(self._end, self.d)}"
            )
        self._add_points(segment.steps)
        return self

    def _add_points(self, steps: np.ndarray) -> None:
        keys = pack_array(steps)
        if len(keys) == 1:
            self._adj.setdefault(keys[0], 0)
            self._end = keys[0]
            return
        diffs = np.diff(steps.astype(np.int64), axis=0)
        axes = np.abs(diffs).argmax(axis=1)
        signs = diffs[np.arange(len(axes)), axes]
        bits = (2 * axes + (signs < 0)).tolist()
        adj = self._adj
        added = 0
        a = keys[0]
        ma = adj.get(a, 0)
        for i, k in enumerate(bits):
            b = keys[i + 1]
            fa = 1 << k
            if not ma & fa:
                added += 1
                ma |= fa
            adj[a] = ma
            mb = adj.get(b, 0) | (1 << (k ^ 1))
            adj[b] = mb
            a, ma = b, mb
        self._edge_count += added
        self._end = keys[-1]

    # -- queries ---------------------------------------------------------

    @property
    def vertex_count(self) -> int:
        return len(self._adj)

    @property
    def edge_count(self) -> int:
        return self._edge_count

    @property
    def end(self) -> tuple[int, ...]:
        return unpack(self._end, self.d)

    def __contains__(self, x: Sequence[int]) -> bool:
        return pack(x) in self._adj

    def has_edge(self, x: Sequence[int], y: Sequence[int]) -> bool:
        dx = [int(b) - int(a) for a, b in zip(x, y)]
        if sum(abs(c) for c in dx) != 1:
            raise NonAdjacentStep(f"{tuple(x)} and {tuple(y)} are not adjacent")
        j = next(i for i, c in enumerate(dx) if c != 0)
        k = 2 * j + (dx[j] < 0)
        mask = self._adj.get(pack(x))
        return mask is not None and bool(mask & (1 << k))

    def degree(self, x: Sequence[int]) -> int:
        mask = self._adj.get(pack(x))
        if mask is None:
            raise VertexAbsent(tuple(x))
        return mask.bit_count()

    def incident_mask(self, x: Sequence[int]) -> int:
        mask = self._adj.get(pack(x))
        if mask is None:
            raise VertexAbsent(tuple(x))
        return mask

    def neighbors(self, x: Sequence[int]) -> list[tuple[int, ...]]:
        """Adjacent vertices joined by present edges, in lexicographic
        order of the direction vector."""
        key = pack(x)
        mask = self._adj.get(key)
        if mask is None:
            raise VertexAbsent(tuple(x))
        dirs = directions(self.d)
        out = []
        for k in _lex_direction_order(self.d):
            if mask & (1 << k):
                vec = dirs[k][0]
                out.append(tuple(int(a) + v for a, v in zip(x, vec)))
        return out

    def vertices(self) -> Iterator[tuple[int, ...]]:
        d = self.d
        for key in self._adj:
            yield unpack(key, d)

    def edges(self) -> Iterator[tuple[tuple[int, ...], int]]:
        """Yield (lower endpoint, axis) pairs, one per undirected edge."""
        d = self.d
        for key, mask in self._adj.items():
            for j in range(d):
                if mask & (1 << (2 * j)):
                    yield unpack(key, d), j

    def certify_settled(self, level: float) -> None:
        """Raise the settled frontier; never lowers it."""
        if level > self.settled_level:
            self.settled_level = level

    def is_subgraph_of(self, other: "TraceGraph") -> bool:
        if self.d != other.d:
            return False
        oadj = other._adj
        for key, mask in self._adj.items():
            om = oadj.get(key)
            if om is None or (mask & ~om):
                return False
        return True

    # -- binary dump/load --------------------------------------------------
    #
    # Format (little-endian), version 1:
    #   magic  4s   b"TWTG"
    #   version u16
    #   d       u16
    #   settled f64
    #   origin  d * i64
    #   end     d * i64  (continuation point of the generating path)
    #   n_vertices u64, n_edges u64
    #   vertices: n_vertices * d * i64, sorted by packed key
    #   edges: n_edges * (u64 vertex index of lower endpoint, u8 axis)

    def dump(self, path) -> None:
        keys = sorted(self._adj)
        d = self.d
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC)
            fh.write(struct.pack("<HHd", _DUMP_VERSION, d, self.settled_level))
            fh.write(struct.pack(f"<{d}q", *self.origin))
            fh.write(struct.pack(f"<{d}q", *self.end))
            fh.write(struct.pack("<QQ", len(keys), self._edge_count))
            coords = np.array([unpack(k, d) for k in keys], dtype="<i8")
            coords = coords.reshape(len(keys), d)
            fh.write(coords.tobytes())
            rec = struct.Struct("<QB")
            for i, k in enumerate(keys):
                mask = self._adj[k]
                for j in range(d):
                    if mask & (1 << (2 * j)):
                        fh.write(rec.pack(i, j))

    @classmethod
    def load(cls, path) -> "TraceGraph":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _DUMP_MAGIC:
                raise ValueError("not a trace dump")
            version, d, settled = struct.unpack("<HHd", fh.read(12))
            if version != _DUMP_VERSION:
                raise ValueError(f"unsupported trace dump version {version}")
            origin = struct.unpack(f"<{d}q", fh.read(8 * d))
            end = struct.unpack(f"<{d}q", fh.read(8 * d))
            n_v, n_e = struct.unpack("<QQ", fh.read(16))
            coords = np.frombuffer(fh.read(8 * d * n_v), dtype="<i8")
            coords = coords.reshape(n_v, d).astype(np.int64)
            g = cls(d, origin=origin)
            keys = pack_array(coords)
            for k in keys:
                g._adj.setdefault(k, 0)
            deltas = packed_deltas(d)
            rec = struct.Struct("<QB")
            payload = fh.read(rec.size * n_e)
            adj = g._adj
            for off in range(0, len(payload), rec.size):
                i, j = rec.unpack_from(payload, off)
                a = keys[i]
                b = a + deltas[2 * j]
                adj[a] = adj.get(a, 0) | (1 << (2 * j))
                adj[b] = adj.get(b, 0) | (1 << (2 * j + 1))
            g._edge_count = n_e
            g.settled_level = settled
            g._end = pack(end)
        return g
