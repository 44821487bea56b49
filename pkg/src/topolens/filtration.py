"""Sublevel-set persistence of scalar grids and extended persistence of graphs.

Grids: 0-dimensional persistent homology of the sublevel filtration of a 2D
scalar field, computed with a union-find sweep that records every component
birth and merge (the MergeHistory). The history makes interlevel-set regions
exact: a feature's region is the state of its component immediately before
the merge that killed it, no epsilon thresholding involved.

Graphs: extended persistence of a node-weighted graph via boundary-matrix
column reduction over the coned extended filtration (ascending simplices,
then cones of the simplices in descending order). The cone vertex is placed
first in the filtration so that each connected component's essential class
pairs its own minimum with its own maximum; with the cone vertex last, the
reduction mispairs minima and maxima across components.

Ties are broken by linear index everywhere (lower index = older), so results
are deterministic for grids and graphs with duplicate values.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .diagram import (
    ESSENTIAL,
    EXTENDED,
    ORDINARY,
    RELATIVE,
    PersistenceDiagram,
    PersistencePoint,
)
from .errors import InvalidInputError, SizeCapError

# ---------------------------------------------------------------- grid types


@dataclass
class ScalarGrid:
    """2D scalar field, row-major values, one float per cell."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("grid dimensions must be positive")
        if self.values.size != self.width * self.height:
            raise InvalidInputError(
                f"expected {self.width * self.height} values, got {self.values.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("grid values must be finite")

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError("expected a 2D array")
        return cls(width=arr.shape[1], height=arr.shape[0], values=arr.reshape(-1))

    def as_2d(self):
        return self.values.reshape(self.height, self.width)


@dataclass
class FilteredGraph:
    """Graph with one filter value per node."""

    node_values: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        self.node_values = np.asarray(self.node_values, dtype=np.float64).reshape(-1)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = self.node_values.size
        if n == 0:
            raise InvalidInputError("graph has no nodes")
        if not np.all(np.isfinite(self.node_values)):
            raise InvalidInputError("node values must be finite")
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise InvalidInputError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise InvalidInputError("self-loops are not allowed")

    @property
    def n_nodes(self):
        return self.node_values.size

    @property
    def n_edges(self):
        return self.edges.shape[0]


@dataclass(frozen=True)
class MergeEvent:
    """A younger component (rooted at its birth cell) dies at `saddle_cell`."""

    level: float
    younger_root: int
    older_root: int
    saddle_cell: int


@dataclass(frozen=True)
class BirthEvent:
    level: float
    cell: int


@dataclass
class MergeHistory:
    """Ordered event log of the union-find sweep plus the final root map."""

    events: list = field(default_factory=list)
    roots: np.ndarray | None = None  # final root per cell
    connectivity: int = 4

    def merge_for_birth_cell(self, birth_cell):
        for ev in self.events:
            if isinstance(ev, MergeEvent) and ev.younger_root == birth_cell:
                return ev
        return None


@dataclass
class FeatureRegion:
    point: PersistencePoint
    pixels: set


# ------------------------------------------------------------- grid sweep


def _neighbors(idx, width, height, connectivity):
    y, x = divmod(idx, width)
    if x > 0:
        yield idx - 1
    if x + 1 < width:
        yield idx + 1
    if y > 0:
        yield idx - width
    if y + 1 < height:
        yield idx + width
    if connectivity == 8:
        if x > 0 and y > 0:
            yield idx - width - 1
        if x + 1 < width and y > 0:
            yield idx - width + 1
        if x > 0 and y + 1 < height:
            yield idx + width - 1
        if x + 1 < width and y + 1 < height:
            yield idx + width + 1


class _DSU:
    """Union-find keyed by cell index; each set remembers its birth cell."""

    def __init__(self, n):
        self.parent = np.full(n, -1, dtype=np.int64)  # -1 = not yet added
        self.birth_cell = np.full(n, -1, dtype=np.int64)

    def add(self, i):
        self.parent[i] = i
        self.birth_cell[i] = i

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union_into(self, keep_root, absorb_root):
        self.parent[absorb_root] = keep_root


def _sweep_order(values):
    """Processing order: by (value, linear index). Lower index = older."""
    return np.lexsort((np.arange(values.size), values))


def sublevel_pd0(grid, connectivity=4, keep_zero=False):
    """0D persistence of the sublevel filtration of a scalar grid.

    Returns (PersistenceDiagram, MergeHistory). Every finite point is born at
    a local-minimum cell and dies at the saddle cell where its component
    merges into an older one (elder rule). One essential point (death +inf)
    per connected component of the full grid. Zero-persistence pairs are
    dropped unless keep_zero is set.
    """
    if not isinstance(grid, ScalarGrid):
        raise InvalidInputError("sublevel_pd0 expects a ScalarGrid")
    if connectivity not in (4, 8):
        raise InvalidInputError("connectivity must be 4 or 8")
    values = grid.values
    n = values.size
    order = _sweep_order(values)
    rank = np.empty(n, dtype=np.int64)  # processing position per cell
    rank[order] = np.arange(n)

    dsu = _DSU(n)
    events = []
    points = []
    for i in order:
        v = values[i]
        dsu.add(i)
        neighbor_roots = []
        for j in _neighbors(i, grid.width, grid.height, connectivity):
            if rank[j] < rank[i]:
                r = dsu.find(j)
                if r not in neighbor_roots:
                    neighbor_roots.append(r)
        if not neighbor_roots:
            events.append(BirthEvent(level=float(v), cell=int(i)))
            continue
        # The oldest neighboring component absorbs the cell and all others.
        # Age order = (birth value, birth cell index), same as the sweep.
        neighbor_roots.sort(key=lambda r: rank[dsu.birth_cell[r]])
        oldest = neighbor_roots[0]
        dsu.union_into(oldest, i)
        for r in neighbor_roots[1:]:
            bc = int(dsu.birth_cell[r])
            events.append(
                MergeEvent(
                    level=float(v),
                    younger_root=bc,
                    older_root=int(dsu.birth_cell[oldest]),
                    saddle_cell=int(i),
                )
            )
            points.append(
                PersistencePoint(
                    birth=float(values[bc]),
                    death=float(v),
                    dim=0,
                    kind=ORDINARY,
                    birth_cell=bc,
                    death_cell=int(i),
                )
            )
            dsu.union_into(oldest, r)

    roots = np.empty(n, dtype=np.int64)
    seen = set()
    for i in range(n):
        r = dsu.find(i)
        roots[i] = r
        if r not in seen:
            seen.add(r)
            bc = int(dsu.birth_cell[r])
            points.append(
                PersistencePoint(
                    birth=float(values[bc]),
                    death=math.inf,
                    dim=0,
                    kind=ESSENTIAL,
                    birth_cell=bc,
                )
            )
    history = MergeHistory(events=events, roots=roots, connectivity=connectivity)
    diagram = PersistenceDiagram(points, source_id="grid")
    if not keep_zero:
        diagram = diagram.drop_zero_persistence()
    return diagram, history


def feature_region(grid, history, point):
    """Pixels of the interlevel-set region belonging to a diagram point.

    For a finite point: the connected component containing its birth cell in
    the sweep state immediately before the saddle cell of its death merge is
    processed. For an essential point: the full final component. Exact by
    replay of the same (value, index) sweep that produced the history.
    """
    if point.birth_cell is None:
        raise InvalidInputError("point has no birth cell; not from sublevel_pd0")
    values = grid.values
    n = values.size
    if history.roots is None or history.roots.size != n:
        raise InvalidInputError("history does not match this grid")

    if point.kind == ESSENTIAL:
        root = history.roots[point.birth_cell]
        pixels = set(int(i) for i in np.nonzero(history.roots == root)[0])
        return FeatureRegion(point=point, pixels=pixels)

    ev = history.merge_for_birth_cell(point.birth_cell)
    if ev is None or ev.level != point.death or ev.saddle_cell != point.death_cell:
        raise InvalidInputError("point not found in merge history")

    connectivity = history.connectivity
    order = _sweep_order(values)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    stop = rank[ev.saddle_cell]

    dsu = _DSU(n)
    members = {}
    for i in order:
        if rank[i] >= stop:
            break
        dsu.add(i)
        members[int(i)] = {int(i)}
        neighbor_roots = []
        for j in _neighbors(i, grid.width, grid.height, connectivity):
            if rank[j] < rank[i]:
                r = dsu.find(j)
                if r not in neighbor_roots:
                    neighbor_roots.append(r)
        if not neighbor_roots:
            continue
        neighbor_roots.sort(key=lambda r: rank[dsu.birth_cell[r]])
        oldest = neighbor_roots[0]
        dsu.union_into(oldest, i)
        members[int(oldest)].update(members.pop(int(i)))
        for r in neighbor_roots[1:]:
            dsu.union_into(oldest, r)
            members[int(oldest)].update(members.pop(int(r)))
    root = dsu.find(point.birth_cell)
    return FeatureRegion(point=point, pixels=members[int(root)])


def feature_regions(grid, history, diagram):
    """All regions of a diagram in one sweep.

    Equivalent to calling feature_region per point but O(n alpha(n)) overall:
    the sweep snapshots a component's member set at the moment it dies.
    """
    connectivity = history.connectivity
    values = grid.values
    n = values.size
    order = _sweep_order(values)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    want = {}
    for p in diagram.points:
        if p.birth_cell is None:
            raise InvalidInputError("diagram points lack birth cells")
        want[p.birth_cell] = p

    dsu = _DSU(n)
    members = {}
    out = []
    for i in order:
        v = values[i]
        dsu.add(i)
        members[int(i)] = {int(i)}
        neighbor_roots = []
        for j in _neighbors(i, grid.width, grid.height, connectivity):
            if rank[j] < rank[i]:
                r = dsu.find(j)
                if r not in neighbor_roots:
                    neighbor_roots.append(r)
        if not neighbor_roots:
            continue
        neighbor_roots.sort(key=lambda r: rank[dsu.birth_cell[r]])
        oldest = neighbor_roots[0]
        dsu.union_into(oldest, i)
        members[int(oldest)].update(members.pop(int(i)))
        for r in neighbor_roots[1:]:
            bc = int(dsu.birth_cell[r])
            if bc in want and want[bc].death == float(v):
                out.append(FeatureRegion(point=want[bc], pixels=set(members[int(r)])))
            dsu.union_into(oldest, r)
            members[int(oldest)].update(members.pop(int(r)))
    for bc, p in want.items():
        if p.kind == ESSENTIAL:
            root = dsu.find(bc)
            out.append(FeatureRegion(point=p, pixels=set(members[int(root)])))
    return out


# ------------------------------------------------- extended graph persistence

_ASC_VERTEX = 0
_ASC_EDGE = 1
_CONE_VERTEX = 2
_CONE_EDGE = 3


def _extended_filtration(graph):
    """Simplex order of the coned extended filtration.

    Returns a list of (tag, index, value) where index is a node or edge id.
    The cone vertex is implicit at position 0. Ascending half: vertices by
    (value, id), edges by (max endpoint value, 1, id) so vertices precede
    edges on ties. Descending half: cones of vertices by value descending,
    cones of edges by min endpoint descending, cone-vertices first on ties.
    """
    vals = graph.node_values
    asc = [(_ASC_VERTEX, int(v), (float(vals[v]), 0, int(v))) for v in range(graph.n_nodes)]
    for e, (u, w) in enumerate(graph.edges):
        asc.append((_ASC_EDGE, e, (float(max(vals[u], vals[w])), 1, e)))
    asc.sort(key=lambda s: s[2])

    desc = [(_CONE_VERTEX, int(v), (-float(vals[v]), 0, int(v))) for v in range(graph.n_nodes)]
    for e, (u, w) in enumerate(graph.edges):
        desc.append((_CONE_EDGE, e, (-float(min(vals[u], vals[w])), 1, e)))
    desc.sort(key=lambda s: s[2])
    return asc + desc


def extended_pd_reduction_oracle(graph, max_nodes=64, keep_zero=False):
    """Extended persistence pairing by boundary-matrix column reduction.

    Cubic-cost reference implementation; refuses graphs above `max_nodes`.
    Pairs are classified ordinary / extended / relative by which halves of
    the filtration their two simplices fall in. The artifact pair involving
    the cone vertex is folded into the first component's extended pair.
    """
    if not isinstance(graph, FilteredGraph):
        raise InvalidInputError("expected a FilteredGraph")
    if graph.n_nodes > max_nodes:
        raise SizeCapError(
            f"graph has {graph.n_nodes} nodes, reduction oracle cap is {max_nodes}"
        )
    vals = graph.node_values
    simplices = _extended_filtration(graph)
    # Position 0 is the cone vertex; graph simplices start at 1.
    pos_of = {}
    for k, (tag, idx, _key) in enumerate(simplices):
        pos_of[(tag, idx)] = k + 1

    ncols = len(simplices) + 1
    columns = [0] * ncols  # bitmask over row positions
    for k, (tag, idx, _key) in enumerate(simplices):
        col = k + 1
        if tag == _ASC_VERTEX:
            bnd = 0
        elif tag == _ASC_EDGE:
            u, w = graph.edges[idx]
            bnd = (1 << pos_of[(_ASC_VERTEX, int(u))]) | (1 << pos_of[(_ASC_VERTEX, int(w))])
        elif tag == _CONE_VERTEX:
            bnd = (1 << pos_of[(_ASC_VERTEX, idx)]) | 1  # vertex + cone vertex
        else:  # cone of an edge: the edge plus the cones of its endpoints
            u, w = graph.edges[idx]
            bnd = (
                (1 << pos_of[(_ASC_EDGE, idx)])
                | (1 << pos_of[(_CONE_VERTEX, int(u))])
                | (1 << pos_of[(_CONE_VERTEX, int(w))])
            )
        columns[col] = bnd

    low_owner = {}
    pairs = []
    for j in range(ncols):
        col = columns[j]
        while col:
            low = col.bit_length() - 1
            if low not in low_owner:
                low_owner[low] = j
                pairs.append((low, j))
                break
            col ^= columns[low_owner[low]]
        columns[j] = col

    points = []
    for i, j in pairs:
        tag_i, idx_i, _ = simplices[i - 1] if i > 0 else (None, None, None)
        tag_j, idx_j, _ = simplices[j - 1]
        if i == 0:
            # A 1-chain boundary has even vertex support, so no column can
            # reduce to the cone vertex alone; it stays unpaired (the one
            # essential class of the contractible coned complex).
            raise AssertionError("cone vertex cannot be a pivot row")
        if tag_i == _ASC_VERTEX and tag_j == _ASC_EDGE:
            u, w = graph.edges[idx_j]
            death_cell = int(u) if vals[u] >= vals[w] else int(w)
            points.append(
                PersistencePoint(
                    birth=float(vals[idx_i]),
                    death=float(max(vals[u], vals[w])),
                    dim=0,
                    kind=ORDINARY,
                    birth_cell=int(idx_i),
                    death_cell=death_cell,
                )
            )
        elif tag_i == _ASC_VERTEX and tag_j == _CONE_VERTEX:
            points.append(
                PersistencePoint(
                    birth=float(vals[idx_i]),
                    death=float(vals[idx_j]),
                    dim=0,
                    kind=EXTENDED,
                    birth_cell=int(idx_i),
                    death_cell=int(idx_j),
                )
            )
        elif tag_i == _ASC_EDGE and tag_j == _CONE_EDGE:
            bu, bw = graph.edges[idx_i]
            du, dw = graph.edges[idx_j]
            birth_cell = int(bu) if vals[bu] >= vals[bw] else int(bw)
            death_cell = int(du) if vals[du] <= vals[dw] else int(dw)
            points.append(
                PersistencePoint(
                    birth=float(max(vals[bu], vals[bw])),
                    death=float(min(vals[du], vals[dw])),
                    dim=1,
                    kind=EXTENDED,
                    birth_cell=birth_cell,
                    death_cell=death_cell,
                )
            )
        elif tag_i == _CONE_VERTEX and tag_j == _CONE_EDGE:
            du, dw = graph.edges[idx_j]
            death_cell = int(du) if vals[du] <= vals[dw] else int(dw)
            points.append(
                PersistencePoint(
                    birth=float(vals[idx_i]),
                    death=float(min(vals[du], vals[dw])),
                    dim=1,
                    kind=RELATIVE,
                    birth_cell=int(idx_i),
                    death_cell=death_cell,
                )
            )
        else:  # pragma: no cover - the four cases above are exhaustive
            raise AssertionError(f"unexpected pair tags {tag_i},{tag_j}")

    diagram = PersistenceDiagram(points, source_id="graph")
    if not keep_zero:
        diagram = diagram.drop_zero_persistence()
    return diagram


def extended_pd_graph(graph, max_nodes=64, keep_zero=False):
    """Extended persistence diagram of a node-weighted graph.

    The default implementation is the reduction oracle. Emits ordinary dim-0
    pairs (upward merges), one extended dim-0 pair per connected component
    (component min to component max), extended dim-1 pairs per independent
    cycle (birth on the way up >= death on the way down), and relative pairs
    from the downward pass.
    """
    return extended_pd_reduction_oracle(graph, max_nodes=max_nodes, keep_zero=keep_zero)
