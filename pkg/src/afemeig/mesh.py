"""Conforming triangulations with newest-vertex bisection.

A triangulation is an immutable snapshot: refinement returns a new
object.  Elements carry a refinement-edge tag (the local edge that the
next bisection splits), a region id inherited from the initial mesh, and
a bisection generation.  Local edge ``i`` is the edge opposite local
vertex ``i``.

Bisection of an element with refinement edge (a, b) and peak c inserts
the midpoint m of (a, b) and produces the children (a, m, c) and
(m, b, c); m is the newest vertex of both children, so their refinement
edges become (c, a) and (b, c).  Conformity is kept by bisecting the
neighbor across the refinement edge first whenever its own tag disagrees
(recursive closure, realized with an explicit stack).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Bisections needed so that refining an element this many levels puts a
# new node on each of its sides and one in its interior (2D value).
N_BISECT_INTERIOR = 3


class MeshError(Exception):
    """Invalid mesh topology, geometry, or refinement input."""


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Element:
    id: int
    vertices: tuple
    refinement_edge: int
    region_id: int
    generation: int


@dataclass(frozen=True)
class Side:
    id: int
    vertices: tuple
    elements: tuple
    boundary: bool


class Triangulation:
    """Conforming 2D simplicial mesh backed by numpy arrays.

    Parameters
    ----------
    vertex_coords : (nv, 2) float array
    elem_vertices : (ne, 3) int array, counterclockwise
    elem_refedge : (ne,) int array, local refinement-edge index in {0,1,2}
    elem_region : (ne,) int array, region label from the initial mesh
    elem_generation : (ne,) int array, bisection depth from the root mesh
    parent_elements : (ne,) int array, ancestor element id in the source
        triangulation of the refine call that produced this one (identity
        for a freshly constructed mesh)
    level : int, refinement step counter
    domain_area : float, area of the initial domain (carried through
        refinement for coverage checks)
    """

    def __init__(self, vertex_coords, elem_vertices, elem_refedge, elem_region,
                 elem_generation, parent_elements, level, domain_area):
        self.vertex_coords = np.ascontiguousarray(vertex_coords, dtype=float)
        self.elem_vertices = np.ascontiguousarray(elem_vertices, dtype=np.int64)
        self.elem_refedge = np.ascontiguousarray(elem_refedge, dtype=np.int64)
        self.elem_region = np.ascontiguousarray(elem_region, dtype=np.int64)
        self.elem_generation = np.ascontiguousarray(elem_generation, dtype=np.int64)
        self.parent_elements = np.ascontiguousarray(parent_elements, dtype=np.int64)
        self.level = int(level)
        self.domain_area = float(domain_area)
        self._build_sides()
        self._vertex_elems = None
        for arr in (self.vertex_coords, self.elem_vertices, self.elem_refedge,
                    self.elem_region, self.elem_generation, self.parent_elements,
                    self.side_vertices, self.side_elems, self.elem_sides):
            arr.setflags(write=False)

    # -- construction helpers --------------------------------------------------

    def _build_sides(self):
        ev = self.elem_vertices
        ne = ev.shape[0]
        nv = self.vertex_coords.shape[0]
        pairs = np.stack([ev[:, [1, 2]], ev[:, [2, 0]], ev[:, [0, 1]]], axis=1)
        lo = pairs.min(axis=2)
        hi = pairs.max(axis=2)
        keys = lo.astype(np.int64) * nv + hi
        uniq, inverse, counts = np.unique(keys.ravel(), return_inverse=True,
                                          return_counts=True)
        if np.any(counts > 2):
            bad = int(uniq[np.argmax(counts > 2)])
            raise MeshError(
                f"side ({bad // nv}, {bad % nv}) is shared by more than two elements")
        ns = uniq.shape[0]
        self.elem_sides = inverse.reshape(ne, 3)
        self.side_vertices = np.column_stack([uniq // nv, uniq % nv])
        order = np.argsort(inverse, kind="stable")
        side_sorted = inverse[order]
        eids = np.repeat(np.arange(ne), 3)[order]
        first = np.ones(side_sorted.shape[0], dtype=bool)
        first[1:] = side_sorted[1:] != side_sorted[:-1]
        side_elems = np.full((ns, 2), -1, dtype=np.int64)
        side_elems[side_sorted[first], 0] = eids[first]
        side_elems[side_sorted[~first], 1] = eids[~first]
        self.side_elems = side_elems

    # -- basic queries -----------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.vertex_coords.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elem_vertices.shape[0]

    @property
    def num_sides(self) -> int:
        return self.side_vertices.shape[0]

    @property
    def boundary_sides(self):
        return self.side_elems[:, 1] < 0

    def boundary_vertex_mask(self):
        mask = np.zeros(self.num_vertices, dtype=bool)
        mask[self.side_vertices[self.boundary_sides].ravel()] = True
        return mask

    def vertex(self, i: int) -> Vertex:
        x, y = self.vertex_coords[i]
        return Vertex(int(i), float(x), float(y))

    def element(self, i: int) -> Element:
        return Element(int(i), tuple(int(v) for v in self.elem_vertices[i]),
                       int(self.elem_refedge[i]), int(self.elem_region[i]),
                       int(self.elem_generation[i]))

    def side(self, i: int) -> Side:
        elems = tuple(int(e) for e in self.side_elems[i] if e >= 0)
        return Side(int(i), tuple(int(v) for v in self.side_vertices[i]),
                    elems, bool(self.side_elems[i, 1] < 0))

    def element_coords(self, ids=None):
        """Vertex coordinates per element, shape (ne, 3, 2)."""
        ev = self.elem_vertices if ids is None else self.elem_vertices[ids]
        return self.vertex_coords[ev]

    def signed_areas(self):
        xy = self.element_coords()
        d1 = xy[:, 1] - xy[:, 0]
        d2 = xy[:, 2] - xy[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self):
        return np.abs(self.signed_areas())

    def vertex_elements(self, v: int):
        """Element ids incident to vertex v (ascending)."""
        if self._vertex_elems is None:
            ev = self.elem_vertices
            order = np.argsort(ev.ravel(), kind="stable")
            eids = np.repeat(np.arange(self.num_elements), 3)[order]
            verts = ev.ravel()[order]
            starts = np.searchsorted(verts, np.arange(self.num_vertices + 1))
            self._vertex_elems = (eids, starts)
        eids, starts = self._vertex_elems
        return eids[starts[v]:starts[v + 1]]

    # -- integrity ---------------------------------------------------------------

    def audit(self, check_hanging: bool = True):
        """Raise MeshError if conformity or coverage is violated."""
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmax(areas <= 0.0))
            raise MeshError(f"element {bad} has non-positive area {areas[bad]}")
        total = float(areas.sum())
        if abs(total - self.domain_area) > 1e-12 * max(1.0, self.domain_area):
            raise MeshError(
                f"covered area {total} drifted from domain area {self.domain_area}")
        if np.any((self.elem_refedge < 0) | (self.elem_refedge > 2)):
            raise MeshError("refinement-edge tag outside {0, 1, 2}")
        if check_hanging:
            self._check_hanging()

    def _check_hanging(self):
        # Bisection puts hanging nodes at exact side midpoints, so an exact
        # lookup catches them; small meshes also get a tolerant scan to
        # reject sloppy hand-built input.
        coords = self.vertex_coords
        lookup = {(float(x), float(y)): i for i, (x, y) in enumerate(coords)}
        mids = 0.5 * (coords[self.side_vertices[:, 0]]
                      + coords[self.side_vertices[:, 1]])
        for s in range(self.num_sides):
            hit = lookup.get((float(mids[s, 0]), float(mids[s, 1])))
            if hit is not None:
                raise MeshError(
                    f"hanging vertex {hit} at midpoint of side "
                    f"{tuple(int(v) for v in self.side_vertices[s])}")
        if self.num_vertices <= 3000:
            lengths = np.linalg.norm(
                coords[self.side_vertices[:, 1]] - coords[self.side_vertices[:, 0]],
                axis=1)
            for s in range(self.num_sides):
                d = np.linalg.norm(coords - mids[s], axis=1)
                near = np.nonzero(d < 1e-12 * max(1.0, float(lengths[s])))[0]
                if near.size:
                    raise MeshError(
                        f"hanging vertex {int(near[0])} on side "
                        f"{tuple(int(v) for v in self.side_vertices[s])}")


def from_arrays(vertex_coords, triangle_vertex_ids, region_ids=None, *,
                refinement_edges=None) -> Triangulation:
    """Build a conforming triangulation from raw arrays.

    Triangles are reoriented counterclockwise individually if needed.
    Refinement edges default to the longest edge of each element, ties
    broken by the lowest local edge index.

    Raises
    ------
    MeshError
        For degenerate (zero-area) triangles or non-conforming input
        (hanging vertex, side shared by more than two elements).
    """
    coords = np.ascontiguousarray(vertex_coords, dtype=float)
    ev = np.array(triangle_vertex_ids, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise MeshError("vertex_coords must be (n, 2)")
    if not np.all(np.isfinite(coords)):
        raise MeshError("vertex coordinates must be finite")
    if ev.ndim != 2 or ev.shape[1] != 3:
        raise MeshError("triangle_vertex_ids must be (m, 3)")
    if ev.size and (ev.min() < 0 or ev.max() >= coords.shape[0]):
        raise MeshError("triangle vertex id out of range")
    ne = ev.shape[0]

    xy = coords[ev]
    d1 = xy[:, 1] - xy[:, 0]
    d2 = xy[:, 2] - xy[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    tiny = np.abs(areas) < 1e-14 * max(1.0, float(np.abs(areas).max(initial=0.0)))
    if np.any(tiny):
        raise MeshError(f"degenerate (zero-area) triangle {int(np.argmax(tiny))}")
    flip = areas < 0.0
    ev[flip] = ev[flip][:, [0, 2, 1]]

    if refinement_edges is None:
        xy = coords[ev]
        e0 = np.linalg.norm(xy[:, 2] - xy[:, 1], axis=1)
        e1 = np.linalg.norm(xy[:, 0] - xy[:, 2], axis=1)
        e2 = np.linalg.norm(xy[:, 1] - xy[:, 0], axis=1)
        refedge = np.argmax(np.column_stack([e0, e1, e2]), axis=1)
    else:
        refedge = np.asarray(refinement_edges, dtype=np.int64)
        if refedge.shape != (ne,) or np.any((refedge < 0) | (refedge > 2)):
            raise MeshError("refinement_edges must be (m,) with values in {0,1,2}")

    region = (np.zeros(ne, dtype=np.int64) if region_ids is None
              else np.asarray(region_ids, dtype=np.int64))
    if region.shape != (ne,):
        raise MeshError("region_ids must have one entry per triangle")

    tri = Triangulation(coords, ev, refedge, region,
                        elem_generation=np.zeros(ne, dtype=np.int64),
                        parent_elements=np.arange(ne, dtype=np.int64),
                        level=0, domain_area=float(np.abs(areas).sum()))
    tri.audit(check_hanging=True)
    return tri


# -- refinement ------------------------------------------------------------------


class _Builder:
    """Mutable working copy used inside a single refine call."""

    def __init__(self, tri: Triangulation):
        self.xs = list(map(float, tri.vertex_coords[:, 0]))
        self.ys = list(map(float, tri.vertex_coords[:, 1]))
        # element record: [v0, v1, v2, refedge, region, generation, root]
        self.elems = {}
        self.edge_map = {}
        for e in range(tri.num_elements):
            v0, v1, v2 = map(int, tri.elem_vertices[e])
            self.elems[e] = [v0, v1, v2, int(tri.elem_refedge[e]),
                             int(tri.elem_region[e]), int(tri.elem_generation[e]), e]
            for a, b in ((v1, v2), (v2, v0), (v0, v1)):
                self._edge_add(a, b, e)
        self.midpoints = {}
        self.next_id = tri.num_elements
        self.next_vertex = tri.num_vertices
        self.guard = 10 * tri.num_elements + 100

    def _edge_add(self, a, b, e):
        key = (a, b) if a < b else (b, a)
        self.edge_map.setdefault(key, []).append(e)

    def _edge_remove(self, a, b, e):
        key = (a, b) if a < b else (b, a)
        lst = self.edge_map[key]
        lst.remove(e)
        if not lst:
            del self.edge_map[key]

    @staticmethod
    def refedge_vertices(rec):
        r = rec[3]
        return rec[(r + 1) % 3], rec[(r + 2) % 3], rec[r]  # a, b, peak

    def neighbor_across(self, eid, a, b):
        key = (a, b) if a < b else (b, a)
        for other in self.edge_map.get(key, ()):
            if other != eid:
                return other
        return None

    def midpoint(self, a, b):
        key = (a, b) if a < b else (b, a)
        m = self.midpoints.get(key)
        if m is None:
            m = self.next_vertex
            self.next_vertex += 1
            self.midpoints[key] = m
            self.xs.append(0.5 * (self.xs[a] + self.xs[b]))
            self.ys.append(0.5 * (self.ys[a] + self.ys[b]))
        return m

    def bisect(self, eid):
        rec = self.elems.pop(eid)
        v0, v1, v2, _, region, gen, root = rec
        a, b, c = self.refedge_vertices(rec)
        m = self.midpoint(a, b)
        for pa, pb in ((v1, v2), (v2, v0), (v0, v1)):
            self._edge_remove(pa, pb, eid)
        i1 = self.next_id
        i2 = self.next_id + 1
        self.next_id += 2
        self.elems[i1] = [a, m, c, 1, region, gen + 1, root]
        self.elems[i2] = [m, b, c, 0, region, gen + 1, root]
        for pa, pb in ((m, c), (c, a), (a, m)):
            self._edge_add(pa, pb, i1)
        for pa, pb in ((b, c), (c, m), (m, b)):
            self._edge_add(pa, pb, i2)

    def refine_element(self, eid):
        """Bisect eid, first making its refinement edge compatible."""
        stack = [eid]
        while stack:
            if len(stack) > self.guard:
                raise MeshError(
                    "conformity closure exceeded its depth limit "
                    f"({self.guard}); the refinement-edge tags admit no "
                    "compatible bisection order")
            cur = stack[-1]
            rec = self.elems.get(cur)
            if rec is None:  # already bisected through another chain
                stack.pop()
                continue
            a, b, _ = self.refedge_vertices(rec)
            nbr = self.neighbor_across(cur, a, b)
            if nbr is None:
                self.bisect(cur)
                stack.pop()
                continue
            nrec = self.elems[nbr]
            na, nb, _ = self.refedge_vertices(nrec)
            if (min(na, nb), max(na, nb)) == (min(a, b), max(a, b)):
                self.bisect(cur)
                self.bisect(nbr)
                stack.pop()
            else:
                stack.append(nbr)

    def build(self, level, domain_area) -> Triangulation:
        ids = sorted(self.elems)
        ne = len(ids)
        ev = np.empty((ne, 3), dtype=np.int64)
        refedge = np.empty(ne, dtype=np.int64)
        region = np.empty(ne, dtype=np.int64)
        gen = np.empty(ne, dtype=np.int64)
        root = np.empty(ne, dtype=np.int64)
        for i, eid in enumerate(ids):
            v0, v1, v2, r, rg, g, rt = self.elems[eid]
            ev[i] = (v0, v1, v2)
            refedge[i] = r
            region[i] = rg
            gen[i] = g
            root[i] = rt
        coords = np.column_stack([self.xs, self.ys])
        return Triangulation(coords, ev, refedge, region, gen, root,
                             level=level, domain_area=domain_area)


def _as_id_array(ids, limit) -> np.ndarray:
    arr = np.array(sorted(int(i) for i in ids), dtype=np.int64)
    arr = np.unique(arr)
    if arr.size and (arr[0] < 0 or arr[-1] >= limit):
        raise MeshError("element id out of range")
    return arr


def refine(tri: Triangulation, marked) -> Triangulation:
    """Bisect every marked element at least once and restore conformity.

    ``parent_elements`` of the result maps each new element to its
    ancestor in ``tri``.  An empty marked set returns an identical copy.
    """
    marked = _as_id_array(marked, tri.num_elements)
    if marked.size == 0:
        return Triangulation(tri.vertex_coords, tri.elem_vertices,
                             tri.elem_refedge, tri.elem_region,
                             tri.elem_generation,
                             np.arange(tri.num_elements, dtype=np.int64),
                             level=tri.level + 1, domain_area=tri.domain_area)
    work = _Builder(tri)
    for eid in marked:
        if int(eid) in work.elems:
            work.refine_element(int(eid))
    return work.build(tri.level + 1, tri.domain_area)


def refine_times(tri: Triangulation, elems, n: int) -> Triangulation:
    """Refine the given elements through n full bisection levels.

    Descendants are bisected again until every part of each original
    element sits n generations deeper; depth already gained through
    conformity closure counts.  With n = N_BISECT_INTERIOR each original
    element gains a vertex on every side and one strictly inside.
    ``parent_elements`` of the result maps to ``tri``.
    """
    if n < 1:
        raise MeshError(f"refinement level count must be >= 1, got {n}")
    target = _as_id_array(elems, tri.num_elements)
    in_target = np.zeros(tri.num_elements, dtype=bool)
    in_target[target] = True
    gen0 = tri.elem_generation
    current = tri
    ancestors = np.arange(tri.num_elements, dtype=np.int64)
    while True:
        depth = current.elem_generation - gen0[ancestors]
        owed = np.nonzero(in_target[ancestors] & (depth < n))[0]
        if owed.size == 0:
            break
        refined = refine(current, owed)
        ancestors = ancestors[refined.parent_elements]
        current = refined
    return Triangulation(current.vertex_coords, current.elem_vertices,
                         current.elem_refedge, current.elem_region,
                         current.elem_generation, ancestors,
                         level=current.level, domain_area=tri.domain_area)


def uniform_refine(tri: Triangulation, times: int = 1) -> Triangulation:
    """Bisect every element once, `times` times in a row."""
    for _ in range(times):
        tri = refine(tri, np.arange(tri.num_elements))
    return tri


# -- neighborhoods and geometry ----------------------------------------------------


def neighbors(tri: Triangulation, t: int) -> np.ndarray:
    """Ids of all elements intersecting element t (shared vertex counts),
    including t itself.  Ascending order."""
    if t < 0 or t >= tri.num_elements:
        raise MeshError(f"element id {t} out of range")
    parts = [tri.vertex_elements(int(v)) for v in tri.elem_vertices[t]]
    return np.unique(np.concatenate(parts))


def patch(tri: Triangulation, t: int) -> np.ndarray:
    """Element ids whose union forms the neighborhood region of t."""
    return neighbors(tri, t)


def meshsize(tri: Triangulation) -> np.ndarray:
    """Per-element meshsize, the square root of the element area."""
    return np.sqrt(tri.areas())


def meshsize_max(tri: Triangulation) -> float:
    return float(meshsize(tri).max())


def element_regularity(tri: Triangulation) -> np.ndarray:
    """Per-element ratio of longest edge to inradius."""
    xy = tri.element_coords()
    e0 = np.linalg.norm(xy[:, 2] - xy[:, 1], axis=1)
    e1 = np.linalg.norm(xy[:, 0] - xy[:, 2], axis=1)
    e2 = np.linalg.norm(xy[:, 1] - xy[:, 0], axis=1)
    diam = np.maximum(e0, np.maximum(e1, e2))
    rho = 2.0 * tri.areas() / (e0 + e1 + e2)
    return diam / rho


def regularity(tri: Triangulation) -> float:
    """Mesh regularity: the worst longest-edge/inradius ratio."""
    return float(element_regularity(tri).max())


def min_angle(tri: Triangulation) -> float:
    """Smallest interior angle over all elements, in radians."""
    xy = tri.element_coords()
    angles = []
    for i in range(3):
        u = xy[:, (i + 1) % 3] - xy[:, i]
        v = xy[:, (i + 2) % 3] - xy[:, i]
        cosang = np.sum(u * v, axis=1) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.min(angles))


def barycentric(tri: Triangulation, t: int, x: float, y: float) -> np.ndarray:
    """Barycentric coordinates of (x, y) with respect to element t."""
    p = tri.element_coords([t])[0]
    mat = np.array([[p[1, 0] - p[0, 0], p[2, 0] - p[0, 0]],
                    [p[1, 1] - p[0, 1], p[2, 1] - p[0, 1]]])
    rhs = np.array([x - p[0, 0], y - p[0, 1]])
    st = np.linalg.solve(mat, rhs)
    return np.array([1.0 - st[0] - st[1], st[0], st[1]])


def locate_point(tri: Triangulation, x: float, y: float, tol: float = 1e-12):
    """Element containing (x, y) and its barycentric coordinates.

    Brute-force scan, intended for diagnostics.  The lowest element id
    wins on shared sides.  Raises MeshError if the point lies outside.
    """
    xy = tri.element_coords()
    d1 = xy[:, 1] - xy[:, 0]
    d2 = xy[:, 2] - xy[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    rx = x - xy[:, 0, 0]
    ry = y - xy[:, 0, 1]
    s = (rx * d2[:, 1] - ry * d2[:, 0]) / det
    t = (ry * d1[:, 0] - rx * d1[:, 1]) / det
    lam0 = 1.0 - s - t
    inside = (s >= -tol) & (t >= -tol) & (lam0 >= -tol)
    hits = np.nonzero(inside)[0]
    if hits.size == 0:
        raise MeshError(f"point ({x}, {y}) is outside the triangulation")
    e = int(hits[0])
    return e, np.array([lam0[e], s[e], t[e]])


# -- mesh-sequence decomposition ----------------------------------------------------


@dataclass(frozen=True)
class SequenceDecomposition:
    """Partition of one triangulation in a recorded refinement run.

    ``fully_refined`` holds elements whose whole neighbor patch was
    refined at least ``N_BISECT_INTERIOR`` times within the run,
    ``never_refined`` those whose patch was never touched, and
    ``remainder`` the rest.  Finite-run approximation of the infinite
    sequence notion.
    """
    k: int
    fully_refined: np.ndarray
    remainder: np.ndarray
    never_refined: np.ndarray

    @property
    def sizes(self):
        return (self.fully_refined.size, self.remainder.size,
                self.never_refined.size)


def _check_nested(history):
    for k in range(1, len(history)):
        prev, cur = history[k - 1], history[k]
        par = cur.parent_elements
        if par.shape != (cur.num_elements,) or par.size == 0:
            raise MeshError(f"history step {k} lacks parent links")
        if par.min() < 0 or par.max() >= prev.num_elements:
            raise MeshError(f"history step {k} parent links out of range")
        nvp = prev.num_vertices
        if cur.num_vertices < nvp or not np.array_equal(
                cur.vertex_coords[:nvp], prev.vertex_coords):
            raise MeshError(f"history step {k} is not a refinement of step {k - 1}")
        if np.any(cur.elem_generation < prev.elem_generation[par]):
            raise MeshError(f"history step {k} decreases element generation")


def decompose_sequence(history, n_bisect: int = N_BISECT_INTERIOR):
    """Classify every mesh of a recorded refinement run.

    For each step k the elements split into three disjoint sets based on
    what happened to their neighbor patches later in the run; see
    SequenceDecomposition.  The history must be a nested sequence as
    produced by repeated refine calls.
    """
    if not history:
        raise MeshError("empty history")
    _check_nested(history)
    final = history[-1]
    anc = np.arange(final.num_elements, dtype=np.int64)
    out = []
    for k in range(len(history) - 1, -1, -1):
        tri = history[k]
        if k < len(history) - 1:
            anc = history[k + 1].parent_elements[anc]
        depth_gain = final.elem_generation - tri.elem_generation[anc]
        depth = np.full(tri.num_elements, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(depth, anc, depth_gain)
        never = depth == 0
        deep = depth >= n_bisect
        # all(flag over patch of T) = AND over T's vertices of
        # all(flag over elements at that vertex)
        def patch_all(flag):
            vflag = np.ones(tri.num_vertices, dtype=np.int8)
            np.minimum.at(vflag, tri.elem_vertices.ravel(),
                          np.repeat(flag.astype(np.int8), 3))
            return vflag[tri.elem_vertices].min(axis=1).astype(bool)

        plus = patch_all(never)
        zero = patch_all(deep)
        star = ~(plus | zero)
        out.append(SequenceDecomposition(
            k, np.nonzero(zero)[0], np.nonzero(star)[0], np.nonzero(plus)[0]))
    out.reverse()
    return out


# -- plain-text format ----------------------------------------------------------------


def write_mesh(tri: Triangulation, path, eta=None):
    """Write the mesh (and optionally per-element estimator values) in the
    plain-text format; floats round-trip bit-exactly."""
    lines = ["afem-mesh 1", f"V {tri.num_vertices}"]
    for x, y in tri.vertex_coords:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"E {tri.num_elements}")
    for i in range(tri.num_elements):
        v0, v1, v2 = tri.elem_vertices[i]
        lines.append(f"{v0} {v1} {v2} {tri.elem_region[i]} {tri.elem_refedge[i]}")
    if eta is not None:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (tri.num_elements,):
            raise MeshError("eta must have one value per element")
        lines.append(f"ETA {tri.num_elements}")
        for v in eta:
            lines.append(repr(float(v)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Read a mesh written by write_mesh.

    Returns (Triangulation, eta) where eta is None if no estimator block
    is present.  Refinement history is not part of the format; the loaded
    mesh starts at level 0 and generation 0.
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    lines = [ln.strip() for ln in tokens if ln.strip()]
    if not lines or lines[0] != "afem-mesh 1":
        raise MeshError(f"{path}: not an afem-mesh file")
    pos = 1

    def expect_count(tag):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != tag:
            raise MeshError(f"{path}: expected '{tag} <n>' at line {pos + 1}")
        pos += 1
        return int(parts[1])

    nv = expect_count("V")
    coords = np.empty((nv, 2))
    for i in range(nv):
        parts = lines[pos].split()
        if len(parts) != 2:
            raise MeshError(f"{path}: bad vertex line {pos + 1}")
        coords[i] = (float(parts[0]), float(parts[1]))
        pos += 1
    ne = expect_count("E")
    ev = np.empty((ne, 3), dtype=np.int64)
    region = np.empty(ne, dtype=np.int64)
    refedge = np.empty(ne, dtype=np.int64)
    for i in range(ne):
        parts = lines[pos].split()
        if len(parts) != 5:
            raise MeshError(f"{path}: bad element line {pos + 1}")
        ev[i] = (int(parts[0]), int(parts[1]), int(parts[2]))
        region[i] = int(parts[3])
        refedge[i] = int(parts[4])
        pos += 1
    eta = None
    if pos < len(lines):
        me = expect_count("ETA")
        if me != ne:
            raise MeshError(f"{path}: ETA count {me} != element count {ne}")
        eta = np.empty(ne)
        for i in range(ne):
            eta[i] = float(lines[pos])
            pos += 1
    tri = from_arrays(coords, ev, region, refinement_edges=refedge)
    return tri, eta
