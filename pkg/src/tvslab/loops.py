"""Loop ensemble of a corridor set and its contact topology.

Every complement component of a TwoValuedSet is bounded by a loop, the
fringe of cluster vertices pressed against it.  Two loops make contact
where the set carries both wall values at once: a fringe vertex whose
cut edges cross at two different levels toward the two components (the
opposite corridor walls for a two-valued set, distinct discovery stages
for the staged-distance sets).  A single witnessed vertex is a point
contact, a connected run of them is a side contact.  Plain fringe
sharing without a two-level witness is proximity, not contact: two
same-wall pockets separated by a one-vertex corridor channel are
genuinely divided by the set, and counting them as touching would
manufacture adjacency the set does not have.  The contact graphs,
boundary hop distances, and a parity rule for rebuilding labels from
bare geometry live here.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components as _cc

from .extract import _connected_labels

__all__ = [
    "LoopGraph",
    "DistanceProfile",
    "ConnectivityReport",
    "extract_loops",
    "build_adjacency",
    "connectivity_report",
    "recover_labels_by_parity",
    "percolation_probe",
    "boundary_arc",
    "local_finiteness_census",
    "distance_profile",
    "loop_graph_to_json",
]


@dataclass
class LoopGraph:
    """Loops of one corridor set plus their contact graphs.

    ``loops[i]`` holds the fringe vertex ids of component i (cluster
    side, ring included).  ``point_edges`` and ``side_edges`` are
    (m, 2) arrays of loop index pairs, i < j, filled by
    ``build_adjacency``; until then they are None.  ``contacts`` keeps
    the per-cut-edge (fringe vertex, loop, level) table the adjacency
    builder consumes.
    """

    domain: object
    loops: list
    labels: np.ndarray            # per-loop harmonic value
    mixed: np.ndarray             # per-loop attribution noise flag
    touches_boundary: np.ndarray
    contacts: np.ndarray = None   # (n_cut, 3) int64
    point_edges: np.ndarray = None
    side_edges: np.ndarray = None
    min_side_len: int = None

    @property
    def n_loops(self):
        return len(self.loops)

    @property
    def adjacency_built(self):
        return self.point_edges is not None

    def loop_coords(self, i):
        return self.domain.coords[self.loops[i]]

    def loop_diameter(self, i):
        """Extent in the max metric on lattice coordinates."""
        c = self.loop_coords(i)
        if len(c) == 0:
            return 0
        span = c.max(axis=0) - c.min(axis=0)
        return int(span.max())


@dataclass
class DistanceProfile:
    """Hop counts from the boundary through each contact graph.

    d = 1 on boundary-touching loops, 1 + shortest path to one
    otherwise, inf when unreachable.  Point contacts are a superset of
    side contacts, so d_point <= d_side everywhere.
    """

    d_point: np.ndarray
    d_side: np.ndarray


@dataclass
class ConnectivityReport:
    """Census of both contact graphs for one loop ensemble."""

    n_loops: int
    n_components_side: int        # counted with the boundary merged
    n_components_point: int
    density_side: float           # edges per loop
    density_point: float
    point_only_fraction: float    # |E_p minus E_s| / |E_p|, nan if E_p empty
    giant_fraction_side: float    # largest merged component / n_loops
    giant_fraction_point: float
    bipartite_violations: int     # equal-label point contacts, unmixed only

    def to_json(self):
        out = dict(self.__dict__)
        for k, v in out.items():
            if isinstance(v, float) and math.isnan(v):
                out[k] = None
        return out


# ---------------------------------------------------------------------------
# loop extraction


def extract_loops(tvs):
    """Fringe loop of every complement component.

    The loop of a component is the set of cluster vertices incident to
    one of its cut edges.  Deterministic given the set; label and mixed
    flags carry over from the components.  Per-cut-edge crossing levels
    ride along when the set has them (direct extractions do), because
    the adjacency builder needs the two-wall witness.
    """
    dom = tvs.domain
    edges = dom.edges
    cut = tvs.cut_edges
    n_loops = tvs.n_components

    loops = [np.empty(0, dtype=np.int64) for _ in range(n_loops)]
    contacts = None
    if n_loops and len(cut):
        eu, ev = edges[cut, 0], edges[cut, 1]
        on_u = tvs.cluster_mask[eu]
        fringe = np.where(on_u, eu, ev)
        comp = np.where(on_u, ev, eu)
        cids = tvs.component_id[comp]
        order = np.argsort(cids, kind="stable")
        bounds = np.searchsorted(cids[order], np.arange(n_loops + 1))
        for i in range(n_loops):
            loops[i] = np.unique(fringe[order[bounds[i]:bounds[i + 1]]])
        if tvs.cut_levels is not None:
            contacts = np.column_stack([
                fringe, cids, tvs.cut_levels.astype(np.int64)])

    boundary = tvs.domain.boundary_mask
    touches = np.array([bool(boundary[lp].any()) for lp in loops])
    return LoopGraph(
        domain=dom,
        loops=loops,
        labels=np.array([c.label for c in tvs.components]),
        mixed=np.array([c.mixed_flag for c in tvs.components]),
        touches_boundary=touches,
        contacts=contacts)


def _has_run(domain, shared, min_side_len):
    """True when ``shared`` contains a lattice-connected run of
    at least min_side_len vertices.

    Works on the shared set alone: neighbours are looked up by
    coordinate, so the cost scales with the overlap, not the domain.
    """
    if len(shared) < min_side_len:
        return False
    coords = domain.coords[shared]
    index = {(int(x), int(y)): k for k, (x, y) in enumerate(coords)}
    parent = list(range(len(shared)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for k, (x, y) in enumerate(coords):
        for nb in ((int(x) + 1, int(y)), (int(x), int(y) + 1)):
            j = index.get(nb)
            if j is not None:
                ri, rj = find(k), find(j)
                if ri != rj:
                    parent[ri] = rj
    sizes = np.bincount([find(k) for k in range(len(shared))])
    return bool((sizes >= min_side_len).any())


def build_adjacency(lg, min_side_len=2):
    """Fill both contact edge sets and return a new LoopGraph.

    Point contact: some fringe vertex crosses at two different levels
    toward the two components, so the set holds both values there.
    Side contact: the witnessed vertices of the pair contain a lattice
    run of >= min_side_len, the finite-mesh stand-in for sharing a
    segment.
    """
    if min_side_len < 2:
        raise ValueError(
            "min_side_len must be >= 2: one shared vertex is a point")
    empty = np.empty((0, 2), dtype=np.int64)
    if lg.n_loops == 0:
        return replace(lg, point_edges=empty, side_edges=empty,
                       min_side_len=int(min_side_len))
    if lg.contacts is None:
        raise ValueError("set carries no crossing levels; contact "
                         "topology needs a direct extraction")

    # group cut edges by fringe vertex, then pair loops that cross at
    # two different levels toward the same vertex
    verts = lg.contacts[:, 0]
    order = np.argsort(verts, kind="stable")
    tab = lg.contacts[order]
    starts = np.flatnonzero(np.r_[True, tab[1:, 0] != tab[:-1, 0]])
    starts = np.r_[starts, len(tab)]

    witness = {}
    for s, e in zip(starts[:-1], starts[1:]):
        if e - s < 2:
            continue
        rows = tab[s:e]
        by_level = {}
        for c, l in zip(rows[:, 1], rows[:, 2]):
            by_level.setdefault(int(l), set()).add(int(c))
        if len(by_level) < 2:
            continue
        v = int(rows[0, 0])
        levels = sorted(by_level)
        for k, la in enumerate(levels):
            for lb in levels[k + 1:]:
                for i in by_level[la]:
                    for j in by_level[lb]:
                        if i != j:
                            key = (i, j) if i < j else (j, i)
                            witness.setdefault(key, []).append(v)

    point, side = [], []
    for (i, j), verts_ij in sorted(witness.items()):
        point.append((i, j))
        if _has_run(lg.domain, np.unique(verts_ij), min_side_len):
            side.append((i, j))

    as_array = lambda ps: np.array(ps, dtype=np.int64).reshape(-1, 2)
    return replace(lg, point_edges=as_array(point),
                   side_edges=as_array(side),
                   min_side_len=int(min_side_len))


# ---------------------------------------------------------------------------
# contact graph census


def _loop_csgraph(n_loops, edge_pairs, merge_mask=None):
    """Adjacency over loops, optionally with an extra node standing in
    for the boundary circle, wired to every flagged loop."""
    extra = 0 if merge_mask is None else 1
    n = n_loops + extra
    rows = list(edge_pairs[:, 0]) if len(edge_pairs) else []
    cols = list(edge_pairs[:, 1]) if len(edge_pairs) else []
    if merge_mask is not None:
        for i in np.flatnonzero(merge_mask):
            rows.append(n_loops)
            cols.append(int(i))
    g = scipy.sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return g


def _census(lg, edge_pairs):
    g = _loop_csgraph(lg.n_loops, edge_pairs, lg.touches_boundary)
    n_comp, lab = _cc(g, directed=False)
    # the virtual boundary node never counts as a component of its own
    if not lg.touches_boundary.any():
        n_comp -= 1
    sizes = np.bincount(lab[:lg.n_loops]) if lg.n_loops else np.array([0])
    giant = sizes.max() / lg.n_loops if lg.n_loops else 0.0
    return int(n_comp), float(giant)


def connectivity_report(lg):
    """Structure summary used by the phase experiments."""
    if not lg.adjacency_built:
        raise ValueError("build_adjacency first")
    n = lg.n_loops
    n_side, giant_side = _census(lg, lg.side_edges)
    n_point, giant_point = _census(lg, lg.point_edges)

    ep = lg.point_edges
    point_only = math.nan
    if len(ep):
        side_set = {tuple(e) for e in lg.side_edges}
        extra = sum(1 for e in ep if tuple(e) not in side_set)
        point_only = extra / len(ep)

    violations = 0
    for i, j in ep:
        if lg.mixed[i] or lg.mixed[j]:
            continue
        if lg.labels[i] == lg.labels[j]:
            violations += 1

    return ConnectivityReport(
        n_loops=n,
        n_components_side=n_side,
        n_components_point=n_point,
        density_side=len(lg.side_edges) / n if n else 0.0,
        density_point=len(ep) / n if n else 0.0,
        point_only_fraction=point_only,
        giant_fraction_side=giant_side,
        giant_fraction_point=giant_point,
        bipartite_violations=int(violations))


# ---------------------------------------------------------------------------
# label recovery


def recover_labels_by_parity(lg, a, b, anchor=None):
    """Rebuild labels from contact parity alone.

    Labels alternate across point contacts, so each contact component
    is two-colorable and one known loop settles the rest.  Boundary-
    touching loops vote for the -a side of their component when the
    walls differ (majority wins: a stray mislabelled toucher must not
    poison its neighbours); the symmetric corridor carries no boundary
    hint and needs an ``anchor`` (loop index, label), which overrides
    votes in its own component.  Components without any hint, or with
    an odd contact cycle through attribution noise, stay NaN: the rule
    never guesses.  Returns (labels, coverage fraction).
    """
    if not lg.adjacency_built:
        raise ValueError("build_adjacency first")
    symmetric = math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)
    if symmetric and anchor is None:
        raise ValueError("symmetric walls carry no boundary hint: "
                         "an anchor loop label is required")

    n = lg.n_loops
    out = np.full(n, np.nan)
    if n == 0:
        return out, 1.0

    anchor_idx = None
    anchor_label = None
    if anchor is not None:
        anchor_idx, lab = anchor
        anchor_idx = int(anchor_idx)
        if not (0 <= anchor_idx < n):
            raise ValueError("anchor index out of range")
        if not (math.isclose(lab, -a) or math.isclose(lab, b)):
            raise ValueError("anchor label must sit on a wall")
        anchor_label = -a if lab < 0 else b

    neighbors = [[] for _ in range(n)]
    for i, j in lg.point_edges:
        neighbors[i].append(int(j))
        neighbors[j].append(int(i))

    color = np.full(n, -1, dtype=np.int64)
    comp = np.full(n, -1, dtype=np.int64)
    n_comp = 0
    consistent = []
    for root in range(n):
        if comp[root] >= 0:
            continue
        cid = n_comp
        n_comp += 1
        ok = True
        comp[root] = cid
        color[root] = 0
        queue = [root]
        head = 0
        while head < len(queue):
            i = queue[head]
            head += 1
            for j in neighbors[i]:
                if comp[j] < 0:
                    comp[j] = cid
                    color[j] = 1 - color[i]
                    queue.append(j)
                elif color[j] == color[i]:
                    ok = False
        consistent.append(ok)

    votes = np.zeros((n_comp, 2), dtype=np.int64)
    first_seed = np.full(n_comp, n, dtype=np.int64)
    if not symmetric:
        for i in np.flatnonzero(lg.touches_boundary):
            votes[comp[i], color[i]] += 1
            first_seed[comp[i]] = min(first_seed[comp[i]], i)

    for cid in range(n_comp):
        if not consistent[cid]:
            continue
        minus_color = None
        if anchor_idx is not None and comp[anchor_idx] == cid:
            want = color[anchor_idx]
            minus_color = want if anchor_label < 0 else 1 - want
        elif votes[cid].sum():
            if votes[cid, 0] != votes[cid, 1]:
                minus_color = int(np.argmax(votes[cid]))
            else:
                # dead tie: follow the lowest-index voting loop
                minus_color = int(color[first_seed[cid]])
        if minus_color is None:
            continue
        members = np.flatnonzero(comp == cid)
        out[members] = np.where(color[members] == minus_color, -a, b)

    coverage = float(np.mean(~np.isnan(out)))
    return out, coverage


# ---------------------------------------------------------------------------
# boundary percolation


def boundary_arc(domain, angle_lo, angle_hi):
    """Ring vertices with polar angle in [angle_lo, angle_hi)."""
    ring = np.flatnonzero(domain.boundary_mask)
    ang = np.arctan2(domain.coords[ring, 1], domain.coords[ring, 0])
    lo = math.remainder(angle_lo, 2 * math.pi)
    hi = math.remainder(angle_hi, 2 * math.pi)
    if lo <= hi:
        keep = (ang >= lo) & (ang < hi)
    else:
        keep = (ang >= lo) | (ang < hi)
    return ring[keep]


def percolation_probe(tvs, arc1, arc2):
    """Do two boundary arcs hook up through the bulk of the set?

    Connectivity runs over staying edges among interior cluster
    vertices plus the arc vertices themselves; the rest of the ring is
    fenced off, otherwise every probe would succeed along the circle.
    """
    arc1 = np.asarray(arc1, dtype=np.int64)
    arc2 = np.asarray(arc2, dtype=np.int64)
    if len(arc1) == 0 or len(arc2) == 0:
        raise ValueError("empty boundary arc")
    if len(np.intersect1d(arc1, arc2)):
        raise ValueError("boundary arcs overlap")
    dom = tvs.domain
    if not (dom.boundary_mask[arc1].all() and dom.boundary_mask[arc2].all()):
        raise ValueError("arcs must consist of boundary vertices")
    if tvs.stay_edges is None:
        raise ValueError("set carries no edge data; use a direct extraction")

    allowed = tvs.cluster_mask & ~dom.boundary_mask
    allowed[arc1] = True
    allowed[arc2] = True
    edges = dom.edges[tvs.stay_edges]
    sub = edges[allowed[edges[:, 0]] & allowed[edges[:, 1]]]
    # each arc enters the union as a whole boundary segment, so it is
    # internally connected by fiat, not through staying edges (the
    # domain carries no ring-ring edges anyway)
    chains = [np.column_stack([arc[:-1], arc[1:]])
              for arc in (arc1, arc2) if len(arc) > 1]
    if chains:
        sub = np.vstack([sub] + chains) if len(sub) else np.vstack(chains)
    lab = _connected_labels(dom.n_total, sub)
    return bool(len(np.intersect1d(lab[arc1], lab[arc2])))


# ---------------------------------------------------------------------------
# censuses


def local_finiteness_census(lg, eps_fractions):
    """Loops larger than each fraction of the domain radius.

    A set that stays locally finite under refinement keeps these
    counts bounded as the radius grows.
    """
    diam = np.array([lg.loop_diameter(i) for i in range(lg.n_loops)])
    radius = lg.domain.radius
    return {float(eps): int((diam > eps * radius).sum())
            for eps in eps_fractions}


def distance_profile(lg):
    """Hop distance of every loop from the boundary, per contact graph."""
    if not lg.adjacency_built:
        raise ValueError("build_adjacency first")
    n = lg.n_loops
    out = []
    for pairs in (lg.point_edges, lg.side_edges):
        d = np.full(n, np.inf)
        queue = []
        for i in np.flatnonzero(lg.touches_boundary):
            d[i] = 1.0
            queue.append(int(i))
        neighbors = [[] for _ in range(n)]
        for i, j in pairs:
            neighbors[i].append(int(j))
            neighbors[j].append(int(i))
        head = 0
        while head < len(queue):
            i = queue[head]
            head += 1
            for j in neighbors[i]:
                if d[j] > d[i] + 1:
                    d[j] = d[i] + 1
                    queue.append(j)
        out.append(d)
    return DistanceProfile(d_point=out[0], d_side=out[1])


def loop_graph_to_json(lg):
    """Adjacency-list export with labels and flags."""
    def edge_list(pairs):
        return None if pairs is None else [[int(i), int(j)] for i, j in pairs]

    return {
        "n_loops": lg.n_loops,
        "labels": [float(x) for x in lg.labels],
        "mixed": [bool(x) for x in lg.mixed],
        "touches_boundary": [bool(x) for x in lg.touches_boundary],
        "loop_sizes": [int(len(lp)) for lp in lg.loops],
        "point_edges": edge_list(lg.point_edges),
        "side_edges": edge_list(lg.side_edges),
        "min_side_len": lg.min_side_len,
    }
