"""Two-valued set extraction on the metric graph.

A field sample plus per-edge corridor marks determine which vertices
stay connected to the boundary ring inside [-a, b]: that corridor
cluster is the lattice stand-in for the two-valued set, and the
connected components of its complement play the role of the loop
interiors.  Each component receives a wall label from the crossing
levels recorded on its surrounding cut edges; at finite mesh those
levels can disagree, so a majority label is kept alongside an explicit
mixed flag instead of silently trusting either wall.

The iterated builder grows the same object in stages: explore a first
corridor, then recurse into every complement component on the
conditional field (original values minus the component label) with
fresh marks, until every label lands on -a or b.  All stage corridors
follow one rule, "continue with (a + s, b - s) after a label s", with
the first-stage corridor chosen by whether the walls are multiples of
lambda; the mirrored problem (negated field, swapped walls) covers
narrow upper walls.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components as _cc

from .bridge import EdgeExtrema, sample_edge_marks
from .lattice import LAMBDA, TWO_LAMBDA, FieldSample, domain_from_vertices
from .stats import wilson_ci

# wall arithmetic tolerance; corridors live within a few lambda of zero
_WALL_TOL = 1e-9
# recursion guard for the staged construction: the label walk absorbs
# at the walls geometrically fast, depths past a few dozen mean a bug
_MAX_STAGE_DEPTH = 300

_SET_MAGIC = b"TVSA"


@dataclass
class Component:
    """One connected piece of the complement with its wall attribution."""

    vertices: np.ndarray   # vertex ids into the domain, interior only
    lower_wall: float      # -a
    upper_wall: float      # b, +inf for one-sided sets
    n_cut_lower: int       # surrounding cut edges recorded at -a
    n_cut_upper: int
    label: float
    mixed_flag: bool

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def adjacent_cut_levels(self):
        """Wall level -> cut edge count, only levels actually crossed."""
        out = {}
        if self.n_cut_lower:
            out[self.lower_wall] = int(self.n_cut_lower)
        if self.n_cut_upper and math.isfinite(self.upper_wall):
            out[self.upper_wall] = int(self.n_cut_upper)
        return out


@dataclass
class TwoValuedSet:
    """Corridor cluster of one sample plus its labelled complement.

    ``cluster_mask`` covers all vertices and is True on the ring: the
    boundary belongs to the set, which keeps cluster-union-boundary
    connected by construction.  ``component_id`` maps every vertex to
    its complement component, -1 on the cluster.
    """

    a: float
    b: float
    domain: object               # LatticeDomain
    cluster_mask: np.ndarray     # (n_total,) bool
    cut_edges: np.ndarray        # indices into domain.edges
    components: list
    component_id: np.ndarray     # (n_total,) int64, -1 on the cluster
    sample_checksum: float
    marks_source: str
    stay_edges: np.ndarray = None  # staying edge ids; None for staged sets
    cut_levels: np.ndarray = None  # component-side level per cut edge

    @property
    def n_components(self):
        return len(self.components)

    @property
    def harmonic_labels(self):
        return np.array([c.label for c in self.components])

    @property
    def mixed_count(self):
        return sum(1 for c in self.components if c.mixed_flag)

    @property
    def cluster_vertices(self):
        return np.flatnonzero(self.cluster_mask)

    @property
    def cluster_fraction(self):
        """Fraction of interior vertices absorbed into the cluster."""
        return float(self.cluster_mask[self.domain.interior_mask].mean())

    def component_at(self, vertex):
        cid = int(self.component_id[vertex])
        return None if cid < 0 else self.components[cid]


@dataclass
class FirstPassageSet:
    """One-sided variant: everything reached before dipping under -a."""

    a: float
    domain: object
    cluster_mask: np.ndarray
    cut_edges: np.ndarray
    components: list             # every label is -a
    component_id: np.ndarray
    sample_checksum: float
    marks_source: str
    stay_edges: np.ndarray = None
    cut_levels: np.ndarray = None

    @property
    def n_components(self):
        return len(self.components)

    @property
    def cluster_vertices(self):
        return np.flatnonzero(self.cluster_mask)

    @property
    def cluster_fraction(self):
        return float(self.cluster_mask[self.domain.interior_mask].mean())


def _connected_labels(n, edge_pairs):
    """Component label per vertex using only the given edges."""
    if len(edge_pairs):
        w = np.ones(len(edge_pairs))
        g = scipy.sparse.coo_matrix(
            (w, (edge_pairs[:, 0], edge_pairs[:, 1])), shape=(n, n))
    else:
        g = scipy.sparse.coo_matrix((n, n))
    return _cc(g, directed=False)[1]


def _extract_core(sample, marks, a, b):
    """Cluster, cut edges, and labelled components for one corridor.

    Pure function of (sample, marks): no randomness in here.
    """
    dom = sample.domain
    edges = dom.edges
    n = dom.n_total

    # ring-seeded cluster through staying edges; ring vertices are
    # seeds even when isolated because the boundary circle connects
    # them outside the domain
    lab = _connected_labels(n, edges[marks.stays])
    cluster = np.isin(lab, np.unique(lab[dom.boundary_mask]))

    in_u = cluster[edges[:, 0]]
    in_v = cluster[edges[:, 1]]
    cut = np.flatnonzero(in_u ^ in_v)

    # complement components over every lattice edge between non-cluster
    # vertices; bridge events are irrelevant once both sides are cut off
    lab2 = _connected_labels(n, edges[~in_u & ~in_v])
    free_ids = np.flatnonzero(~cluster)
    comp_of = np.full(n, -1, dtype=np.int64)
    n_comp = 0
    if len(free_ids):
        uniq, inv = np.unique(lab2[free_ids], return_inverse=True)
        comp_of[free_ids] = inv
        n_comp = len(uniq)

    comps = []
    lev = np.zeros(len(cut), dtype=np.int8)
    if n_comp:
        eu, ev = edges[cut, 0], edges[cut, 1]
        comp_end = np.where(cluster[eu], ev, eu)
        # label seen from the component side of each cut edge
        lev = np.where(cluster[eu],
                       marks.level_from_v[cut], marks.level_from_u[cut])
        cids = comp_of[comp_end]
        n_minus = np.bincount(cids[lev < 0], minlength=n_comp)
        n_plus = np.bincount(cids[lev > 0], minlength=n_comp)

        order = np.argsort(comp_of[free_ids], kind="stable")
        sorted_ids = free_ids[order]
        bounds = np.searchsorted(comp_of[sorted_ids], np.arange(n_comp + 1))
        for k in range(n_comp):
            nm, npl = int(n_minus[k]), int(n_plus[k])
            # the lattice graph is connected, so every component meets
            # the cluster across at least one (non-staying) cut edge
            assert nm + npl > 0
            comps.append(Component(
                vertices=sorted_ids[bounds[k]:bounds[k + 1]],
                lower_wall=-a, upper_wall=b,
                n_cut_lower=nm, n_cut_upper=npl,
                label=(-a if nm >= npl else b),   # ties go to the lower wall
                mixed_flag=(nm > 0 and npl > 0)))
    return cluster, cut, comps, comp_of, np.asarray(lev, dtype=np.int8)


def _check_marks(sample, marks, a, b):
    if marks.n_edges != sample.domain.n_edges:
        raise ValueError("marks were sampled on a different domain")
    same_b = (math.isinf(b) and math.isinf(marks.b)) or \
        math.isclose(marks.b, b, rel_tol=1e-12, abs_tol=1e-12)
    if not (math.isclose(marks.a, a, rel_tol=1e-12, abs_tol=1e-12) and same_b):
        raise ValueError("marks were sampled for different walls")


def extract_tvs(sample, marks, a, b):
    """Corridor cluster of [-a, b] with labelled complement components.

    The cluster is every vertex connected to the boundary ring through
    staying edges.  Complement components are labelled by the crossing
    levels on their surrounding cut edges; disagreeing levels set
    ``mixed_flag`` and keep a majority label, never a silent relabel.
    """
    if a <= 0 or b <= 0 or not math.isfinite(b):
        raise ValueError("walls must satisfy 0 < a, 0 < b < inf")
    _check_marks(sample, marks, a, b)
    if a + b < TWO_LAMBDA - _WALL_TOL:
        warnings.warn(
            "corridor narrower than 2*lambda: the continuum set is empty "
            "and the lattice cluster degenerates with mesh",
            stacklevel=2)
    cluster, cut, comps, comp_of, lev = _extract_core(sample, marks, a, b)
    return TwoValuedSet(
        a=float(a), b=float(b), domain=sample.domain,
        cluster_mask=cluster, cut_edges=cut, components=comps,
        component_id=comp_of,
        sample_checksum=EdgeExtrema.fingerprint(sample.values),
        marks_source=marks.source,
        stay_edges=np.flatnonzero(marks.stays), cut_levels=lev)


def extract_fps(sample, marks_one_sided, a):
    """One-sided cluster: vertices reached while staying above -a."""
    if a <= 0:
        raise ValueError("a must be positive")
    if not math.isinf(marks_one_sided.b):
        raise ValueError("one-sided marks required (b = inf)")
    _check_marks(sample, marks_one_sided, a, math.inf)
    cluster, cut, comps, comp_of, lev = _extract_core(
        sample, marks_one_sided, a, math.inf)
    return FirstPassageSet(
        a=float(a), domain=sample.domain,
        cluster_mask=cluster, cut_edges=cut, components=comps,
        component_id=comp_of,
        sample_checksum=EdgeExtrema.fingerprint(sample.values),
        marks_source=marks_one_sided.source,
        stay_edges=np.flatnonzero(marks_one_sided.stays), cut_levels=lev)


def component_label_frequency(tvs_batch):
    """Frequency of the lower label at the domain center.

    Looks at the component containing the center vertex in each set,
    skipping sets where the center fell in the cluster and excluding
    mixed components.  Returns (p_minus, wilson_interval); the gambler's
    ruin answer is P(label = -a) = b / (a + b).
    """
    batch = list(tvs_batch)
    if not batch:
        raise ValueError("empty batch")
    a, b = batch[0].a, batch[0].b
    for t in batch[1:]:
        if not (math.isclose(t.a, a) and math.isclose(t.b, b)):
            raise ValueError("batch mixes corridor parameters")
    hits = used = 0
    for t in batch:
        comp = t.component_at(t.domain.center_index)
        if comp is None or comp.mixed_flag:
            continue
        used += 1
        hits += comp.label < 0
    if used == 0:
        raise ValueError("no usable center component in the batch")
    return hits / used, wilson_ci(hits, used)


# ---------------------------------------------------------------------------
# staged construction


def _stage_seed(seed, k):
    """Independent per-stage seed stream, stable across runs."""
    return int(np.random.SeedSequence([int(seed), int(k)])
               .generate_state(1, np.uint64)[0])


def _near_multiple(x, unit=LAMBDA):
    return abs(x / unit - round(x / unit)) * unit <= _WALL_TOL


def _index_grid(dom):
    """Coordinate -> vertex id lookup over the bounding box."""
    cached = dom._cache.get("index_grid")
    if cached is None:
        xmin = int(dom.coords[:, 0].min())
        ymin = int(dom.coords[:, 1].min())
        w = int(dom.coords[:, 0].max()) - xmin + 1
        h = int(dom.coords[:, 1].max()) - ymin + 1
        g = np.full((h, w), -1, dtype=np.int64)
        g[dom.coords[:, 1] - ymin, dom.coords[:, 0] - xmin] = \
            np.arange(dom.n_total)
        cached = (g, xmin, ymin)
        dom._cache["index_grid"] = cached
    return cached


def _ids_for_coords(dom, coords):
    g, xmin, ymin = _index_grid(dom)
    ids = g[coords[:, 1] - ymin, coords[:, 0] - xmin]
    assert (ids >= 0).all()
    return ids


def _construct(sample, a, b, ctx, to_root, depth):
    """Recursive staged exploration of the corridor [-a, b].

    Accumulates the explored cluster into ``ctx.cluster`` (a mask over
    the root domain; ``to_root`` maps this stage's vertex ids into it)
    and returns components as (root_vertex_ids, label, mixed) with
    labels relative to this stage's conditional field.  Every direct
    exploration consumes one seed from the shared counter, so the whole
    tree is reproducible, and appends a cluster snapshot when stage
    logging is on.
    """
    if depth > _MAX_STAGE_DEPTH:
        raise RuntimeError("staged construction exceeded the depth cap")
    dom = sample.domain

    if a <= _WALL_TOL or b <= _WALL_TOL:
        # degenerate corridor: nothing gets explored, the region keeps
        # its current label
        return [(to_root[dom.interior_mask], 0.0, False)]

    if abs(a + b - TWO_LAMBDA) <= _WALL_TOL:
        marks = ctx.marks_factory(
            sample, a, b, _stage_seed(ctx.seed, next(ctx.counter)))
        cluster, _, comps, _, _ = _extract_core(sample, marks, a, b)
        ctx.cluster[to_root[cluster]] = True
        if ctx.stage_log is not None:
            ctx.stage_log.append(ctx.cluster.copy())
        return [(to_root[c.vertices], c.label, c.mixed_flag) for c in comps]

    if a + b < TWO_LAMBDA - _WALL_TOL:
        raise ValueError("no construction schedule below width 2*lambda")

    if _near_multiple(a) and _near_multiple(b):
        a1, b1 = LAMBDA, LAMBDA
    elif _near_multiple(a + b):
        # peel a sub-lambda offset first so the rest is an integer pair
        u = a - math.floor(a / LAMBDA + _WALL_TOL / LAMBDA) * LAMBDA
        n2 = round((a + b) / LAMBDA) - round((a - u) / LAMBDA)
        if n2 < 2:
            u += LAMBDA
        a1, b1 = u, TWO_LAMBDA - u
    else:
        if b <= LAMBDA + _WALL_TOL:
            # mirrored problem: same set for the negated field with
            # swapped walls; flip the labels back on the way out
            neg = FieldSample(domain=dom, values=-sample.values,
                              seed=sample.seed, method=sample.method)
            comps = _construct(neg, b, a, ctx, to_root, depth + 1)
            return [(vs, -lab, mx) for vs, lab, mx in comps]
        m = math.floor((a + b) / LAMBDA)
        a1, b1 = a, m * LAMBDA - a

    out = []
    for verts, s, mixed in _construct(sample, a1, b1, ctx, to_root, depth + 1):
        if abs(s + a) <= _WALL_TOL or abs(s - b) <= _WALL_TOL:
            out.append((verts, s, mixed))
            continue
        if mixed:
            # a mixed label is majority noise, not a conditional value;
            # recursing on it re-centers the field on an artifact and can
            # cycle forever on large components.  Stop here and snap to
            # the nearer wall, keeping the flag for downstream filters.
            out.append((verts, -a if abs(s + a) <= abs(s - b) else b, True))
            continue
        # continue inside the component on the conditional field; the
        # sub-ring sits on explored vertices and carries value 0.
        # lattice coordinates are absolute, so the sub-domain indexes
        # into the root (for ids) and the parent (for values) alike
        sub_dom = domain_from_vertices(ctx.root_coords[verts])
        pid_root = ctx.root_ids_for(sub_dom.coords)
        pid_here = _ids_for_coords(dom, sub_dom.coords)
        vals = np.zeros(sub_dom.n_total)
        inter = sub_dom.interior_mask
        vals[inter] = sample.values[pid_here[inter]] - s
        sub = FieldSample(domain=sub_dom, values=vals,
                          seed=sample.seed, method="conditional")
        comps2 = _construct(sub, a + s, b - s, ctx, pid_root, depth + 1)
        for vs2, s2, mx2 in comps2:
            out.append((vs2, s + s2, mixed or mx2))
    return out


class _BuildContext:
    """Shared state for one staged construction run."""

    def __init__(self, root_sample, marks_factory, seed, stage_log):
        self.root_domain = root_sample.domain
        self.root_coords = self.root_domain.coords
        self.marks_factory = marks_factory
        self.seed = seed
        self.counter = itertools.count()
        self.cluster = np.zeros(self.root_domain.n_total, dtype=bool)
        self.stage_log = stage_log

    def root_ids_for(self, coords):
        return _ids_for_coords(self.root_domain, coords)


def iterated_construction(sample, marks_factory, a, b, seed, stage_log=None):
    """Build the corridor set in stages and return it as a TwoValuedSet.

    Runs the staged exploration on the same field sample with fresh
    marks per stage (drawn by ``marks_factory``, default the
    independent corridor sampler).  With a + b = 2 lambda the schedule
    is a single stage and the result equals the direct extraction on
    the stage marks.  Components flagged mixed stop recursing: their
    majority label is attribution noise and re-centering on it does not
    converge.  Pass a list as ``stage_log`` to receive a copy of the
    accumulated cluster mask after every stage.
    """
    if marks_factory is None:
        marks_factory = sample_edge_marks
    if a <= 0 or b <= 0:
        raise ValueError("walls must satisfy a > 0, b > 0")
    if a + b < TWO_LAMBDA - _WALL_TOL:
        raise ValueError("no construction schedule below width 2*lambda")
    dom = sample.domain
    ctx = _BuildContext(sample, marks_factory, seed, stage_log)
    raw = _construct(sample, float(a), float(b), ctx,
                     np.arange(dom.n_total), 0)
    cluster = ctx.cluster
    # the boundary ring always belongs to the set
    cluster[dom.boundary_mask] = True

    comp_of = np.full(dom.n_total, -1, dtype=np.int64)
    for k, (vs, _, _) in enumerate(raw):
        comp_of[vs] = k
    assert (comp_of[~cluster] >= 0).all()

    edges = dom.edges
    in_u = cluster[edges[:, 0]]
    in_v = cluster[edges[:, 1]]
    cut = np.flatnonzero(in_u ^ in_v)
    comp_end = np.where(in_u[cut], edges[cut, 1], edges[cut, 0])
    n_cut = np.bincount(comp_of[comp_end], minlength=len(raw))

    comps = []
    for k, (vs, lab, mixed) in enumerate(raw):
        assert abs(lab + a) <= _WALL_TOL or abs(lab - b) <= _WALL_TOL
        label = -a if abs(lab + a) <= abs(lab - b) else b
        comps.append(Component(
            vertices=np.asarray(vs, dtype=np.int64),
            lower_wall=-float(a), upper_wall=float(b),
            n_cut_lower=int(n_cut[k]) if label < 0 else 0,
            n_cut_upper=int(n_cut[k]) if label > 0 else 0,
            label=label, mixed_flag=mixed))
    return TwoValuedSet(
        a=float(a), b=float(b), domain=dom,
        cluster_mask=cluster, cut_edges=cut, components=comps,
        component_id=comp_of,
        sample_checksum=EdgeExtrema.fingerprint(sample.values),
        marks_source="iterated")


def monotonicity_check(tvs_small, tvs_big):
    """Sample-wise cluster inclusion for nested corridors.

    Requires both sets to come from the same sample with coupled
    extrema marks, otherwise inclusion is not meaningful point by
    point.  Comparable corridors in the wrong order simply return
    False on any nontrivial sample; incomparable corridors raise.
    """
    inner = (tvs_small.a <= tvs_big.a + _WALL_TOL
             and tvs_small.b <= tvs_big.b + _WALL_TOL)
    outer = (tvs_big.a <= tvs_small.a + _WALL_TOL
             and tvs_big.b <= tvs_small.b + _WALL_TOL)
    if not (inner or outer):
        raise ValueError("corridors are not nested")
    if tvs_small.sample_checksum != tvs_big.sample_checksum:
        raise ValueError("sets come from different samples")
    if not (tvs_small.marks_source == "extrema"
            and tvs_big.marks_source == "extrema"):
        raise ValueError("inclusion check needs coupled extrema marks")
    return bool(np.all(tvs_big.cluster_mask[tvs_small.cluster_mask]))


# ---------------------------------------------------------------------------
# export


def set_summary(tvs):
    """JSON-ready digest: parameters, labels, mixing, volume."""
    return {
        "a": tvs.a,
        "b": tvs.b if math.isfinite(getattr(tvs, "b", math.inf)) else None,
        "n_components": tvs.n_components,
        "labels": [c.label for c in tvs.components],
        "mixed_count": sum(1 for c in tvs.components if c.mixed_flag),
        "n_cut_edges": int(len(tvs.cut_edges)),
        "cluster_fraction": tvs.cluster_fraction,
    }


def save_tvs(tvs, path):
    """Binary container: JSON summary + vertex membership arrays."""
    meta = set_summary(tvs)
    stays = tvs.stay_edges
    meta.update({
        "n_total": int(tvs.domain.n_total),
        "mixed": [bool(c.mixed_flag) for c in tvs.components],
        "n_cut_lower": [int(c.n_cut_lower) for c in tvs.components],
        "n_cut_upper": [int(c.n_cut_upper) for c in tvs.components],
        "sample_checksum": tvs.sample_checksum,
        "marks_source": tvs.marks_source,
        "n_cut": int(len(tvs.cut_edges)),
        "n_stay": -1 if stays is None else int(len(stays)),
        "has_levels": tvs.cut_levels is not None,
    })
    blob = json.dumps(meta).encode()
    with open(str(path), "wb") as fh:
        fh.write(struct.pack("<4sQ", _SET_MAGIC, len(blob)))
        fh.write(blob)
        fh.write(np.packbits(tvs.cluster_mask).tobytes())
        fh.write(tvs.component_id.astype(np.int64).tobytes())
        fh.write(tvs.cut_edges.astype(np.int64).tobytes())
        if stays is not None:
            fh.write(stays.astype(np.int64).tobytes())
        if tvs.cut_levels is not None:
            fh.write(tvs.cut_levels.astype(np.int8).tobytes())


def load_tvs(path, domain):
    """Rebuild a TwoValuedSet written by save_tvs on its domain."""
    with open(str(path), "rb") as fh:
        magic, mlen = struct.unpack("<4sQ", fh.read(12))
        if magic != _SET_MAGIC:
            raise ValueError("not a saved set file")
        meta = json.loads(fh.read(mlen))
        n = meta["n_total"]
        if n != domain.n_total:
            raise ValueError("domain does not match the saved set")
        nbytes = (n + 7) // 8
        cluster = np.unpackbits(
            np.frombuffer(fh.read(nbytes), dtype=np.uint8))[:n].astype(bool)
        comp_of = np.frombuffer(fh.read(8 * n), dtype=np.int64).copy()
        cut = np.frombuffer(fh.read(8 * meta["n_cut"]), dtype=np.int64).copy()
        n_stay = meta.get("n_stay", -1)
        stays = None if n_stay < 0 else \
            np.frombuffer(fh.read(8 * n_stay), dtype=np.int64).copy()
        levels = None
        if meta.get("has_levels"):
            levels = np.frombuffer(fh.read(meta["n_cut"]),
                                   dtype=np.int8).copy()

    a, b = meta["a"], meta["b"] if meta["b"] is not None else math.inf
    comps = []
    for k, label in enumerate(meta["labels"]):
        comps.append(Component(
            vertices=np.flatnonzero(comp_of == k),
            lower_wall=-a, upper_wall=b,
            n_cut_lower=meta["n_cut_lower"][k],
            n_cut_upper=meta["n_cut_upper"][k],
            label=label, mixed_flag=meta["mixed"][k]))
    return TwoValuedSet(
        a=a, b=b, domain=domain, cluster_mask=cluster,
        cut_edges=cut, components=comps, component_id=comp_of,
        sample_checksum=meta["sample_checksum"],
        marks_source=meta["marks_source"], stay_edges=stays,
        cut_levels=levels)
