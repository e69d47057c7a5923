"""Staged-distance sets: corridor exploration graded in steps of r.

Each stage explores the width-2*lambda corridor [-r, 2*lambda - r]
around the running conditional value.  Components that reach the upper
wall stop; their label is 2*lambda - k*r where k is the stage of
discovery, so the label ladder doubles as a boundary distance in units
of r.  Components that reach the lower wall drop by r and continue
inside.  The module also houses the cross-checks that make the ladder
meaningful: label versus point-contact distance, equality in law with
the one-shot corridor [-2*lambda, 2*lambda - r], monotonicity of the
explored set as r halves, the r -> 0 label trajectories, and the
fairness and independence tests for the symmetric-wall loop labels.

Every stage corridor has width exactly 2*lambda, the thinnest the
construction schedule admits, so the lattice artifacts of that corridor
(giant components crossing both walls) concentrate here; such
components stop with the mixed flag rather than recursing on an
attribution artifact, mirroring the staged two-valued construction.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.stats

from .bridge import EdgeExtrema, marks_from_extrema, sample_edge_extrema, \
    sample_edge_marks
from .extract import TWO_LAMBDA, _extract_core, _ids_for_coords, _stage_seed
from .lattice import FieldSample, domain_from_vertices
from .loops import extract_loops
from .stats import TestReport, chi_square, ks_two_sample

__all__ = [
    "BrComponent",
    "BrSet",
    "B0Trajectory",
    "Cle4Report",
    "construct_br",
    "coupled_br_pair",
    "br_monotonicity",
    "br_law_match",
    "verify_label_distance",
    "b0_limit_labels",
    "geom_stage_report",
    "cle4_label_tests",
    "touching_label_census",
    "set_volume_summaries",
    "br_set_to_json",
]


# ---------------------------------------------------------------------------
# types


@dataclass
class BrComponent:
    """Unexplored island of a staged-distance set."""

    vertices: np.ndarray
    stage: int                # corridor stage that stopped it
    label: float              # 2*lambda - stage * r, exact arithmetic
    mixed_flag: bool          # stage crossings hit both walls
    truncated: bool           # still alive when the stage cap ran out

    @property
    def n_vertices(self):
        return len(self.vertices)


@dataclass
class BrSet:
    """Explored cluster plus stage-labelled components.

    Shares the component/cut-edge layout of TwoValuedSet, so the loop
    topology tooling consumes it directly; ``cut_levels`` holds the
    discovery stage of the component behind each cut edge, which is
    what the two-level contact witness compares.
    """

    domain: object
    r: float
    stage_cap: int
    cluster_mask: np.ndarray
    cut_edges: np.ndarray
    components: list
    component_id: np.ndarray
    cut_levels: np.ndarray        # per cut edge: component discovery stage
    stay_edges: np.ndarray        # edges explored and kept, any stage
    stages: list                  # cumulative cluster mask after each stage
    seed: int
    sample_checksum: float
    marks_source: str

    @property
    def n_components(self):
        return len(self.components)

    @property
    def n_stages(self):
        return len(self.stages)

    @property
    def cluster_fraction(self):
        inter = self.domain.interior_mask
        return float(self.cluster_mask[inter].mean())

    def component_at(self, vertex):
        cid = self.component_id[vertex]
        return None if cid < 0 else self.components[cid]


@dataclass
class B0Trajectory:
    """Center-component labels along a shrinking-r sequence."""

    r_values: np.ndarray
    labels: np.ndarray        # NaN when the center was explored
    stages: np.ndarray        # 0 when the center was explored
    mixed: np.ndarray
    truncated: np.ndarray

    def label_steps(self):
        """Successive label differences, NaN-propagating."""
        return np.diff(self.labels)

    def to_json(self):
        def clean(xs):
            return [None if isinstance(x, float) and math.isnan(x)
                    else x for x in xs]
        return {
            "r_values": [float(x) for x in self.r_values],
            "labels": clean([float(x) for x in self.labels]),
            "stages": [int(x) for x in self.stages],
            "mixed": [bool(x) for x in self.mixed],
            "truncated": [bool(x) for x in self.truncated],
        }


@dataclass
class Cle4Report:
    """Label-law tests for the symmetric-wall loop ensemble."""

    fairness: TestReport
    independence: TestReport
    skew: TestReport = None
    n_usable: int = 0
    n_pairs: int = 0

    def to_json(self):
        return {
            "fairness": self.fairness.as_dict(),
            "independence": self.independence.as_dict(),
            "skew": None if self.skew is None else self.skew.as_dict(),
            "n_usable": self.n_usable,
            "n_pairs": self.n_pairs,
        }


# ---------------------------------------------------------------------------
# construction


def _root_edge_keys(dom):
    # edges are lexsorted, so these keys are ascending
    e = dom.edges.astype(np.int64)
    return e[:, 0] * dom.n_total + e[:, 1]


def _coupled_stage_marks(extrema, root_dom, edge_keys, sub_sample, to_root,
                         shift, a_rel, b_rel):
    """Stage marks thresholded from the root extrema draw.

    Bridge paths ride with their endpoints under a constant shift, so
    the sub-stage extrema are the root extrema minus the running label;
    nested corridors then stay nested across the whole stage tree.
    """
    sub_dom = sub_sample.domain
    if sub_dom is root_dom:
        return marks_from_extrema(extrema, sub_sample, a_rel, b_rel)
    se = sub_dom.edges.astype(np.int64)
    keys = to_root[se[:, 0]] * root_dom.n_total + to_root[se[:, 1]]
    pos = np.searchsorted(edge_keys, keys)
    assert (edge_keys[pos] == keys).all()
    sub_ext = EdgeExtrema(
        seed=extrema.seed,
        lo=extrema.lo[pos] - shift,
        hi=extrema.hi[pos] - shift,
        checksum=EdgeExtrema.fingerprint(sub_sample.values))
    return marks_from_extrema(sub_ext, sub_sample, a_rel, b_rel)


def construct_br(sample, r, seed, stage_cap=64, marks_factory=None,
                 extrema=None):
    """Build the staged-distance set for step size r.

    Stage k explores the corridor [-r, 2*lambda - r] of the field minus
    the running label -(k-1)r.  Components reaching the upper wall stop
    with label 2*lambda - k*r; lower-wall components continue inside.
    Mixed components stop where they are with the flag (their majority
    label is attribution noise, same policy as the staged two-valued
    construction); components alive past ``stage_cap`` stop with the
    truncated flag.  With ``extrema`` the stage marks are thresholded
    from one coupled bridge draw instead of fresh randomness, which
    makes runs at different r comparable pathwise.
    """
    r = float(r)
    if not (0.0 < r < TWO_LAMBDA):
        raise ValueError("step size must satisfy 0 < r < 2*lambda")
    if stage_cap < 1:
        raise ValueError("stage cap must be at least 1")
    if marks_factory is None:
        marks_factory = sample_edge_marks
    if extrema is not None:
        if extrema.checksum != EdgeExtrema.fingerprint(sample.values):
            raise ValueError("extrema were drawn for a different sample")

    dom = sample.domain
    b_rel = TWO_LAMBDA - r
    edge_keys = _root_edge_keys(dom)
    counter = itertools.count()
    cluster = np.zeros(dom.n_total, dtype=bool)
    stay_mask = np.zeros(dom.edges.shape[0], dtype=bool)
    stage_masks = []
    done = []                         # (root verts, stage, mixed, truncated)
    alive = [None]                    # None stands in for the root domain

    for stage in range(1, stage_cap + 1):
        next_alive = []
        for verts in alive:
            if verts is None:
                sub_sample, to_root = sample, np.arange(dom.n_total)
                shift = 0.0
            else:
                sub_dom = domain_from_vertices(dom.coords[verts])
                to_root = _ids_for_coords(dom, sub_dom.coords)
                shift = -(stage - 1) * r
                vals = np.zeros(sub_dom.n_total)
                inter = sub_dom.interior_mask
                vals[inter] = sample.values[to_root[inter]] - shift
                sub_sample = FieldSample(domain=sub_dom, values=vals,
                                         seed=sample.seed,
                                         method="conditional")
            if extrema is not None:
                marks = _coupled_stage_marks(
                    extrema, dom, edge_keys, sub_sample, to_root,
                    shift, r, b_rel)
            else:
                marks = marks_factory(
                    sub_sample, r, b_rel, _stage_seed(seed, next(counter)))
            sub_cluster, _, comps, _, _ = _extract_core(
                sub_sample, marks, r, b_rel)
            cluster[to_root[sub_cluster]] = True
            se = sub_sample.domain.edges.astype(np.int64)
            stayed = np.flatnonzero(marks.stays)
            keys = to_root[se[stayed, 0]] * dom.n_total + to_root[se[stayed, 1]]
            stay_mask[np.searchsorted(edge_keys, keys)] = True
            for c in comps:
                rv = to_root[c.vertices]
                if c.mixed_flag:
                    done.append((rv, stage, True, False))
                elif c.label > 0:
                    done.append((rv, stage, False, False))
                else:
                    next_alive.append(rv)
        stage_masks.append(cluster.copy())
        alive = next_alive
        if not alive:
            break
    for rv in alive:
        done.append((rv, stage_cap, False, True))

    cluster[dom.boundary_mask] = True
    comp_of = np.full(dom.n_total, -1, dtype=np.int64)
    comps = []
    for k, (rv, stage_k, mixed, trunc) in enumerate(done):
        comp_of[rv] = k
        comps.append(BrComponent(
            vertices=np.asarray(rv, dtype=np.int64),
            stage=int(stage_k),
            label=TWO_LAMBDA - stage_k * r,
            mixed_flag=mixed,
            truncated=trunc))
    assert (comp_of[~cluster] >= 0).all()

    edges = dom.edges
    in_u = cluster[edges[:, 0]]
    in_v = cluster[edges[:, 1]]
    cut = np.flatnonzero(in_u ^ in_v)
    comp_end = np.where(in_u[cut], edges[cut, 1], edges[cut, 0])
    stage_of = np.array([c.stage for c in comps], dtype=np.int64)
    cut_levels = (stage_of[comp_of[comp_end]].astype(np.int8)
                  if len(cut) else np.zeros(0, dtype=np.int8))
    # a staying edge with an endpoint lost to a later stage's component
    # is no longer internal to the cluster
    stay_mask &= cluster[edges[:, 0]] & cluster[edges[:, 1]]

    return BrSet(
        domain=dom, r=r, stage_cap=int(stage_cap),
        cluster_mask=cluster, cut_edges=cut, components=comps,
        component_id=comp_of, cut_levels=cut_levels,
        stay_edges=np.flatnonzero(stay_mask), stages=stage_masks,
        seed=int(seed),
        sample_checksum=EdgeExtrema.fingerprint(sample.values),
        marks_source="staged" if extrema is None else "staged-coupled")


def coupled_br_pair(sample, r, seed):
    """Staged sets at r and r/2 thresholded from one bridge draw."""
    extrema = sample_edge_extrema(sample, seed)
    big = construct_br(sample, r, seed, extrema=extrema)
    half = construct_br(sample, r / 2.0, seed, extrema=extrema)
    return big, half


def br_monotonicity(sample, r, seed):
    """True iff the r-step cluster sits inside the r/2-step cluster."""
    big, half = coupled_br_pair(sample, r, seed)
    return bool(half.cluster_mask[big.cluster_mask].all())


# ---------------------------------------------------------------------------
# cross-checks


def verify_label_distance(br, lg, profile):
    """Count loops whose label disagrees with 2*lambda - r * d_point.

    Mixed and truncated loops are excluded: their ladder position is a
    placeholder, not a discovery stage.  Unreachable loops (infinite
    point distance) count as violations.
    """
    labels = np.array([c.label for c in br.components])
    if lg.n_loops != br.n_components or not np.allclose(lg.labels, labels):
        raise ValueError("loop graph was built from a different set")
    if len(profile.d_point) != lg.n_loops:
        raise ValueError("distance profile does not match the loop graph")
    bad = 0
    for i, c in enumerate(br.components):
        if c.mixed_flag or c.truncated:
            continue
        d = profile.d_point[i]
        if not math.isfinite(d):
            bad += 1
        elif not math.isclose(c.label, TWO_LAMBDA - br.r * d,
                              rel_tol=0.0, abs_tol=1e-9):
            bad += 1
    return bad


def set_volume_summaries(s):
    """(component count, largest component fraction, cluster fraction).

    Works on direct corridor sets and staged sets alike; the fractions
    are against the interior vertex count.
    """
    n_int = int(s.domain.interior_mask.sum())
    largest = max((len(c.vertices) for c in s.components), default=0)
    inter = s.domain.interior_mask
    return (float(s.n_components),
            largest / n_int,
            float(s.cluster_mask[inter].mean()))


def br_law_match(br_batch, tvs_batch):
    """Two-sample tests of the staged set against its one-shot law.

    The staged set with step r is compared with direct extractions of
    the corridor [-2*lambda, 2*lambda - r] through three per-sample
    summaries; set-valued distances have no desk-scale two-sample
    procedure, so the summaries stand in.  Returns a dict of
    TestReports keyed by summary name.
    """
    if len(br_batch) != len(tvs_batch):
        raise ValueError("batches must have equal sizes")
    if not br_batch:
        raise ValueError("empty batches")
    dom0 = br_batch[0].domain
    r = br_batch[0].r
    for s in list(br_batch) + list(tvs_batch):
        if s.domain.n_total != dom0.n_total or s.domain.radius != dom0.radius:
            raise ValueError("mismatched domains in the comparison batches")
    for br in br_batch:
        if not math.isclose(br.r, r):
            raise ValueError("staged batch mixes step sizes")
    for tvs in tvs_batch:
        if not (math.isclose(tvs.a, TWO_LAMBDA)
                and math.isclose(tvs.b, TWO_LAMBDA - r)):
            raise ValueError(
                "direct batch must use walls (2*lambda, 2*lambda - r)")

    names = ("component_count", "largest_fraction", "volume_fraction")
    xs = np.array([set_volume_summaries(s) for s in br_batch])
    ys = np.array([set_volume_summaries(s) for s in tvs_batch])
    return {name: ks_two_sample(xs[:, k], ys[:, k])
            for k, name in enumerate(names)}


def b0_limit_labels(sample, seed, r_sequence=None, center=None):
    """Center-component label trajectory along shrinking step sizes.

    Default sequence is lambda * 2^-j for three values of j; the runs
    share one coupled bridge draw so successive labels move on coupled
    realizations, which is what the limiting-set diagnostics compare.
    """
    if r_sequence is None:
        r_sequence = [TWO_LAMBDA / 2.0 * 0.5 ** j for j in range(3)]
    r_sequence = [float(r) for r in r_sequence]
    if len(r_sequence) < 3:
        raise ValueError("need at least 3 step sizes")
    if any(r2 >= r1 for r1, r2 in zip(r_sequence, r_sequence[1:])):
        raise ValueError("step sizes must decrease")
    dom = sample.domain
    if center is None:
        center = dom.vertex_index(0, 0)

    extrema = sample_edge_extrema(sample, seed)
    labels, stages, mixed, trunc = [], [], [], []
    for r in r_sequence:
        br = construct_br(sample, r, seed, extrema=extrema)
        comp = br.component_at(center)
        if comp is None:
            labels.append(math.nan)
            stages.append(0)
            mixed.append(False)
            trunc.append(False)
        else:
            labels.append(comp.label)
            stages.append(comp.stage)
            mixed.append(comp.mixed_flag)
            trunc.append(comp.truncated)
    return B0Trajectory(
        r_values=np.array(r_sequence),
        labels=np.array(labels),
        stages=np.array(stages, dtype=np.int64),
        mixed=np.array(mixed, dtype=bool),
        truncated=np.array(trunc, dtype=bool))


def geom_stage_report(stage_counts, p):
    """Chi-square fit of observed discovery stages to Geom(p).

    ``stage_counts`` are per-sample stage numbers (k >= 1).  Expected
    counts follow p (1-p)^(k-1) with the tail mass folded into the last
    cell; the generic chi-square helper then merges thin cells.
    """
    ks = np.asarray(stage_counts, dtype=np.int64)
    if len(ks) == 0:
        raise ValueError("no stage observations")
    if (ks < 1).any():
        raise ValueError("stages are 1-based")
    kmax = int(ks.max())
    observed = np.bincount(ks, minlength=kmax + 1)[1:]
    n = len(ks)
    expected = np.array([n * p * (1 - p) ** (k - 1)
                         for k in range(1, kmax + 1)])
    expected[-1] += n * (1 - p) ** kmax   # everything deeper than kmax
    return chi_square(observed, expected)


# ---------------------------------------------------------------------------
# loop label laws


def _center_label_sign(tvs, center):
    """+1 / -1 for a clean center component, None otherwise."""
    comp = tvs.component_at(center)
    if comp is None or comp.mixed_flag:
        return None
    return 1 if comp.label > 0 else -1


def _nearest_label_sign(tvs, center):
    """Label sign of the unmixed component nearest to the center one.

    Distance is the taxicab distance transform from the center
    component's cells, minimised over each candidate's vertices.
    """
    cid = tvs.component_id[center]
    if cid < 0:
        return None
    coords = tvs.domain.coords
    xmin, ymin = coords.min(axis=0)
    grid = np.ones((coords[:, 1].max() - ymin + 1,
                    coords[:, 0].max() - xmin + 1), dtype=bool)
    cverts = tvs.components[cid].vertices
    grid[coords[cverts, 1] - ymin, coords[cverts, 0] - xmin] = False
    dist = scipy.ndimage.distance_transform_cdt(grid, metric="taxicab")

    best, best_d = None, None
    for k, comp in enumerate(tvs.components):
        if k == cid or comp.mixed_flag:
            continue
        cells = coords[comp.vertices]
        d = int(dist[cells[:, 1] - ymin, cells[:, 0] - xmin].min())
        if best_d is None or d < best_d:
            best, best_d = comp, d
    if best is None:
        return None
    return 1 if best.label > 0 else -1


def cle4_from_pairs(signs, pairs, skew_signs=None, skew_walls=None):
    """Label-law tests from already-collected center observations.

    ``signs`` holds the clean center labels (+1/-1), ``pairs`` holds
    (center, nearest-neighbor) sign tuples, ``skew_signs`` the center
    labels of the asymmetric-wall batch with ``skew_walls=(a, b)``.
    Split out so parallel experiment replicas can contribute per-sample
    observations without holding the whole field batch in one process.
    """
    signs = np.asarray(signs)
    n_minus = int((signs < 0).sum())
    n_plus = int((signs > 0).sum())
    n = n_minus + n_plus
    if n == 0:
        raise ValueError("no usable center components in the batch")
    fairness = chi_square(np.array([n_minus, n_plus]),
                          np.array([n / 2.0, n / 2.0]))

    table = np.zeros((2, 2))
    for s, t in pairs:
        table[(s + 1) // 2, (t + 1) // 2] += 1
    if len(pairs) == 0 or table.sum(axis=1).min() == 0 \
            or table.sum(axis=0).min() == 0:
        independence = TestReport(
            statistic=math.nan, p_value=math.nan, n=len(pairs),
            method="chi2-independence",
            detail={"note": "degenerate contingency margin"})
    else:
        stat, p, _dof, _exp = scipy.stats.chi2_contingency(table)
        independence = TestReport(
            statistic=float(stat), p_value=float(p), n=len(pairs),
            method="chi2-independence",
            detail={"table": table.tolist()})

    skew = None
    if skew_signs is not None:
        sk = np.asarray(skew_signs)
        m = len(sk)
        if m == 0:
            raise ValueError("no usable center components in skew batch")
        a, b = skew_walls
        skew = chi_square(
            np.array([int((sk < 0).sum()), int((sk > 0).sum())]),
            np.array([m / 2.0, m / 2.0]))
        skew.detail["minus_fraction"] = float((sk < 0).mean())
        skew.detail["upper_wall_share"] = b / (a + b)

    return Cle4Report(fairness=fairness, independence=independence,
                      skew=skew, n_usable=n, n_pairs=len(pairs))


def cle4_label_tests(tvs_batch, skew_batch=None, min_batch=200):
    """Fairness and pairwise-independence tests for loop labels.

    On symmetric 2*lambda walls the center-component label should be a
    fair sign and independent of the nearest component's label; a
    ``skew_batch`` drawn at wider, asymmetric walls should reject the
    fair model (its label frequency tilts toward the more distant
    wall).  Uses center components only, skipping samples where the
    center sits in the explored cluster or in a mixed component.
    """
    if len(tvs_batch) < min_batch:
        raise ValueError("batch too small for label-law testing")
    for tvs in tvs_batch:
        if not (math.isclose(tvs.a, TWO_LAMBDA)
                and math.isclose(tvs.b, TWO_LAMBDA)):
            raise ValueError("fairness batch must use symmetric "
                             "2*lambda walls")

    center = tvs_batch[0].domain.vertex_index(0, 0)
    signs, pairs = [], []
    for tvs in tvs_batch:
        s = _center_label_sign(tvs, center)
        if s is None:
            continue
        signs.append(s)
        t = _nearest_label_sign(tvs, center)
        if t is not None:
            pairs.append((s, t))

    skew_signs, skew_walls = None, None
    if skew_batch is not None:
        center2 = skew_batch[0].domain.vertex_index(0, 0)
        skew_signs = [s for s in (_center_label_sign(t, center2)
                                  for t in skew_batch) if s is not None]
        skew_walls = (skew_batch[0].a, skew_batch[0].b)

    return cle4_from_pairs(signs, pairs, skew_signs, skew_walls)


def touching_label_census(tvs):
    """(count, lower-wall count) over unmixed boundary-touching loops."""
    lg = extract_loops(tvs)
    keep = lg.touches_boundary & ~lg.mixed
    n_lower = int(np.isclose(lg.labels[keep], -tvs.a).sum())
    return int(keep.sum()), n_lower


# ---------------------------------------------------------------------------
# export


def br_set_to_json(br):
    return {
        "r": br.r,
        "stage_cap": br.stage_cap,
        "n_stages": br.n_stages,
        "cluster_fraction": br.cluster_fraction,
        "n_components": br.n_components,
        "n_truncated": int(sum(c.truncated for c in br.components)),
        "n_mixed": int(sum(c.mixed_flag for c in br.components)),
        "components": [
            {"stage": c.stage, "label": c.label, "size": c.n_vertices,
             "mixed": bool(c.mixed_flag), "truncated": bool(c.truncated)}
            for c in br.components
        ],
    }
