"""Corridor cluster extraction, labels, and the staged construction.

Deterministic fixtures drive the labelling rules (hand-built marks on a
3x3 block where every cut edge is controlled), while seeded random
fields exercise the set invariants.  The center-label frequency check
freezes its seeds, so the sample counts below are exact reruns, not
statistical gambles.
"""

import math

import numpy as np
import pytest

from tvslab.bridge import (
    EdgeMarks,
    fps_marks_from_extrema,
    marks_from_extrema,
    sample_edge_extrema,
    sample_edge_marks,
    sample_fps_marks,
)
from tvslab.extract import (
    _stage_seed,
    component_label_frequency,
    extract_fps,
    extract_tvs,
    iterated_construction,
    load_tvs,
    monotonicity_check,
    save_tvs,
    set_summary,
)
from tvslab.lattice import (
    LAMBDA,
    FieldSample,
    build_disk_domain,
    domain_from_vertices,
    sample_dgff,
)

LAM = LAMBDA


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture(scope="module")
def disk10():
    return build_disk_domain(10)


@pytest.fixture(scope="module")
def block3():
    """3x3 interior block; the center vertex can be isolated by hand."""
    pts = [(x, y) for x in range(3) for y in range(3)]
    return domain_from_vertices(np.array(pts, dtype=np.int32))


def constant_sample(domain, value):
    vals = np.zeros(domain.n_total)
    vals[domain.interior_mask] = value
    return FieldSample(domain=domain, values=vals, seed=0, method="test")


def uniform_marks(domain, a, b):
    """Hand-built marks where every edge stays."""
    ne = domain.edges.shape[0]
    return EdgeMarks(a=a, b=b, seed=0,
                     stays=np.ones(ne, dtype=bool),
                     level_from_u=np.zeros(ne, dtype=np.int8),
                     level_from_v=np.zeros(ne, dtype=np.int8),
                     source="independent")


def island_marks(domain, a, b, level_plan):
    """All edges stay except those at the center vertex of block3.

    ``level_plan`` lists the crossed level (+-1) for the center's cut
    edges in edge order.  Both sides of each cut edge get the same
    level, so attribution is unambiguous.
    """
    c = domain.vertex_index(1, 1)
    marks = uniform_marks(domain, a, b)
    cut = np.flatnonzero((domain.edges == c).any(axis=1))
    assert len(cut) == len(level_plan)
    marks.stays[cut] = False
    for e, lv in zip(cut, level_plan):
        marks.level_from_u[e] = lv
        marks.level_from_v[e] = lv
    return marks


# ---------------------------------------------------------------------------
# degenerate fields: fully explored / fully unexplored


def test_all_stay_marks_cluster_everything(block3):
    s = constant_sample(block3, 0.0)
    tvs = extract_tvs(s, uniform_marks(block3, LAM, LAM), LAM, LAM)
    assert tvs.cluster_mask.all()
    assert tvs.n_components == 0
    assert len(tvs.cut_edges) == 0
    assert tvs.cluster_fraction == 1.0
    assert tvs.component_at(block3.vertex_index(1, 1)) is None


@pytest.mark.parametrize("side,want_sign", [(+1, +1), (-1, -1)])
def test_constant_field_outside_corridor(disk10, side, want_sign):
    # all interior values pinned outside one wall: a single component
    # labelled by that wall, zero staying edges
    a, b = LAM, 2 * LAM
    s = constant_sample(disk10, side * (b + 1.0) if side > 0 else -(a + 1.0))
    marks = sample_edge_marks(s, a, b, seed=3)
    assert not marks.stays.any()
    tvs = extract_tvs(s, marks, a, b)
    assert tvs.n_components == 1
    comp = tvs.components[0]
    assert comp.n_vertices == disk10.interior_mask.sum()
    assert not comp.mixed_flag
    if want_sign > 0:
        assert comp.label == b and comp.n_cut_lower == 0
    else:
        assert comp.label == -a and comp.n_cut_upper == 0
    assert len(tvs.cut_edges) == comp.n_cut_lower + comp.n_cut_upper


# ---------------------------------------------------------------------------
# labelling rules on a controlled island


def test_island_unanimous_label(block3):
    s = constant_sample(block3, 0.0)
    tvs = extract_tvs(s, island_marks(block3, LAM, LAM, [-1, -1, -1, -1]),
                      LAM, LAM)
    assert tvs.n_components == 1
    comp = tvs.components[0]
    assert comp.label == -LAM
    assert not comp.mixed_flag
    assert comp.n_cut_lower == 4 and comp.n_cut_upper == 0
    assert comp.adjacent_cut_levels == {-LAM: 4}
    assert comp.n_vertices == 1
    assert tvs.component_at(block3.vertex_index(1, 1)) is comp
    assert tvs.mixed_count == 0


def test_island_majority_and_mixed_flag(block3):
    s = constant_sample(block3, 0.0)
    tvs = extract_tvs(s, island_marks(block3, LAM, LAM, [-1, -1, -1, +1]),
                      LAM, LAM)
    comp = tvs.components[0]
    assert comp.label == -LAM
    assert comp.mixed_flag
    assert comp.adjacent_cut_levels == {-LAM: 3, LAM: 1}
    assert tvs.mixed_count == 1


def test_island_tie_takes_lower_wall(block3):
    s = constant_sample(block3, 0.0)
    tvs = extract_tvs(s, island_marks(block3, LAM, 2 * LAM, [-1, -1, +1, +1]),
                      LAM, 2 * LAM)
    comp = tvs.components[0]
    assert comp.label == -LAM
    assert comp.mixed_flag


def test_pinned_endpoint_forces_level(block3):
    # component vertex far below the lower wall: the sampler pins the
    # component-side level no matter what the bridge would have done.
    # wide corridor keeps the zero-valued surroundings connected
    a = b = 4 * LAM
    vals = np.zeros(block3.n_total)
    c = block3.vertex_index(1, 1)
    vals[c] = -(a + 2.0)
    s = FieldSample(domain=block3, values=vals, seed=0, method="test")
    marks = sample_edge_marks(s, a, b, seed=11)
    tvs = extract_tvs(s, marks, a, b)
    comp = tvs.component_at(c)
    assert comp is not None
    assert comp.n_vertices == 1
    assert comp.label == -a and not comp.mixed_flag


# ---------------------------------------------------------------------------
# validation and invariants


def test_parameter_validation(disk10):
    s = sample_dgff(disk10, seed=1)
    marks = sample_edge_marks(s, LAM, LAM, seed=2)
    with pytest.raises(ValueError):
        extract_tvs(s, marks, -LAM, LAM)
    with pytest.raises(ValueError):
        extract_tvs(s, marks, LAM, math.inf)
    with pytest.raises(ValueError):
        extract_tvs(s, marks, LAM, 2 * LAM)  # marks drawn for (LAM, LAM)
    short = EdgeMarks(a=LAM, b=LAM, seed=0,
                      stays=marks.stays[:-1],
                      level_from_u=marks.level_from_u[:-1],
                      level_from_v=marks.level_from_v[:-1],
                      source="independent")
    with pytest.raises(ValueError):
        extract_tvs(s, short, LAM, LAM)


def test_below_threshold_warns(disk10):
    s = sample_dgff(disk10, seed=4)
    a = b = 0.5 * LAM
    marks = sample_edge_marks(s, a, b, seed=5)
    with pytest.warns(UserWarning, match="narrower than 2"):
        extract_tvs(s, marks, a, b)


def test_cluster_values_inside_corridor(disk10):
    a, b = 2 * LAM, 2 * LAM
    for seed in (21, 22, 23):
        s = sample_dgff(disk10, seed=seed)
        tvs = extract_tvs(s, sample_edge_marks(s, a, b, seed=seed + 50), a, b)
        inside = tvs.cluster_mask & disk10.interior_mask
        assert (s.values[inside] >= -a - 1e-12).all()
        assert (s.values[inside] <= b + 1e-12).all()


def test_partition_and_cut_invariants(disk10):
    a, b = 2 * LAM, 2 * LAM
    s = sample_dgff(disk10, seed=31)
    marks = sample_edge_marks(s, a, b, seed=32)
    tvs = extract_tvs(s, marks, a, b)

    # component ids partition the complement of the cluster
    assert ((tvs.component_id >= 0) == ~tvs.cluster_mask).all()
    sizes = sum(c.n_vertices for c in tvs.components)
    assert sizes == (~tvs.cluster_mask).sum()

    edges = disk10.edges
    in_u = tvs.cluster_mask[edges[:, 0]]
    in_v = tvs.cluster_mask[edges[:, 1]]
    # cut edges: exactly one cluster endpoint, never staying
    assert (in_u[tvs.cut_edges] ^ in_v[tvs.cut_edges]).all()
    assert not marks.stays[tvs.cut_edges].any()
    # non-cut complement edges stay within one component
    both_out = ~in_u & ~in_v
    assert (tvs.component_id[edges[both_out, 0]]
            == tvs.component_id[edges[both_out, 1]]).all()
    # every component borders the cluster somewhere
    for comp in tvs.components:
        assert comp.n_cut_lower + comp.n_cut_upper >= 1


# ---------------------------------------------------------------------------
# one-sided sets


def test_fps_wide_wall_clusters_everything(disk10):
    s = sample_dgff(disk10, seed=41)
    fps = extract_fps(s, sample_fps_marks(s, 50.0, seed=42), 50.0)
    assert fps.cluster_mask.all()
    assert fps.n_components == 0


def test_fps_sunken_field_is_one_component(disk10):
    s = constant_sample(disk10, -1.0)
    fps = extract_fps(s, sample_fps_marks(s, 0.5, seed=43), 0.5)
    assert fps.cluster_fraction == 0.0
    assert fps.n_components == 1
    comp = fps.components[0]
    assert comp.label == -0.5 and not comp.mixed_flag
    assert math.isinf(comp.upper_wall)
    summary = set_summary(fps)
    assert summary["b"] is None


def test_fps_rejects_two_sided_marks(disk10):
    s = sample_dgff(disk10, seed=44)
    marks = sample_edge_marks(s, LAM, LAM, seed=45)
    with pytest.raises(ValueError):
        extract_fps(s, marks, LAM)


# ---------------------------------------------------------------------------
# coupling across corridors


def test_extrema_coupling_nests_clusters(disk10):
    # shared per-edge extrema make inclusion exact sample by sample
    for seed in (51, 52, 53, 54, 55):
        s = sample_dgff(disk10, seed=seed)
        ext = sample_edge_extrema(s, seed=seed + 100)
        small = extract_tvs(s, marks_from_extrema(ext, s, LAM, LAM), LAM, LAM)
        big = extract_tvs(s, marks_from_extrema(ext, s, 2 * LAM, 2 * LAM),
                          2 * LAM, 2 * LAM)
        assert monotonicity_check(small, big)
        assert not monotonicity_check(big, small) or \
            (small.cluster_mask == big.cluster_mask).all()
        fps = extract_fps(s, fps_marks_from_extrema(ext, s, 2 * LAM), 2 * LAM)
        assert fps.cluster_mask[big.cluster_mask].all()


def test_monotonicity_check_errors(disk10):
    s = sample_dgff(disk10, seed=61)
    ext = sample_edge_extrema(s, seed=62)
    t11 = extract_tvs(s, marks_from_extrema(ext, s, LAM, LAM), LAM, LAM)
    t22 = extract_tvs(s, marks_from_extrema(ext, s, 2 * LAM, 2 * LAM),
                      2 * LAM, 2 * LAM)
    t13 = extract_tvs(s, marks_from_extrema(ext, s, LAM, 3 * LAM),
                      LAM, 3 * LAM)
    assert monotonicity_check(t11, t11)  # equal corridors include trivially
    with pytest.raises(ValueError, match="not nested"):
        monotonicity_check(t13, t22)

    other = sample_dgff(disk10, seed=63)
    oext = sample_edge_extrema(other, seed=64)
    o22 = extract_tvs(other, marks_from_extrema(oext, other, 2 * LAM, 2 * LAM),
                      2 * LAM, 2 * LAM)
    with pytest.raises(ValueError, match="different samples"):
        monotonicity_check(t11, o22)

    ind = extract_tvs(s, sample_edge_marks(s, 2 * LAM, 2 * LAM, seed=65),
                      2 * LAM, 2 * LAM)
    with pytest.raises(ValueError, match="extrema"):
        monotonicity_check(t11, ind)


# ---------------------------------------------------------------------------
# label frequency


def test_center_label_frequency_matches_ruin_law():
    # frozen seeds: 46 usable replicas out of 300 at radius 16
    dom = build_disk_domain(16)
    a = b = 2 * LAM
    batch = []
    for k in range(300):
        s = sample_dgff(dom, seed=11000 + k)
        batch.append(extract_tvs(s, sample_edge_marks(s, a, b, seed=12000 + k),
                                 a, b))
    p_minus, (lo, hi) = component_label_frequency(batch)
    usable = sum(1 for t in batch
                 if t.component_at(dom.center_index) is not None
                 and not t.component_at(dom.center_index).mixed_flag)
    assert usable >= 30
    assert lo <= b / (a + b) <= hi


def test_label_frequency_error_paths(block3):
    with pytest.raises(ValueError):
        component_label_frequency([])
    s = constant_sample(block3, 0.0)
    all_cluster = extract_tvs(s, uniform_marks(block3, LAM, LAM), LAM, LAM)
    with pytest.raises(ValueError, match="usable"):
        component_label_frequency([all_cluster])
    other = extract_tvs(s, island_marks(block3, LAM, 2 * LAM, [-1] * 4),
                        LAM, 2 * LAM)
    with pytest.raises(ValueError, match="parameters"):
        component_label_frequency([all_cluster, other])


# ---------------------------------------------------------------------------
# staged construction


def test_single_stage_equals_direct():
    dom = build_disk_domain(12)
    s = sample_dgff(dom, seed=71)
    seed = 72
    it = iterated_construction(s, None, LAM, LAM, seed=seed)
    direct = extract_tvs(
        s, sample_edge_marks(s, LAM, LAM, seed=_stage_seed(seed, 0)),
        LAM, LAM)
    assert (it.cluster_mask == direct.cluster_mask).all()
    assert (it.component_id == direct.component_id).all()
    assert [c.label for c in it.components] == \
        [c.label for c in direct.components]
    assert [c.mixed_flag for c in it.components] == \
        [c.mixed_flag for c in direct.components]
    assert it.marks_source == "iterated"


def test_iterated_labels_sit_on_walls():
    dom = build_disk_domain(12)
    cases = [(2 * LAM, 2 * LAM), (1.5 * LAM, 1.5 * LAM),
             (1.2 * LAM, 1.7 * LAM), (2.6 * LAM, 0.9 * LAM)]
    for i, (a, b) in enumerate(cases):
        s = sample_dgff(dom, seed=80 + i)
        tvs = iterated_construction(s, None, a, b, seed=90 + i)
        for comp in tvs.components:
            assert comp.label in (-a, b)
        assert tvs.a == a and tvs.b == b
        # partition invariant survives the staged path
        assert ((tvs.component_id >= 0) == ~tvs.cluster_mask).all()


def test_iterated_stage_log_is_monotone():
    dom = build_disk_domain(12)
    s = sample_dgff(dom, seed=75)
    log = []
    tvs = iterated_construction(s, None, 2 * LAM, 2 * LAM, seed=76,
                                stage_log=log)
    assert len(log) >= 1
    for earlier, later in zip(log, log[1:]):
        assert later[earlier].all()
    assert tvs.cluster_mask[log[-1]].all()


def test_iterated_determinism_and_seed_sensitivity():
    dom = build_disk_domain(12)
    s = sample_dgff(dom, seed=77)
    t1 = iterated_construction(s, None, 2 * LAM, 2 * LAM, seed=78)
    t2 = iterated_construction(s, None, 2 * LAM, 2 * LAM, seed=78)
    assert (t1.cluster_mask == t2.cluster_mask).all()
    assert [c.label for c in t1.components] == [c.label for c in t2.components]
    t3 = iterated_construction(s, None, 2 * LAM, 2 * LAM, seed=79)
    assert not (t1.cluster_mask == t3.cluster_mask).all()


def test_iterated_parameter_validation():
    dom = build_disk_domain(10)
    s = sample_dgff(dom, seed=81)
    with pytest.raises(ValueError):
        iterated_construction(s, None, 0.0, 2 * LAM, seed=1)
    with pytest.raises(ValueError):
        iterated_construction(s, None, 0.7 * LAM, 0.7 * LAM, seed=1)


# ---------------------------------------------------------------------------
# persistence


def test_save_load_roundtrip(tmp_path, disk10):
    s = sample_dgff(disk10, seed=91)
    tvs = extract_tvs(s, sample_edge_marks(s, LAM, 2 * LAM, seed=92),
                      LAM, 2 * LAM)
    path = tmp_path / "set.tvs"
    save_tvs(tvs, path)
    back = load_tvs(path, disk10)
    assert back.a == tvs.a and back.b == tvs.b
    assert (back.cluster_mask == tvs.cluster_mask).all()
    assert (back.component_id == tvs.component_id).all()
    assert len(back.components) == len(tvs.components)
    for c1, c2 in zip(back.components, tvs.components):
        assert c1.label == c2.label
        assert c1.mixed_flag == c2.mixed_flag
        assert (np.sort(c1.vertices) == np.sort(c2.vertices)).all()
    assert back.sample_checksum == tvs.sample_checksum

    with pytest.raises(ValueError):
        load_tvs(path, build_disk_domain(8))

    bogus = tmp_path / "bogus.tvs"
    bogus.write_bytes(b"not a set file")
    with pytest.raises(ValueError):
        load_tvs(bogus, disk10)


def test_fps_save_load_roundtrip(tmp_path, disk10):
    s = sample_dgff(disk10, seed=93)
    fps = extract_fps(s, sample_fps_marks(s, LAM, seed=94), LAM)
    path = tmp_path / "set.fps"
    save_tvs(fps, path)
    back = load_tvs(path, disk10)
    assert math.isinf(back.b)
    assert (back.cluster_mask == fps.cluster_mask).all()
    labels = {c.label for c in back.components}
    assert labels <= {-LAM}
