"""Loop extraction, witnessed contact graphs, and parity recovery.

The workhorse fixture is a 5x5 block with hand-placed islands whose
cut-edge levels are fully controlled, so every contact edge, witness
vertex, and vote is known in advance.  Seeded disk samples then check
the structural invariants the hand fixture cannot reach (scale, mixed
components, boundary arcs on a real circle).
"""

import math

import numpy as np
import pytest

from tvslab.bridge import EdgeMarks, sample_edge_marks
from tvslab.extract import extract_tvs, iterated_construction
from tvslab.lattice import (
    LAMBDA,
    FieldSample,
    build_disk_domain,
    domain_from_vertices,
    sample_dgff,
)
from tvslab.loops import (
    LoopGraph,
    boundary_arc,
    build_adjacency,
    connectivity_report,
    distance_profile,
    extract_loops,
    local_finiteness_census,
    loop_graph_to_json,
    percolation_probe,
    recover_labels_by_parity,
)

LAM = LAMBDA


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture(scope="module")
def block5():
    pts = [(x, y) for x in range(5) for y in range(5)]
    return domain_from_vertices(np.array(pts, dtype=np.int32))


@pytest.fixture(scope="module")
def disk10():
    return build_disk_domain(10)


def constant_sample(domain, value=0.0):
    vals = np.zeros(domain.n_total)
    vals[domain.interior_mask] = value
    return FieldSample(domain=domain, values=vals, seed=0, method="test")


def island_marks(domain, a, b, islands):
    """Marks where everything stays except around the given islands.

    ``islands`` is a list of (coords, level) pairs.  Edges with exactly
    one endpoint in an island cross at that island's level (+-1 -> wall
    b / -a); edges inside an island are unexplored.  Islands must not
    be lattice-adjacent to each other or they merge into one component.
    """
    ne = domain.edges.shape[0]
    marks = EdgeMarks(a=a, b=b, seed=0,
                      stays=np.ones(ne, dtype=bool),
                      level_from_u=np.zeros(ne, dtype=np.int8),
                      level_from_v=np.zeros(ne, dtype=np.int8),
                      source="independent")
    vid = np.full(domain.n_total, -1, dtype=np.int64)
    for k, (coords, _level) in enumerate(islands):
        for x, y in coords:
            vid[domain.vertex_index(x, y)] = k
    eu, ev = domain.edges[:, 0], domain.edges[:, 1]
    inside = (vid[eu] >= 0) | (vid[ev] >= 0)
    marks.stays[inside] = False
    cut = (vid[eu] >= 0) ^ (vid[ev] >= 0)
    which = np.where(vid[eu] >= 0, vid[eu], vid[ev])
    levels = np.array([lv for _c, lv in islands], dtype=np.int8)
    marks.level_from_u[cut] = levels[which[cut]]
    marks.level_from_v[cut] = levels[which[cut]]
    return marks


COL_A = [(1, 1), (1, 2), (1, 3)]        # 3-vertex column, lower wall
COL_B = [(3, 1), (3, 2), (3, 3)]        # 3-vertex column, upper wall
CORNER_C = [(0, 0)]                     # touching corner, upper wall
CORNER_D = [(4, 0)]                     # touching corner, lower wall
CORNER_F = [(4, 4)]                     # touching corner, lower wall


def five_loop_graph(block5, a=LAM, b=2 * LAM, min_side_len=2):
    """Two interior columns plus three touching corners.

    The columns share the x=2 fringe column (a 3-run of two-wall
    witnesses -> side contact).  Each corner pairs with the opposite-
    wall column across a diagonal pair of witnesses (point contact
    only).  Corner C carries the upper wall, so it is a deliberately
    wrong boundary voter that D and F outvote.
    """
    marks = island_marks(block5, a, b, [
        (COL_A, -1), (COL_B, +1),
        (CORNER_C, +1), (CORNER_D, -1), (CORNER_F, -1),
    ])
    tvs = extract_tvs(constant_sample(block5), marks, a, b)
    lg = build_adjacency(extract_loops(tvs), min_side_len=min_side_len)
    # map island -> loop index through a representative vertex
    idx = {}
    for name, coords in [("A", COL_A), ("B", COL_B), ("C", CORNER_C),
                         ("D", CORNER_D), ("F", CORNER_F)]:
        v = block5.vertex_index(*coords[0])
        idx[name] = int(tvs.component_id[v])
    return tvs, lg, idx


def edge_set(pairs):
    return {(int(i), int(j)) for i, j in pairs}


# ---------------------------------------------------------------------------
# loop extraction basics


def test_loops_mirror_components(block5):
    a, b = LAM, 2 * LAM
    marks = island_marks(block5, a, b, [(COL_A, -1), (COL_B, +1)])
    tvs = extract_tvs(constant_sample(block5), marks, a, b)
    lg = extract_loops(tvs)
    assert lg.n_loops == tvs.n_components == 2
    assert not lg.adjacency_built
    for i in range(lg.n_loops):
        # fringe = cluster vertices next to the component, never inside it
        assert tvs.cluster_mask[lg.loops[i]].all()
    np.testing.assert_array_equal(
        lg.labels, [c.label for c in tvs.components])


def test_interior_loops_do_not_touch_boundary(block5):
    _tvs, lg, idx = five_loop_graph(block5)
    assert not lg.touches_boundary[idx["A"]]
    assert not lg.touches_boundary[idx["B"]]
    assert lg.touches_boundary[idx["C"]]
    assert lg.touches_boundary[idx["D"]]
    assert lg.touches_boundary[idx["F"]]


def test_loop_diameter_max_metric(block5):
    _tvs, lg, idx = five_loop_graph(block5)
    # column fringe spans y in 0..4 -> max-metric extent 4
    assert lg.loop_diameter(idx["A"]) == 4
    assert lg.loop_diameter(idx["B"]) == 4
    # a corner fringe spans two cells each way
    assert lg.loop_diameter(idx["C"]) == 2


def test_empty_set_has_no_loops(block5):
    ne = block5.edges.shape[0]
    marks = EdgeMarks(a=LAM, b=LAM, seed=0,
                      stays=np.ones(ne, dtype=bool),
                      level_from_u=np.zeros(ne, dtype=np.int8),
                      level_from_v=np.zeros(ne, dtype=np.int8),
                      source="independent")
    tvs = extract_tvs(constant_sample(block5), marks, LAM, LAM)
    lg = build_adjacency(extract_loops(tvs))
    assert lg.n_loops == 0
    assert len(lg.point_edges) == 0 and len(lg.side_edges) == 0
    rep = connectivity_report(lg)
    assert rep.n_components_point == 0
    assert rep.to_json()["point_only_fraction"] is None
    labs, cov = recover_labels_by_parity(lg, LAM, 2 * LAM)
    assert len(labs) == 0 and cov == 1.0


# ---------------------------------------------------------------------------
# witnessed contacts


def test_opposite_wall_columns_make_contact(block5):
    _tvs, lg, idx = five_loop_graph(block5)
    ab = tuple(sorted((idx["A"], idx["B"])))
    assert ab in edge_set(lg.point_edges)
    # the shared x=2 fringe column is a 3-run -> side contact too
    assert ab in edge_set(lg.side_edges)


def test_same_wall_proximity_is_not_contact(block5):
    # flip B to the lower wall: the pair shares the same fringe column
    # but no vertex carries both walls, so the graphs stay empty
    a, b = LAM, 2 * LAM
    marks = island_marks(block5, a, b, [(COL_A, -1), (COL_B, -1)])
    tvs = extract_tvs(constant_sample(block5), marks, a, b)
    lg = build_adjacency(extract_loops(tvs))
    assert lg.n_loops == 2
    assert len(lg.point_edges) == 0
    rep = connectivity_report(lg)
    assert rep.n_components_point == 2
    assert math.isnan(rep.point_only_fraction)


def test_diagonal_witness_pair_is_point_only(block5):
    _tvs, lg, idx = five_loop_graph(block5)
    point = edge_set(lg.point_edges)
    side = edge_set(lg.side_edges)
    for corner, col in [("C", "A"), ("D", "B"), ("F", "B")]:
        e = tuple(sorted((idx[corner], idx[col])))
        assert e in point
        assert e not in side
    assert len(point) == 4 and len(side) == 1


def test_min_side_len_sensitivity(block5):
    # the only witness run has 3 vertices: side contact survives up to
    # min_side_len 3 and vanishes at 4, point contacts never move
    for ml, n_side in [(2, 1), (3, 1), (4, 0)]:
        _tvs, lg, _ = five_loop_graph(block5, min_side_len=ml)
        assert len(lg.point_edges) == 4
        assert len(lg.side_edges) == n_side
        assert lg.min_side_len == ml


def test_min_side_len_below_two_rejected(block5):
    _tvs, lg, _ = five_loop_graph(block5)
    with pytest.raises(ValueError, match="point"):
        build_adjacency(lg, min_side_len=1)


def test_staged_set_has_no_contact_table(disk10):
    s = sample_dgff(disk10, seed=21)
    tvs = iterated_construction(s, None, 2 * LAM, 2 * LAM, seed=21)
    lg = extract_loops(tvs)
    if lg.n_loops == 0:
        pytest.skip("stage produced an all-cluster set")
    assert lg.contacts is None
    with pytest.raises(ValueError, match="direct extraction"):
        build_adjacency(lg)


def test_report_requires_adjacency(block5):
    a, b = LAM, 2 * LAM
    marks = island_marks(block5, a, b, [(COL_A, -1)])
    tvs = extract_tvs(constant_sample(block5), marks, a, b)
    lg = extract_loops(tvs)
    with pytest.raises(ValueError, match="build_adjacency"):
        connectivity_report(lg)
    with pytest.raises(ValueError, match="build_adjacency"):
        distance_profile(lg)
    with pytest.raises(ValueError, match="build_adjacency"):
        recover_labels_by_parity(lg, a, b)


# ---------------------------------------------------------------------------
# census numbers on the hand fixture


def test_connectivity_report_hand_counts(block5):
    _tvs, lg, idx = five_loop_graph(block5)
    rep = connectivity_report(lg)
    assert rep.n_loops == 5
    # point graph: one component holding all five loops, and it touches
    # the boundary through the corners
    assert rep.n_components_point == 1
    assert rep.giant_fraction_point == 1.0
    # side graph: {A,B} interior plus the three corners on the boundary
    assert rep.n_components_side == 2
    assert rep.giant_fraction_side == pytest.approx(3 / 5)
    assert rep.density_point == pytest.approx(4 / 5)
    assert rep.density_side == pytest.approx(1 / 5)
    assert rep.point_only_fraction == pytest.approx(3 / 4)
    assert rep.bipartite_violations == 0


def test_distance_profile_hand_counts(block5):
    _tvs, lg, idx = five_loop_graph(block5)
    prof = distance_profile(lg)
    for name in ("C", "D", "F"):
        assert prof.d_point[idx[name]] == 1.0
        assert prof.d_side[idx[name]] == 1.0
    assert prof.d_point[idx["A"]] == 2.0
    assert prof.d_point[idx["B"]] == 2.0
    assert math.isinf(prof.d_side[idx["A"]])
    assert math.isinf(prof.d_side[idx["B"]])


def test_local_finiteness_census_hand_counts(block5):
    _tvs, lg, _ = five_loop_graph(block5)
    # block radius is ceil(sqrt(32)) = 6; diameters are {4,4,2,2,2}
    census = local_finiteness_census(lg, [0.0, 0.5, 2.0])
    assert census[0.0] == 5
    assert census[0.5] == 2
    assert census[2.0] == 0


# ---------------------------------------------------------------------------
# parity recovery


def test_majority_vote_outvotes_wrong_toucher(block5):
    a, b = LAM, 2 * LAM
    tvs, lg, idx = five_loop_graph(block5, a, b)
    labs, cov = recover_labels_by_parity(lg, a, b)
    assert cov == 1.0
    # corner C touches the boundary with the upper-wall label; D and F
    # outvote it two to one, and parity then places even C correctly
    np.testing.assert_allclose(labs, lg.labels)


def test_anchor_overrides_votes(block5):
    a, b = LAM, 2 * LAM
    _tvs, lg, idx = five_loop_graph(block5, a, b)
    flipped, cov = recover_labels_by_parity(lg, a, b, anchor=(idx["B"], -a))
    assert cov == 1.0
    # forcing B onto the lower wall flips the whole two-coloring
    want = np.where(np.isclose(lg.labels, -a), b, -a)
    np.testing.assert_allclose(flipped, want)


def test_symmetric_walls_need_anchor(block5):
    a = 1.5 * LAM
    tvs_, lg, idx = five_loop_graph(block5, a, a)
    with pytest.raises(ValueError, match="anchor"):
        recover_labels_by_parity(lg, a, a)
    labs, cov = recover_labels_by_parity(lg, a, a, anchor=(idx["A"], -a))
    # the anchor settles its own contact component; nothing else is
    # guessed, and here one component holds all five loops
    assert cov == 1.0
    np.testing.assert_allclose(labs, lg.labels)


def test_anchor_validation(block5):
    a, b = LAM, 2 * LAM
    _tvs, lg, _ = five_loop_graph(block5, a, b)
    with pytest.raises(ValueError, match="range"):
        recover_labels_by_parity(lg, a, b, anchor=(99, -a))
    with pytest.raises(ValueError, match="wall"):
        recover_labels_by_parity(lg, a, b, anchor=(0, 0.3))


def test_hintless_component_stays_nan(block5):
    # columns only: one interior contact component, no boundary voter
    a, b = LAM, 2 * LAM
    marks = island_marks(block5, a, b, [(COL_A, -1), (COL_B, +1)])
    tvs = extract_tvs(constant_sample(block5), marks, a, b)
    lg = build_adjacency(extract_loops(tvs))
    labs, cov = recover_labels_by_parity(lg, a, b)
    assert cov == 0.0
    assert np.isnan(labs).all()
    # an anchor on either loop settles both
    ia = int(tvs.component_id[block5.vertex_index(*COL_A[0])])
    labs, cov = recover_labels_by_parity(lg, a, b, anchor=(ia, -a))
    assert cov == 1.0
    np.testing.assert_allclose(labs, lg.labels)


def test_odd_cycle_stays_nan():
    # hand-built triangle: a 2-coloring cannot exist, so the component
    # is left unlabelled rather than half-guessed
    dom = domain_from_vertices(np.array([(0, 0)], dtype=np.int32))
    lg = LoopGraph(
        domain=dom,
        loops=[np.empty(0, dtype=np.int64)] * 3,
        labels=np.array([-LAM, 2 * LAM, -LAM]),
        mixed=np.array([False, True, False]),
        touches_boundary=np.array([True, False, False]),
        point_edges=np.array([[0, 1], [1, 2], [0, 2]], dtype=np.int64),
        side_edges=np.empty((0, 2), dtype=np.int64),
        min_side_len=2)
    labs, cov = recover_labels_by_parity(lg, LAM, 2 * LAM)
    assert cov == 0.0
    assert np.isnan(labs).all()


def test_vote_tie_follows_lowest_index_voter():
    # two touching voters of opposite color: deterministic tie-break
    dom = domain_from_vertices(np.array([(0, 0)], dtype=np.int32))
    a, b = LAM, 2 * LAM
    lg = LoopGraph(
        domain=dom,
        loops=[np.empty(0, dtype=np.int64)] * 3,
        labels=np.array([-a, b, -a]),
        mixed=np.zeros(3, dtype=bool),
        touches_boundary=np.array([True, True, False]),
        point_edges=np.array([[0, 1], [1, 2]], dtype=np.int64),
        side_edges=np.empty((0, 2), dtype=np.int64),
        min_side_len=2)
    labs, cov = recover_labels_by_parity(lg, a, b)
    assert cov == 1.0
    # loop 0 is the lowest-index voter, so its color class takes -a
    np.testing.assert_allclose(labs, [-a, b, -a])


# ---------------------------------------------------------------------------
# boundary arcs and percolation probes


def test_boundary_arc_quadrants_partition_ring(disk10):
    q = math.pi / 2
    arcs = [boundary_arc(disk10, k * q, (k + 1) * q) for k in range(4)]
    ring = np.flatnonzero(disk10.boundary_mask)
    for arc in arcs:
        assert len(arc)
        assert disk10.boundary_mask[arc].all()
    all_ids = np.concatenate(arcs)
    assert len(all_ids) == len(np.unique(all_ids)) == len(ring)


def test_boundary_arc_wraparound(disk10):
    # an arc across the angle cut picks up both signs of atan2
    arc = boundary_arc(disk10, 3.0, 3.0 + math.pi / 2)
    assert len(arc)
    ang = np.arctan2(disk10.coords[arc, 1], disk10.coords[arc, 0])
    assert (ang > 2.9).any() and (ang < -2.9).any()


def test_probe_connects_through_full_cluster(disk10):
    ne = disk10.edges.shape[0]
    marks = EdgeMarks(a=4 * LAM, b=4 * LAM, seed=0,
                      stays=np.ones(ne, dtype=bool),
                      level_from_u=np.zeros(ne, dtype=np.int8),
                      level_from_v=np.zeros(ne, dtype=np.int8),
                      source="independent")
    tvs = extract_tvs(constant_sample(disk10), marks, 4 * LAM, 4 * LAM)
    arc1 = boundary_arc(disk10, -0.3, 0.3)
    arc2 = boundary_arc(disk10, math.pi - 0.3, math.pi + 0.3)
    assert percolation_probe(tvs, arc1, arc2)


def test_probe_fails_when_nothing_stays(disk10):
    a, b = LAM, 2 * LAM
    s = constant_sample(disk10, b + 1.0)  # pinned above the corridor
    marks = sample_edge_marks(s, a, b, seed=8)
    assert not marks.stays.any()
    tvs = extract_tvs(s, marks, a, b)
    arc1 = boundary_arc(disk10, -0.3, 0.3)
    arc2 = boundary_arc(disk10, math.pi - 0.3, math.pi + 0.3)
    assert not percolation_probe(tvs, arc1, arc2)


def test_probe_validates_arcs(disk10):
    ne = disk10.edges.shape[0]
    marks = EdgeMarks(a=LAM, b=LAM, seed=0,
                      stays=np.ones(ne, dtype=bool),
                      level_from_u=np.zeros(ne, dtype=np.int8),
                      level_from_v=np.zeros(ne, dtype=np.int8),
                      source="independent")
    tvs = extract_tvs(constant_sample(disk10), marks, LAM, LAM)
    arc = boundary_arc(disk10, -0.3, 0.3)
    with pytest.raises(ValueError, match="empty"):
        percolation_probe(tvs, arc, np.empty(0, dtype=np.int64))
    with pytest.raises(ValueError, match="overlap"):
        percolation_probe(tvs, arc, arc)
    inner = np.array([disk10.vertex_index(0, 0)])
    with pytest.raises(ValueError, match="boundary"):
        percolation_probe(tvs, arc, inner)


def test_probe_rejects_staged_set(disk10):
    s = sample_dgff(disk10, seed=31)
    tvs = iterated_construction(s, None, 2 * LAM, 2 * LAM, seed=31)
    arc1 = boundary_arc(disk10, -0.3, 0.3)
    arc2 = boundary_arc(disk10, math.pi - 0.3, math.pi + 0.3)
    with pytest.raises(ValueError, match="direct"):
        percolation_probe(tvs, arc1, arc2)


# ---------------------------------------------------------------------------
# structural invariants on sampled fields


@pytest.mark.parametrize("walls,seed", [
    ((2 * LAM, 2 * LAM), 41),
    ((LAM, 2 * LAM), 42),
    ((LAM, 3 * LAM), 43),
])
def test_sampled_invariants(walls, seed):
    a, b = walls
    dom = build_disk_domain(24)
    s = sample_dgff(dom, seed=seed)
    marks = sample_edge_marks(s, a, b, seed=seed)
    tvs = extract_tvs(s, marks, a, b)
    lg = build_adjacency(extract_loops(tvs))
    assert lg.n_loops == tvs.n_components

    point = edge_set(lg.point_edges)
    side = edge_set(lg.side_edges)
    assert side <= point
    for i, j in point:
        assert 0 <= i < j < lg.n_loops
        # witnessed contacts join opposite walls among unmixed loops
        if not (lg.mixed[i] or lg.mixed[j]):
            assert lg.labels[i] != lg.labels[j]
    rep = connectivity_report(lg)
    assert rep.bipartite_violations == 0

    prof = distance_profile(lg)
    assert (prof.d_point <= prof.d_side).all()
    finite = np.isfinite(prof.d_point)
    assert (prof.d_point[finite] >= 1).all()

    if not math.isclose(a, b):
        labs, cov = recover_labels_by_parity(lg, a, b)
        assert 0.0 <= cov <= 1.0
        got = labs[~np.isnan(labs)]
        assert np.isin(np.round(got, 9),
                       np.round([-a, b], 9)).all()


def test_distance_profile_matches_plain_bfs():
    # independent shortest-path check with dict adjacency
    dom = build_disk_domain(24)
    s = sample_dgff(dom, seed=47)
    marks = sample_edge_marks(s, 2 * LAM, 2 * LAM, seed=47)
    tvs = extract_tvs(s, marks, 2 * LAM, 2 * LAM)
    lg = build_adjacency(extract_loops(tvs))
    prof = distance_profile(lg)

    adj = {i: set() for i in range(lg.n_loops)}
    for i, j in lg.point_edges:
        adj[int(i)].add(int(j))
        adj[int(j)].add(int(i))
    want = {i: math.inf for i in adj}
    frontier = [int(i) for i in np.flatnonzero(lg.touches_boundary)]
    for i in frontier:
        want[i] = 1
    while frontier:
        nxt = []
        for i in frontier:
            for j in adj[i]:
                if want[j] > want[i] + 1:
                    want[j] = want[i] + 1
                    nxt.append(j)
        frontier = nxt
    np.testing.assert_array_equal(
        prof.d_point, [want[i] for i in range(lg.n_loops)])


def test_adjacency_deterministic():
    dom = build_disk_domain(24)
    s = sample_dgff(dom, seed=53)
    marks = sample_edge_marks(s, LAM, 2 * LAM, seed=53)
    tvs = extract_tvs(s, marks, LAM, 2 * LAM)
    one = build_adjacency(extract_loops(tvs))
    two = build_adjacency(extract_loops(tvs))
    np.testing.assert_array_equal(one.point_edges, two.point_edges)
    np.testing.assert_array_equal(one.side_edges, two.side_edges)
    assert loop_graph_to_json(one) == loop_graph_to_json(two)


def test_json_export_shape(block5):
    _tvs, lg, _ = five_loop_graph(block5)
    out = loop_graph_to_json(lg)
    assert out["n_loops"] == 5
    assert len(out["labels"]) == 5
    assert len(out["loop_sizes"]) == 5
    assert out["min_side_len"] == 2
    assert sorted(map(tuple, out["point_edges"])) == sorted(
        map(tuple, edge_set(lg.point_edges)))
    bare = extract_loops(_tvs)
    assert loop_graph_to_json(bare)["point_edges"] is None
