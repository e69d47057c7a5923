"""Domain construction, Green's function, and field sampler checks.

The Green oracle throughout is a dense linear solve of the
combinatorial Laplacian on the same lattice; nothing here assumes a
value for the lattice constant in the log asymptotics.
"""

import math

import numpy as np
import pytest

from tvslab import (
    LAMBDA,
    build_disk_domain,
    domain_from_vertices,
    green_function,
    sample_dgff,
    harmonic_extension,
    conditional_resample,
    save_field,
    load_field,
)
from tvslab.lattice import FieldSample


def dense_green(domain):
    """Oracle: dense inverse of the interior Laplacian."""
    n = domain.n_interior
    rank = domain.interior_rank
    lap = np.zeros((n, n))
    np.fill_diagonal(lap, 4.0)
    for u, v in domain.edges:
        ru, rv = rank[u], rank[v]
        if ru >= 0 and rv >= 0:
            lap[ru, rv] -= 1.0
            lap[rv, ru] -= 1.0
    return np.linalg.inv(lap)


def test_lambda_constant():
    assert LAMBDA == pytest.approx(math.sqrt(math.pi / 8.0), abs=0)
    assert f"{LAMBDA:.12f}" == "0.626657068658"


def test_disk_domain_radius_2():
    dom = build_disk_domain(2)
    assert dom.n_interior == 13
    # every interior vertex keeps full lattice degree inside the domain
    deg = np.zeros(dom.n_total, dtype=int)
    for u, v in dom.edges:
        deg[u] += 1
        deg[v] += 1
    assert (deg[dom.interior_mask] == 4).all()
    # ring vertices only connect inward
    assert dom.edges.max() < dom.n_total
    both_ring = dom.boundary_mask[dom.edges[:, 0]] & dom.boundary_mask[dom.edges[:, 1]]
    assert not both_ring.any()


def test_disk_domain_area():
    dom = build_disk_domain(64)
    target = math.pi * 64 ** 2
    assert abs(dom.n_interior - target) / target < 0.02


def test_disk_domain_rejects_small_radius():
    with pytest.raises(ValueError):
        build_disk_domain(1)


def test_domain_construction_deterministic():
    a = build_disk_domain(5)
    b = build_disk_domain(5)
    assert np.array_equal(a.coords, b.coords)
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.interior_mask, b.interior_mask)


def test_green_single_interior_vertex():
    dom = domain_from_vertices([(0, 0)])
    g = green_function(dom, [(dom.center_index, dom.center_index)])
    assert g == pytest.approx(0.25, abs=1e-12)


def test_green_matches_dense_oracle():
    dom = build_disk_domain(8)
    oracle = dense_green(dom)
    full = green_function(dom)
    idx = np.flatnonzero(dom.interior_mask)
    assert np.allclose(full[np.ix_(idx, idx)], oracle, atol=1e-10)
    # pairs path agrees with the full path
    c = dom.center_index
    some = [(c, c), (idx[0], c), (c, idx[3]), (idx[5], idx[9])]
    vals = green_function(dom, some)
    rank = dom.interior_rank
    expect = [oracle[rank[i], rank[j]] for i, j in some]
    assert np.allclose(vals, expect, atol=1e-10)


def test_green_symmetric_and_boundary_zero():
    dom = build_disk_domain(6)
    full = green_function(dom)
    assert np.allclose(full, full.T, atol=1e-12)
    ring = np.flatnonzero(dom.boundary_mask)
    assert np.count_nonzero(full[ring]) == 0


def test_green_center_log_growth():
    # measured lattice constant: G(0,0) = log(R)/(2 pi) + c + o(1); the
    # constant is whatever the dense oracle says, only the growth rate
    # is asserted here.
    g16 = green_function(build_disk_domain(16), None)
    g32 = green_function(build_disk_domain(32), None)
    d16 = build_disk_domain(16)
    d32 = build_disk_domain(32)
    v16 = g16[d16.center_index, d16.center_index]
    v32 = g32[d32.center_index, d32.center_index]
    growth = v32 - v16
    assert growth == pytest.approx(math.log(2.0) / (2.0 * math.pi), rel=0.08)


def test_sample_dgff_deterministic():
    dom = build_disk_domain(6)
    s1 = sample_dgff(dom, seed=42)
    s2 = sample_dgff(dom, seed=42)
    assert np.array_equal(s1.values, s2.values)
    s3 = sample_dgff(dom, seed=43)
    assert not np.array_equal(s1.values, s3.values)
    assert (s1.values[dom.boundary_mask] == 0).all()


def test_sample_dgff_covariance_small():
    # empirical covariance against the dense oracle on a radius-4 disk
    dom = build_disk_domain(4)
    oracle = dense_green(dom)
    n = dom.n_interior
    draws = 40000
    acc = np.zeros((n, n))
    for k in range(draws):
        x = sample_dgff(dom, seed=k).values[dom.interior_mask]
        acc += np.outer(x, x)
    emp = acc / draws
    se = np.sqrt((np.outer(np.diag(oracle), np.diag(oracle)) + oracle ** 2) / draws)
    worst = np.abs(emp - oracle) / se
    assert worst.max() < 5.0


def test_harmonic_extension_residual():
    dom = build_disk_domain(10)
    rng = np.random.default_rng(7)
    values = rng.normal(size=dom.n_total)
    # region: interior sub-disk of radius 6
    r2 = (dom.coords ** 2).sum(axis=1)
    region = dom.interior_mask & (r2 <= 36)
    h = harmonic_extension(dom, region, values)
    adj = dom.adjacency()
    lap = 4.0 * h[region] - np.asarray(adj[region].dot(h)).ravel()
    assert np.abs(lap).max() < 1e-9
    # untouched outside
    assert np.array_equal(h[~region], values[~region])


def test_harmonic_extension_rejects_ring():
    dom = build_disk_domain(4)
    region = np.ones(dom.n_total, dtype=bool)
    with pytest.raises(ValueError):
        harmonic_extension(dom, region, np.zeros(dom.n_total))


def test_conditional_resample_markov():
    dom = build_disk_domain(6)
    base = sample_dgff(dom, seed=5)
    r2 = (dom.coords ** 2).sum(axis=1)
    region = dom.interior_mask & (r2 <= 9)
    out = conditional_resample(dom, base, region, seed=99)
    assert np.array_equal(out.values[~region], base.values[~region])
    assert not np.array_equal(out.values[region], base.values[region])
    # determinism
    out2 = conditional_resample(dom, base, region, seed=99)
    assert np.array_equal(out.values, out2.values)


def test_conditional_resample_preserves_law():
    # resampling a region must leave one-point marginals at the Green
    # variance; checked at the center against the dense oracle.
    dom = build_disk_domain(5)
    oracle = dense_green(dom)
    c = dom.center_index
    rank = dom.interior_rank
    var_target = oracle[rank[c], rank[c]]
    r2 = (dom.coords ** 2).sum(axis=1)
    region = dom.interior_mask & (r2 <= 4)
    draws = 20000
    vals = np.empty(draws)
    for k in range(draws):
        base = sample_dgff(dom, seed=2 * k)
        vals[k] = conditional_resample(dom, base, region, seed=2 * k + 1).values[c]
    var_emp = vals.var()
    se = var_target * math.sqrt(2.0 / draws)
    assert abs(var_emp - var_target) < 5 * se


def test_field_io_roundtrip(tmp_path):
    dom = build_disk_domain(4)
    s = sample_dgff(dom, seed=11)
    p = tmp_path / "field.tvs"
    save_field(s, p)
    back = load_field(p)
    assert isinstance(back, FieldSample)
    assert back.seed == 11
    assert back.method == s.method
    assert np.array_equal(back.values, s.values)
    raw = p.read_bytes()
    assert raw[:4] == b"TVS1"
