"""Lattice disks, discrete Green's functions, and free field samples.

The domain is the set of Z^2 vertices inside a centered disk of radius
``radius`` lattice units, together with the ring of outside vertices
adjacent to it.  The field is pinned to zero on the ring and the
interior covariance is the inverse of the combinatorial Laplacian
(diagonal 4, off-diagonal -1 per edge).  With that normalization the
on-diagonal Green's function grows like log(radius) / (2 pi), which is
the normalization the corridor thresholds below are calibrated to, so
thresholds are always applied in absolute field units, at every mesh.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.linalg import cg as _cg

LAMBDA = math.sqrt(math.pi / 8.0)   # 0.626657068657750...
TWO_LAMBDA = 2.0 * LAMBDA
FOUR_LAMBDA = 4.0 * LAMBDA

# n_interior at or below this gets a dense Cholesky; above, CHOLMOD.
_DENSE_LIMIT = 4000
# largest radius handled by exact sparse factorization; beyond this the
# sampler falls back to conjugate-direction iteration.
_FACTOR_RADIUS_LIMIT = 256
_CG_TOL = 1e-10

_FIELD_MAGIC = b"TVS1"


@dataclass
class LatticeDomain:
    """Disk-shaped patch of Z^2 plus its pinned boundary ring.

    Vertices are stored in row-major order (y, then x).  ``edges`` holds
    index pairs for every lattice edge with at least one interior
    endpoint; ring-ring pairs are dropped because the field is pinned to
    zero on the whole ring.
    """

    radius: int
    coords: np.ndarray          # (n_total, 2) int32, columns (x, y)
    interior_mask: np.ndarray   # (n_total,) bool
    edges: np.ndarray           # (n_edges, 2) int32
    resistance: float = 1.0     # per-edge bridge time, uniform
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_total(self):
        return len(self.coords)

    @property
    def n_interior(self):
        return int(self.interior_mask.sum())

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary_mask(self):
        return ~self.interior_mask

    @property
    def interior_rank(self):
        """Position of each vertex among interior vertices, -1 on the ring."""
        if "interior_rank" not in self._cache:
            rank = np.full(self.n_total, -1, dtype=np.int64)
            rank[self.interior_mask] = np.arange(self.n_interior)
            self._cache["interior_rank"] = rank
        return self._cache["interior_rank"]

    @property
    def center_index(self):
        if "center" not in self._cache:
            hit = np.flatnonzero((self.coords[:, 0] == 0) & (self.coords[:, 1] == 0))
            if len(hit) != 1:
                raise ValueError("domain has no vertex at the origin")
            self._cache["center"] = int(hit[0])
        return self._cache["center"]

    def vertex_index(self, x, y):
        hit = np.flatnonzero((self.coords[:, 0] == x) & (self.coords[:, 1] == y))
        if len(hit) != 1:
            raise KeyError(f"no vertex at ({x}, {y})")
        return int(hit[0])

    def precision_matrix(self):
        """Combinatorial Laplacian over interior vertices, CSC."""
        if "precision" not in self._cache:
            rank = self.interior_rank
            iu = rank[self.edges[:, 0]]
            iv = rank[self.edges[:, 1]]
            both = (iu >= 0) & (iv >= 0)
            r = np.concatenate([iu[both], iv[both]])
            c = np.concatenate([iv[both], iu[both]])
            n = self.n_interior
            off = scipy.sparse.coo_matrix(
                (np.full(len(r), -1.0), (r, c)), shape=(n, n)
            )
            diag = scipy.sparse.dia_matrix(
                (np.full(n, 4.0), [0]), shape=(n, n)
            )
            self._cache["precision"] = (diag + off).tocsc()
        return self._cache["precision"]

    def adjacency(self):
        """Symmetric CSR adjacency over all vertices (domain edges only)."""
        if "adjacency" not in self._cache:
            u, v = self.edges[:, 0], self.edges[:, 1]
            n = self.n_total
            a = scipy.sparse.coo_matrix(
                (np.ones(2 * len(u), dtype=np.int8),
                 (np.concatenate([u, v]), np.concatenate([v, u]))),
                shape=(n, n),
            )
            self._cache["adjacency"] = a.tocsr()
        return self._cache["adjacency"]


@dataclass
class FieldSample:
    """One zero-boundary field realization on a domain."""

    domain: LatticeDomain
    values: np.ndarray   # (n_total,) float64, ring entries exactly 0
    seed: int
    method: str


def domain_from_vertices(interior_pts, resistance=1.0):
    """Build a LatticeDomain from an explicit interior vertex set.

    ``interior_pts`` is an iterable of (x, y) integer pairs.  The ring is
    every outside vertex 4-adjacent to the interior.  Vertex order is
    row-major over the bounding box, which keeps construction
    reproducible across runs and platforms.
    """
    pts = np.asarray(sorted({(int(x), int(y)) for x, y in interior_pts}), dtype=np.int64)
    if len(pts) == 0:
        raise ValueError("empty interior")
    xmin, ymin = pts.min(axis=0) - 1
    xmax, ymax = pts.max(axis=0) + 1
    w, h = xmax - xmin + 1, ymax - ymin + 1
    grid_int = np.zeros((h, w), dtype=bool)
    grid_int[pts[:, 1] - ymin, pts[:, 0] - xmin] = True

    ring = np.zeros_like(grid_int)
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        sh = np.zeros_like(grid_int)
        ys = slice(max(dy, 0), h + min(dy, 0))
        yd = slice(max(-dy, 0), h + min(-dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        xd = slice(max(-dx, 0), w + min(-dx, 0))
        sh[yd, xd] = grid_int[ys, xs]
        ring |= sh
    ring &= ~grid_int

    keep = grid_int | ring
    yy, xx = np.nonzero(keep)          # row-major scan: y, then x
    coords = np.column_stack([xx + xmin, yy + ymin]).astype(np.int32)
    interior_mask = grid_int[yy, xx]

    index_grid = np.full((h, w), -1, dtype=np.int64)
    index_grid[yy, xx] = np.arange(len(coords))

    eu, ev = [], []
    for dy, dx in ((0, 1), (1, 0)):    # +x then +y neighbor, scan order
        ys = slice(0, h - dy)
        xs = slice(0, w - dx)
        a = index_grid[ys, xs]
        b = index_grid[dy:h, dx:w]
        ok = (a >= 0) & (b >= 0)
        # drop ring-ring pairs, the field is pinned there
        ok &= grid_int[ys, xs] | grid_int[dy:h, dx:w]
        eu.append(a[ok])
        ev.append(b[ok])
    pairs = np.column_stack([np.concatenate(eu), np.concatenate(ev)])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    edges = pairs[order].astype(np.int32)

    radius = int(np.ceil(np.sqrt((pts ** 2).sum(axis=1).max()))) if len(pts) else 0
    return LatticeDomain(
        radius=radius,
        coords=coords,
        interior_mask=interior_mask,
        edges=edges,
        resistance=float(resistance),
    )


def build_disk_domain(radius, resistance=1.0):
    """Disk domain {x^2 + y^2 <= radius^2} plus its boundary ring.

    Parameters
    ----------
    radius : int
        Disk radius in lattice cells, at least 2.
    resistance : float
        Uniform per-edge resistance (bridge time).

    Returns
    -------
    LatticeDomain
    """
    radius = int(radius)
    if radius < 2:
        raise ValueError("radius must be at least 2 lattice cells")
    r2 = radius * radius
    span = np.arange(-radius, radius + 1)
    xs, ys = np.meshgrid(span, span)
    inside = xs ** 2 + ys ** 2 <= r2
    pts = np.column_stack([xs[inside], ys[inside]])
    dom = domain_from_vertices(pts, resistance=resistance)
    dom.radius = radius
    return dom


# ---------------------------------------------------------------------------
# linear algebra backends


class _DenseFactor:
    def __init__(self, lap):
        # upper-triangular U with L = U^T U
        self.u = scipy.linalg.cholesky(lap.toarray(), lower=False)
        self.n = lap.shape[0]

    def solve(self, b):
        return scipy.linalg.cho_solve((self.u, False), b)

    def sample(self, rng):
        # x = U^{-1} z has covariance (U^T U)^{-1} = L^{-1}
        z = rng.standard_normal(self.n)
        return scipy.linalg.solve_triangular(self.u, z, lower=False)


class _CholmodFactor:
    def __init__(self, lap):
        from cvxopt import cholmod, matrix, spmatrix

        coo = lap.tocoo()
        self._cholmod = cholmod
        self._matrix = matrix
        self.n = lap.shape[0]
        a = spmatrix(
            coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), coo.shape
        )
        cholmod.options["supernodal"] = 2   # LL^T, no diagonal D
        self.factor = cholmod.symbolic(a)
        cholmod.numeric(a, self.factor)

    def solve(self, b):
        arr = np.asarray(b, dtype=np.float64)
        one_d = arr.ndim == 1
        m = self._matrix(arr.reshape(arr.shape[0], -1))
        self._cholmod.solve(self.factor, m, sys=0)
        out = np.array(m)
        return out[:, 0] if one_d else out

    def sample(self, rng):
        # with the P A P^T = L L^T factorization: x = P^T L^{-T} z
        z = rng.standard_normal(self.n)
        m = self._matrix(z.reshape(-1, 1))
        self._cholmod.solve(self.factor, m, sys=5)   # L^T y = z
        self._cholmod.solve(self.factor, m, sys=8)   # x = P^T y
        return np.array(m)[:, 0]


class _ConjugateFactor:
    """Iterative fallback for domains too large to factorize.

    Solves run CG at a fixed residual tolerance.  Sampling uses the
    conjugate-direction sampler: along the CG search directions p_k of
    a gaussian right-hand side, accumulate z_k p_k / sqrt(p_k' A p_k)
    with fresh z_k, which converges to N(0, A^{-1}) on the explored
    Krylov space at the same stopping tolerance.
    """

    def __init__(self, lap):
        self.a = lap.tocsr()
        self.n = lap.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            x, info = _cg(self.a, b, rtol=_CG_TOL, maxiter=20 * self.n)
            if info != 0:
                raise RuntimeError("conjugate gradient did not converge")
            return x
        return np.column_stack([self.solve(col) for col in b.T])

    def sample(self, rng):
        a, n = self.a, self.n
        b = rng.standard_normal(n)
        y = np.zeros(n)
        r = b.copy()
        p = r.copy()
        rs = r @ r
        norm0 = math.sqrt(rs)
        it = 0
        while math.sqrt(rs) > _CG_TOL * norm0 and it < 10 * n:
            ap = a @ p
            pap = p @ ap
            if pap <= 0:
                break
            y += (rng.standard_normal() / math.sqrt(pap)) * p
            alpha = rs / pap
            r -= alpha * ap
            rs_new = r @ r
            p = r + (rs_new / rs) * p
            rs = rs_new
            it += 1
        return y


def _interior_factor(domain):
    if "factor" not in domain._cache:
        lap = domain.precision_matrix()
        n = lap.shape[0]
        if n <= _DENSE_LIMIT:
            fac, name = _DenseFactor(lap), "dense"
        elif domain.radius <= _FACTOR_RADIUS_LIMIT:
            fac, name = _CholmodFactor(lap), "cholmod"
        else:
            fac, name = _ConjugateFactor(lap), "cg"
        domain._cache["factor"] = (fac, name)
    return domain._cache["factor"]


# ---------------------------------------------------------------------------
# operations


def green_function(domain, pairs=None):
    """Green's function of the walk killed on the ring.

    Parameters
    ----------
    domain : LatticeDomain
    pairs : (m, 2) int array or None
        Vertex index pairs.  ``None`` returns the dense matrix over all
        vertices (zero rows/columns on the ring), only for small
        domains.

    Notes
    -----
    G = L^{-1} with L the combinatorial Laplacian, so a domain with one
    interior vertex has G = 1/4 and the on-diagonal value grows like
    log(radius) / (2 pi) plus a lattice constant that is measured, not
    assumed.
    """
    rank = domain.interior_rank
    n_int = domain.n_interior
    if pairs is None:
        if n_int > _DENSE_LIMIT:
            raise ValueError("full Green matrix is dense-only; pass pairs")
        lap = domain.precision_matrix().toarray()
        g_int = scipy.linalg.inv(lap)
        g = np.zeros((domain.n_total, domain.n_total))
        idx = np.flatnonzero(domain.interior_mask)
        g[np.ix_(idx, idx)] = g_int
        return g

    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.int64))
    fac, _ = _interior_factor(domain)
    out = np.zeros(len(pairs))
    cols = np.unique(pairs[:, 1])
    for j in cols:
        rj = rank[j]
        if rj < 0:
            continue                    # ring column, Green is zero
        e = np.zeros(n_int)
        e[rj] = 1.0
        col = fac.solve(e)
        sel = pairs[:, 1] == j
        ri = rank[pairs[sel, 0]]
        vals = np.where(ri >= 0, col[np.maximum(ri, 0)], 0.0)
        out[sel] = vals
    return out if len(out) > 1 else float(out[0])


def sample_dgff(domain, seed, method="auto"):
    """Draw one zero-boundary field with covariance ``green_function``.

    Identical (domain, seed, method) gives bit-identical values; the
    gaussian stream is a counter-based generator keyed by the seed
    alone, so replicas can be drawn in any order.
    """
    fac, resolved = _interior_factor(domain)
    if method != "auto" and method != resolved:
        raise ValueError(f"method {method!r} unavailable; resolved {resolved!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x = fac.sample(rng)
    values = np.zeros(domain.n_total)
    values[domain.interior_mask] = x
    return FieldSample(domain=domain, values=values, seed=int(seed), method=resolved)


def _region_system(domain, region_mask):
    """Laplacian over a region of interior vertices, plus solver."""
    region_mask = np.asarray(region_mask, dtype=bool)
    if region_mask.shape != (domain.n_total,):
        raise ValueError("region mask must cover every vertex")
    if (region_mask & domain.boundary_mask).any():
        raise ValueError("region must be interior-only")
    rank = np.full(domain.n_total, -1, dtype=np.int64)
    n_r = int(region_mask.sum())
    if n_r == 0:
        raise ValueError("empty region")
    rank[region_mask] = np.arange(n_r)

    u, v = domain.edges[:, 0], domain.edges[:, 1]
    ru, rv = rank[u], rank[v]
    both = (ru >= 0) & (rv >= 0)
    rr = np.concatenate([ru[both], rv[both]])
    cc = np.concatenate([rv[both], ru[both]])
    lap = (
        scipy.sparse.coo_matrix((np.full(len(rr), -1.0), (rr, cc)), shape=(n_r, n_r))
        + scipy.sparse.dia_matrix((np.full(n_r, 4.0), [0]), shape=(n_r, n_r))
    ).tocsc()

    # cross edges: one endpoint in the region, the other is its graph boundary
    xu = (ru >= 0) & (rv < 0)
    xv = (rv >= 0) & (ru < 0)
    cross_in = np.concatenate([ru[xu], rv[xv]])
    cross_out = np.concatenate([v[xu], u[xv]])

    fac = _DenseFactor(lap) if n_r <= _DENSE_LIMIT else _CholmodFactor(lap)
    return rank, lap, cross_in, cross_out, fac


def harmonic_extension(domain, region_mask, boundary_values):
    """Discrete-harmonic extension into a region of interior vertices.

    ``boundary_values`` is a full-length vertex array; only its entries
    on the region's graph boundary are read.  Returns a full-length
    array equal to ``boundary_values`` off the region and harmonic on
    it (every region vertex is the mean of its 4 neighbors).
    """
    boundary_values = np.asarray(boundary_values, dtype=np.float64)
    if boundary_values.shape != (domain.n_total,):
        raise ValueError("boundary_values must cover every vertex")
    rank, _, cross_in, cross_out, fac = _region_system(domain, region_mask)
    n_r = int(np.asarray(region_mask).sum())
    rhs = np.zeros(n_r)
    np.add.at(rhs, cross_in, boundary_values[cross_out])
    sol = fac.solve(rhs)
    out = boundary_values.copy()
    out[np.asarray(region_mask, dtype=bool)] = sol
    return out


def conditional_resample(domain, sample, region_mask, seed):
    """Resample the field inside a region given its complement.

    Markov property: new values = harmonic extension of the retained
    values into the region plus an independent zero-boundary field of
    the region subgraph.  Values outside the region are bit-identical
    to the input sample.
    """
    region_mask = np.asarray(region_mask, dtype=bool)
    rank, _, cross_in, cross_out, fac = _region_system(domain, region_mask)
    n_r = int(region_mask.sum())

    rhs = np.zeros(n_r)
    np.add.at(rhs, cross_in, sample.values[cross_out])
    harmonic = fac.solve(rhs)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    fresh = fac.sample(rng)

    values = sample.values.copy()
    values[region_mask] = harmonic + fresh
    return FieldSample(
        domain=domain, values=values, seed=int(seed),
        method=sample.method + "+resample",
    )


# ---------------------------------------------------------------------------
# export


def save_field(sample, path):
    """Write a field to ``path`` (binary) plus a JSON sidecar.

    Layout: magic ``TVS1``, little-endian uint32 radius, uint64 vertex
    count, then float64 values in vertex order.
    """
    path = str(path)
    values = np.ascontiguousarray(sample.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", _FIELD_MAGIC, sample.domain.radius,
                             sample.domain.n_total))
        fh.write(values.tobytes())
    sidecar = {
        "seed": sample.seed,
        "method": sample.method,
        "lambda": LAMBDA,
        "radius": sample.domain.radius,
        "n_vertices": sample.domain.n_total,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_field(path, domain=None):
    """Read a field written by :func:`save_field`."""
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sIQ"))
        magic, radius, n_total = struct.unpack("<4sIQ", head)
        if magic != _FIELD_MAGIC:
            raise ValueError("not a field file (bad magic)")
        values = np.frombuffer(fh.read(8 * n_total), dtype="<f8").astype(np.float64)
    if domain is None:
        domain = build_disk_domain(radius)
    if domain.n_total != n_total:
        raise ValueError("vertex count mismatch between file and domain")
    try:
        with open(path + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        warnings.warn("field sidecar missing; seed/method unknown")
        sidecar = {}
    return FieldSample(
        domain=domain,
        values=values,
        seed=int(sidecar.get("seed", -1)),
        method=str(sidecar.get("method", "unknown")),
    )
