"""Brownian bridge corridor events on unit-resistance edges.

Every lattice edge carries an independent Brownian bridge between its
endpoint field values, run for time rho (the edge resistance).  Cluster
extraction only needs three things per edge: whether the bridge stays
inside a corridor [-a, b], and, when it exits, the first level reached
as seen from either endpoint.

One-sided exit: for endpoints u, v on the same side of a level,

    P(bridge reaches level) = exp(-2 (u - level)(v - level) / rho),

and 1 when the endpoints straddle or touch the level.  Two-sided stay
probabilities come from the alternating reflection series for the
killed bridge density; terms are added until they fall below 1e-12.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

_SERIES_TOL = 1e-12
_SERIES_MAX_TERMS = 64
_MARKS_MAGIC = b"TVSM"


def bridge_one_sided_exit_prob(u, v, rho, level):
    """Probability the bridge from u to v touches ``level``.

    Vectorized over u, v.  Exact for the continuum bridge; the level
    may sit above or below the endpoints, the reflection formula is the
    same on both sides.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    prod = (u - level) * (v - level)
    out = np.exp(-2.0 * np.maximum(prod, 0.0) / rho)
    return out if out.ndim else float(out)


def bridge_corridor_stay_prob(u, v, rho, a, b):
    """Probability the bridge from u to v stays inside [-a, b].

    Alternating image series for the bridge killed at both corridor
    walls.  Zero whenever an endpoint lies outside the corridor.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if a + b <= 0:
        raise ValueError("corridor [-a, b] must have positive width")
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    scalar = u.shape == (1,) and v.shape == (1,)
    u, v = np.broadcast_arrays(u, v)

    w = a + b
    up = u + a          # distance above the lower wall
    vp = v + a
    delta = v - u
    total = np.zeros_like(up)
    # endpoint on a wall already touches it: treat as exited
    inside = (up > 0) & (u < b) & (vp > 0) & (v < b)

    for n in range(_SERIES_MAX_TERMS):
        ns = (n,) if n == 0 else (n, -n)
        biggest = 0.0
        for m in ns:
            t1 = np.exp(-2.0 * m * w * (m * w - delta) / rho)
            t2 = np.exp(-2.0 * (up - m * w) * (vp - m * w) / rho)
            total += t1 - t2
            biggest = max(biggest, float(np.max(t1[inside], initial=0.0)),
                          float(np.max(t2[inside], initial=0.0)))
        if n > 0 and biggest < _SERIES_TOL:
            break

    total = np.clip(total, 0.0, 1.0)
    total[~inside] = 0.0
    return float(total[0]) if scalar else total


@dataclass
class EdgeMarks:
    """Per-edge corridor events for one field sample.

    ``level_from_u`` / ``level_from_v`` give the crossing level seen
    when traversing the edge from its first / second endpoint: 0 while
    the bridge stays in the corridor, -1 for the lower wall (-a), +1
    for the upper wall (b).  A stay is equivalent to both sides being
    0, and an endpoint value outside the corridor forces an exit.
    """

    a: float
    b: float                     # math.inf marks a one-sided corridor
    seed: int
    stays: np.ndarray            # (n_edges,) bool
    level_from_u: np.ndarray     # (n_edges,) int8
    level_from_v: np.ndarray     # (n_edges,) int8
    source: str = "independent"  # or "extrema" for coupled marks

    @property
    def n_edges(self):
        return len(self.stays)

    def crossed_levels(self, e):
        """Set of walls crossed on edge e, as recorded marks."""
        out = set()
        for lev in (int(self.level_from_u[e]), int(self.level_from_v[e])):
            if lev == -1:
                out.add(-self.a)
            elif lev == 1:
                out.add(self.b)
        return out


def _corridor_event_arrays(u_vals, v_vals, rho, a, b, rng):
    """Sample (stays, level_from_u, level_from_v) for endpoint arrays.

    The exit side for in-corridor endpoints is drawn from the one-sided
    reach probabilities renormalized by their sum; the rare event that
    a single bridge crosses both walls is folded into that choice.  An
    endpoint outside the corridor pins its own side to the wall it
    violates.
    """
    u = np.asarray(u_vals, dtype=np.float64)
    v = np.asarray(v_vals, dtype=np.float64)
    n = len(u)

    p_minus = bridge_one_sided_exit_prob(u, v, rho, -a)
    p_plus = bridge_one_sided_exit_prob(u, v, rho, b)
    p_stay = bridge_corridor_stay_prob(u, v, rho, a, b)

    u1 = rng.random(n)
    u2 = rng.random(n)
    stays = u1 < p_stay

    denom = p_minus + p_plus
    frac_minus = np.divide(p_minus, denom, out=np.full(n, 0.5), where=denom > 0)
    chosen = np.where(u2 < frac_minus, -1, 1).astype(np.int8)

    lev_u = np.where(u < -a, -1, np.where(u > b, 1, chosen)).astype(np.int8)
    lev_v = np.where(v < -a, -1, np.where(v > b, 1, chosen)).astype(np.int8)
    lev_u[stays] = 0
    lev_v[stays] = 0
    return stays, lev_u, lev_v


def sample_edge_marks(sample, a, b, seed):
    """Draw corridor events for every edge of a field sample.

    Marks are independent across edges given the endpoint values; the
    uniforms come from a counter-based generator keyed by the seed, one
    fixed slot per edge, so the draw is order-independent.
    """
    if a <= 0 or b <= 0:
        raise ValueError("corridor walls must satisfy a > 0, b > 0")
    dom = sample.domain
    u = sample.values[dom.edges[:, 0]]
    v = sample.values[dom.edges[:, 1]]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    stays, lev_u, lev_v = _corridor_event_arrays(u, v, dom.resistance, a, b, rng)
    return EdgeMarks(a=float(a), b=float(b), seed=int(seed), stays=stays,
                     level_from_u=lev_u, level_from_v=lev_v)


def sample_fps_marks(sample, a, seed):
    """One-sided marks: the bridge only dies at the lower wall -a."""
    if a <= 0:
        raise ValueError("a must be positive")
    dom = sample.domain
    u = sample.values[dom.edges[:, 0]]
    v = sample.values[dom.edges[:, 1]]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    p_hit = bridge_one_sided_exit_prob(u, v, dom.resistance, -a)
    both_above = (u >= -a) & (v >= -a)
    stays = (rng.random(len(u)) >= p_hit) & both_above
    lev = np.where(stays, 0, -1).astype(np.int8)
    return EdgeMarks(a=float(a), b=math.inf, seed=int(seed), stays=stays,
                     level_from_u=lev.copy(), level_from_v=lev)


@dataclass
class EdgeExtrema:
    """Coupled bridge extrema, one (min, max) pair per edge.

    Sampled once per field, then thresholded at any corridor; nested
    corridors give nested stay events by construction, which is what
    the monotonicity checks need.  The marginals of min and max are the
    exact one-sided laws; their joint law ignores the (small)
    dependence between the two walls.
    """

    seed: int
    lo: np.ndarray     # (n_edges,) bridge minimum
    hi: np.ndarray     # (n_edges,) bridge maximum
    checksum: float    # guards against pairing with a different sample

    @staticmethod
    def fingerprint(values):
        return float(np.float64(values.sum()))


def sample_edge_extrema(sample, seed):
    """Inverse-transform draw of per-edge bridge minima and maxima."""
    dom = sample.domain
    rho = dom.resistance
    u = sample.values[dom.edges[:, 0]]
    v = sample.values[dom.edges[:, 1]]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    # P(min <= m) = exp(-2 (u-m)(v-m)/rho) inverted at a uniform
    q_lo = -(rho / 2.0) * np.log1p(-rng.random(len(u)))   # in (0, inf)
    q_hi = -(rho / 2.0) * np.log1p(-rng.random(len(u)))
    disc_lo = np.sqrt((u - v) ** 2 + 4.0 * q_lo)
    disc_hi = np.sqrt((u - v) ** 2 + 4.0 * q_hi)
    lo = 0.5 * ((u + v) - disc_lo)
    hi = 0.5 * ((u + v) + disc_hi)
    return EdgeExtrema(seed=int(seed), lo=lo, hi=hi,
                       checksum=EdgeExtrema.fingerprint(sample.values))


def marks_from_extrema(extrema, sample, a, b):
    """Threshold coupled extrema at the corridor [-a, b].

    Deterministic given the extrema, so corridors that nest produce
    stay sets that nest.  When both walls are crossed the recorded
    level is the deeper violation; both sides of the edge see the same
    level in this mode.
    """
    if a <= 0 or b <= 0:
        raise ValueError("corridor walls must satisfy a > 0, b > 0")
    if extrema.checksum != EdgeExtrema.fingerprint(sample.values):
        raise ValueError("extrema were drawn for a different sample")
    dom = sample.domain
    u = sample.values[dom.edges[:, 0]]
    v = sample.values[dom.edges[:, 1]]
    u_in = (u >= -a) & (u <= b)
    v_in = (v >= -a) & (v <= b)
    stays = u_in & v_in & (extrema.lo > -a) & (extrema.hi < b)
    exceed_lo = -a - extrema.lo
    exceed_hi = extrema.hi - b
    lev = np.where(exceed_lo >= exceed_hi, -1, 1).astype(np.int8)
    lev[stays] = 0
    return EdgeMarks(a=float(a), b=float(b), seed=extrema.seed, stays=stays,
                     level_from_u=lev.copy(), level_from_v=lev,
                     source="extrema")


# ---------------------------------------------------------------------------
# export


def fps_marks_from_extrema(extrema, sample, a):
    """One-sided threshold of coupled extrema at -a.

    Stays whenever the bridge minimum holds above the wall, so these
    marks nest above any corridor marks cut from the same extrema.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if extrema.checksum != EdgeExtrema.fingerprint(sample.values):
        raise ValueError("extrema were drawn for a different sample")
    dom = sample.domain
    u = sample.values[dom.edges[:, 0]]
    v = sample.values[dom.edges[:, 1]]
    stays = (u >= -a) & (v >= -a) & (extrema.lo > -a)
    lev = np.where(stays, 0, -1).astype(np.int8)
    return EdgeMarks(a=float(a), b=math.inf, seed=extrema.seed, stays=stays,
                     level_from_u=lev.copy(), level_from_v=lev,
                     source="extrema")


def save_marks(marks, path):
    """Write marks to ``path``: packed stay bits, side levels, sidecar."""
    path = str(path)
    n = marks.n_edges
    packed = np.packbits(marks.stays)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sQ", _MARKS_MAGIC, n))
        fh.write(packed.tobytes())
        fh.write(marks.level_from_u.astype("<i1").tobytes())
        fh.write(marks.level_from_v.astype("<i1").tobytes())
    sidecar = {
        "a": marks.a,
        "b": None if math.isinf(marks.b) else marks.b,
        "seed": marks.seed,
        "source": marks.source,
        "n_edges": n,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_marks(path):
    path = str(path)
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    n = int(sidecar["n_edges"])
    n_packed = (n + 7) // 8
    with open(path, "rb") as fh:
        magic, n_file = struct.unpack("<4sQ", fh.read(struct.calcsize("<4sQ")))
        if magic != _MARKS_MAGIC:
            raise ValueError("not a marks file (bad magic)")
        if n_file != n:
            raise ValueError("edge count mismatch between file and sidecar")
        stays = np.unpackbits(
            np.frombuffer(fh.read(n_packed), dtype=np.uint8), count=n
        ).astype(bool)
        lev_u = np.frombuffer(fh.read(n), dtype="<i1").astype(np.int8)
        lev_v = np.frombuffer(fh.read(n), dtype="<i1").astype(np.int8)
    b = sidecar["b"]
    return EdgeMarks(
        a=float(sidecar["a"]),
        b=math.inf if b is None else float(b),
        seed=int(sidecar["seed"]),
        stays=stays,
        level_from_u=lev_u,
        level_from_v=lev_v,
        source=str(sidecar.get("source", "independent")),
    )
