"""Experiment runner: argument parsing, reports, and loop figures.

Usage: ``tvslab <experiment> [--radius 64,128] [--a X] [--b Y] [--r Z]
[--replicas N] [--seed S] [--workers W] [--out DIR] [--svg]
[--config FILE]``.  TVSLAB_SEED provides the default seed; a config
file holds ``key=value`` lines and explicit flags win over it.  Exit
codes: 0 all gates pass, 1 gate failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from .experiments import (
    EXPERIMENT_NAMES,
    default_config,
    replica_br,
    replica_tvs,
    run,
)
from .loops import build_adjacency, extract_loops


# ---------------------------------------------------------------------------
# figures


_FILL_LOWER = "#2166ac"
_FILL_UPPER = "#b2182b"
_FILL_MIXED = "#bdbdbd"


def _loop_outline(coords):
    """Closed outline around a vertex cloud, ordered by angle.

    Tiny loops get a diamond of side offsets so even a single vertex
    draws as a visible polygon.
    """
    pts = np.asarray(coords, dtype=float)
    if len(pts) < 3:
        offs = np.array([[0.45, 0.0], [0.0, 0.45],
                         [-0.45, 0.0], [0.0, -0.45]])
        pts = (pts[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]),
                       kind="stable")
    return pts[order]


def render_svg(lg, path):
    """Draw the loop ensemble: one polygon per unmixed loop, colored by
    label, boundary-touching loops outlined; mixed loops appear as gray
    polylines so the unmixed polygon count stays an exact census."""
    dom = lg.domain
    radius = dom.radius
    pad = 2.0
    lo = -(radius + pad)
    size = 2 * (radius + pad)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{lo:.1f} {lo:.1f} {size:.1f} {size:.1f}" '
        f'width="800" height="800">',
        f'<rect x="{lo:.1f}" y="{lo:.1f}" width="{size:.1f}" '
        f'height="{size:.1f}" fill="#ffffff"/>',
        f'<circle cx="0" cy="0" r="{radius}" fill="none" '
        f'stroke="#888888" stroke-width="0.6"/>',
    ]
    for i in range(lg.n_loops):
        outline = _loop_outline(dom.coords[lg.loops[i]])
        # svg y grows downward; the lattice y is flipped on output
        pts = " ".join(f"{x:.2f},{-y:.2f}" for x, y in outline)
        if lg.mixed[i]:
            parts.append(
                f'<polyline points="{pts}" fill="none" '
                f'stroke="{_FILL_MIXED}" stroke-width="0.8"/>')
            continue
        fill = _FILL_LOWER if lg.labels[i] < 0 else _FILL_UPPER
        stroke = ('stroke="#000000" stroke-width="0.8"'
                  if lg.touches_boundary[i] else 'stroke="none"')
        parts.append(
            f'<polygon points="{pts}" fill="{fill}" '
            f'fill-opacity="0.75" {stroke}/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


def _render_job(job, out_dir):
    if job["kind"] == "br":
        s = replica_br(job["radius"], job["r"], job["master"],
                       job["replica"])
    else:
        s = replica_tvs(job["radius"], job["a"], job["b"], job["master"],
                        job["replica"])
    lg = build_adjacency(extract_loops(s))
    path = os.path.join(out_dir, job["name"] + ".svg")
    return render_svg(lg, path)


# ---------------------------------------------------------------------------
# report files


def write_report(report, out_dir):
    """JSON body + wall clock + timestamp, plus one CSV per table."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    payload = {
        "body": report.body(),
        "run": {
            "workers": report.config.get("workers"),
            "out_dir": report.config.get("out_dir"),
            "emit_svg": report.config.get("emit_svg"),
            "wall_clock_s": round(report.wall_clock_s, 3),
            "written_at": datetime.now(timezone.utc).isoformat(),
        },
    }
    json_path = os.path.join(out_dir, f"{report.experiment}.json")
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(json_path)

    for name, table in report.tables.items():
        csv_path = os.path.join(out_dir, f"{report.experiment}-{name}.csv")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(table["columns"])
            for row in table["rows"]:
                writer.writerow(["" if v is None else v for v in row])
        paths.append(csv_path)
    return paths


# ---------------------------------------------------------------------------
# argument handling


def _parse_radii(text):
    vals = tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    if not vals or any(v < 4 for v in vals):
        raise ValueError(f"bad radius list {text!r}")
    return vals


_TRUE = {"1", "true", "yes", "on"}


def _read_config_file(path):
    """key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out


def _apply_settings(cfg, settings):
    known = {"radius", "radii", "a", "b", "r", "replicas", "seed",
             "workers", "out", "svg"}
    for key, val in settings.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if val is None:
            continue
        if key in ("radius", "radii"):
            cfg = replace(cfg, radii=_parse_radii(val))
        elif key in ("a", "b", "r"):
            x = float(val)
            if not (math.isfinite(x) and x > 0):
                raise ValueError(f"{key} must be positive, got {val!r}")
            cfg = replace(cfg, **{key: x})
        elif key == "replicas":
            n = int(val)
            if n < 1:
                raise ValueError("replicas must be >= 1")
            cfg = replace(cfg, replicas=n)
        elif key == "seed":
            cfg = replace(cfg, seed=int(val))
        elif key == "workers":
            w = int(val)
            if w < 1:
                raise ValueError("workers must be >= 1")
            cfg = replace(cfg, workers=w)
        elif key == "out":
            cfg = replace(cfg, out_dir=str(val))
        elif key == "svg":
            flag = str(val).lower() in _TRUE if not isinstance(val, bool) \
                else val
            cfg = replace(cfg, emit_svg=flag)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tvslab",
        description="corridor-set experiments on metric-graph fields")
    parser.add_argument("experiment",
                        help="one of: " + ", ".join(EXPERIMENT_NAMES))
    parser.add_argument("--radius", default=None,
                        help="comma-separated radius list, e.g. 64,128")
    parser.add_argument("--a", type=float, default=None)
    parser.add_argument("--b", type=float, default=None)
    parser.add_argument("--r", type=float, default=None)
    parser.add_argument("--replicas", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--svg", action="store_true", default=False,
                        help="emit loop renderings")
    parser.add_argument("--config", default=None,
                        help="key=value settings file; flags win")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.experiment not in EXPERIMENT_NAMES:
        print(f"unknown experiment {args.experiment!r}; choose from: "
              + ", ".join(EXPERIMENT_NAMES), file=sys.stderr)
        return 2

    cfg = default_config(args.experiment)
    env_seed = os.environ.get("TVSLAB_SEED")
    try:
        if env_seed is not None:
            cfg = replace(cfg, seed=int(env_seed))
        if args.config is not None:
            cfg = _apply_settings(cfg, _read_config_file(args.config))
        flags = {"radius": args.radius, "a": args.a, "b": args.b,
                 "r": args.r, "replicas": args.replicas, "seed": args.seed,
                 "workers": args.workers, "out": args.out,
                 "svg": True if args.svg else None}
        cfg = _apply_settings(cfg, flags)
    except (ValueError, OSError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2

    report = run(args.experiment, cfg)
    paths = write_report(report, cfg.out_dir)
    if cfg.emit_svg:
        for job in report.svg_jobs:
            paths.append(_render_job(job, cfg.out_dir))

    for name in sorted(report.gates):
        mark = "PASS" if report.gates[name] else "FAIL"
        print(f"{mark}  {name}")
    print(f"report: {paths[0]}")
    for extra in paths[1:]:
        print(f"  also: {extra}")
    if report.passed:
        return 0
    print("failing gates: " + ", ".join(report.failing_gates()),
          file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
