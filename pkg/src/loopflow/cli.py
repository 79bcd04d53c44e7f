"""Command-line pipeline: critical points, flows, connecting orbits,
homology, the invariant suite, and admissibility radii.

Exit codes: 0 success, 1 invariant failure, 2 usage or configuration
error, 3 numerical error from any module.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .complex import (
    assemble,
    check_d_squared,
    compare_reference,
    homology,
    orientation_invariance,
)
from .config import artifact_header, load_config
from .critical import enumerate_below
from .errors import ConfigError, LoopflowError, NotAComplexError
from .heatflow import energy, integrate
from .loopspace import loop_to_csv, random_smooth_loop
from .moduli import (
    FlowControls,
    build_chart,
    compute_sign,
    enumerate_connecting,
    ev0_injectivity,
    unstable_rank,
)
from .perturbation import (
    BumpPerturbation,
    admissible_radius,
    check_sublevel_inclusions,
)


def _write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return str(path)


def _crit_record(c):
    return {
        "action": c.action,
        "morse_index": c.morse_index,
        "nondeg_margin": c.nondeg_margin,
        "residual_sup": c.residual_sup,
        "winding": [int(w) for w in np.atleast_1d(c.winding)],
        "points": c.loop.points.tolist(),
    }


def _compute_crit(cfg):
    return enumerate_below(
        cfg.potential, cfg.level, cfg.manifold, cfg.n,
        angle_grid=cfg.seeds["angle_grid"],
        winding_bound=cfg.seeds["winding_bound"],
        tol_crit=cfg.tol_crit())


def _flow_controls(cfg):
    n = cfg.n
    return FlowControls(
        h_s=cfg.h_s, s_max=cfg.s_max,
        tol_conv=cfg.tolerances["tol_conv"],
        capture_radius=cfg.capture_radius(),
        store_stride=max(1, int(round(0.02 / cfg.h_s))),
        sweep_h_s=0.99 * 0.25 / n,
        sweep_stride=8)


def _compute_orbits(cfg, crit):
    controls = _flow_controls(cfg)
    orbits = []
    for src in crit:
        if src.morse_index < 1 or src.morse_index > 2:
            continue
        chart = build_chart(src, V=cfg.potential)
        cache = {}
        for tgt in crit:
            if src.morse_index - tgt.morse_index != 1:
                continue
            found = enumerate_connecting(
                src, tgt, chart, cfg.potential, controls, crit,
                sweep_cache=cache)
            for orb in found:
                orb.sign = compute_sign(orb, cfg.potential)
            orbits.extend(found)
    return orbits, controls


def cmd_crit(cfg, out):
    crit = _compute_crit(cfg)
    payload = artifact_header(cfg)
    payload["critical_points"] = [_crit_record(c) for c in crit]
    print(_write_json(out / "critical_points.json", payload))
    return 0


def cmd_flow(cfg, out):
    rng = np.random.default_rng(cfg.rng_seed)
    u0 = random_smooth_loop(cfg.manifold, cfg.n, rng)
    traj = integrate(u0, cfg.potential, cfg.h_s, cfg.s_max,
                     tol_conv=cfg.tolerances["tol_conv"],
                     store_stride=max(1, int(round(0.02 / cfg.h_s))))
    out.mkdir(parents=True, exist_ok=True)
    keys = list(traj.monitors)
    with open(out / "flow_monitors.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in zip(*(traj.monitors[k] for k in keys)):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(out / "flow_final_loop.csv", "w") as fh:
        fh.write(loop_to_csv(traj.final_loop))
    payload = artifact_header(cfg)
    payload["status"] = traj.status
    payload["energy"] = energy(traj)
    payload["n_slices"] = traj.n_slices
    print(_write_json(out / "flow_summary.json", payload))
    return 0


def cmd_moduli(cfg, out):
    crit = _compute_crit(cfg)
    orbits, _ = _compute_orbits(cfg, crit)
    payload = artifact_header(cfg)
    payload["orbits"] = [o.to_json() for o in orbits]
    payload["ev0_injectivity"] = {
        k: v for k, v in ev0_injectivity(orbits).items()
        if k != "violations"} if len(orbits) >= 2 else None
    print(_write_json(out / "orbits.json", payload))
    return 0


def cmd_homology(cfg, out):
    crit = _compute_crit(cfg)
    orbits, _ = _compute_orbits(cfg, crit)
    cx = assemble(crit, orbits)
    result = homology(cx)
    payload = artifact_header(cfg)
    payload["generators"] = cx.summary()
    payload["boundary"] = {str(k): cx.boundary_array(k).tolist()
                           for k in cx.boundary}
    payload["betti"] = result.betti
    payload["torsion"] = {str(k): v for k, v in result.torsion.items()}
    status = 0
    if cfg.reference_betti is not None:
        match = result.betti == cfg.reference_betti and not result.torsion
        payload["reference"] = {"betti": cfg.reference_betti,
                                "match": match}
        if not match:
            status = 1
    print(_write_json(out / "complex.json", payload))
    return status


def cmd_check(cfg, out):
    rng = np.random.default_rng(cfg.rng_seed)
    crit = _compute_crit(cfg)
    orbits, _ = _compute_orbits(cfg, crit)
    checks = []

    def record(name, ok, **detail):
        checks.append({"name": name, "ok": bool(ok), **detail})

    for c in crit:
        record("critical-residual", c.residual_sup <= cfg.tol_crit(),
               action=c.action, residual=c.residual_sup)
        record("nondegeneracy",
               c.nondeg_margin > cfg.tolerances["tol_nondeg"],
               action=c.action, margin=c.nondeg_margin)
    for o in orbits:
        drop = o.action_drop
        record("energy-identity",
               abs(o.energy - drop) <= 1e-3 * max(1.0, abs(drop)),
               energy=o.energy, action_drop=drop)
    try:
        cx = assemble(crit, orbits)
        rep = check_d_squared(cx, raise_on_failure=False)
        record("boundary-squared-zero", rep["ok"],
               max_entry=rep["max_entry"])
        result = homology(cx)
        inv = orientation_invariance(crit, orbits, rng)
        record("orientation-invariance", inv["invariant"])
        rep = compare_reference(result, cfg.manifold)
        record("reference-homology", rep["match"],
               computed=rep["computed"], reference=rep["reference"])
    except NotAComplexError as exc:
        record("boundary-squared-zero", False, error=str(exc))
    payload = artifact_header(cfg)
    payload["checks"] = checks
    payload["ok"] = all(c["ok"] for c in checks)
    print(_write_json(out / "check_report.json", payload))
    return 0 if payload["ok"] else 1


def cmd_admissible(cfg, out):
    rng = np.random.default_rng(cfg.rng_seed)
    crit = _compute_crit(cfg)
    probes = [random_smooth_loop(cfg.manifold, cfg.n, rng)
              for _ in range(int(cfg.raw.get("admissible", {})
                                 .get("probes", 512)))]
    report = admissible_radius(
        cfg.potential, cfg.level, crit,
        U_radius=cfg.raw.get("admissible", {}).get("u_radius", 0.1),
        probe_loops=probes)
    center = crit[0].loop
    from .loopspace import random_tangent_field
    bump = BumpPerturbation(
        center, random_tangent_field(center, rng), k=2)
    incl = check_sublevel_inclusions(
        cfg.potential, bump, cfg.level, probes,
        [c.action for c in crit])
    payload = artifact_header(cfg)
    payload["admissible"] = report
    payload["sublevel_inclusions"] = incl
    print(_write_json(out / "admissible.json", payload))
    return 0 if incl.get("passed", True) else 1


_COMMANDS = {
    "crit": cmd_crit,
    "flow": cmd_flow,
    "moduli": cmd_moduli,
    "homology": cmd_homology,
    "check": cmd_check,
    "admissible": cmd_admissible,
}


def make_parser():
    p = argparse.ArgumentParser(
        prog="loopflow",
        description="Heat-flow Morse complex on loop spaces of catalogue "
                    "manifolds")
    p.add_argument("command", choices=sorted(_COMMANDS))
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--threads", type=int, default=None,
                   help="parallelism degree (default: LOOPFLOW_THREADS "
                        "or all cores)")
    p.add_argument("--verbose", action="store_true")
    return p


def main(argv=None):
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    threads = args.threads
    if threads is None:
        env = os.environ.get("LOOPFLOW_THREADS")
        threads = int(env) if env else 0
    try:
        cfg = load_config(args.config,
                          overrides={"out": args.out, "threads": threads})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if cfg.threads > 0:
        os.environ["OMP_NUM_THREADS"] = str(cfg.threads)
    out = Path(cfg.out_dir)
    try:
        return _COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LoopflowError as exc:
        record = {"error": type(exc).__name__, "message": str(exc),
                  "context": getattr(exc, "context", {})}
        _write_json(out / "error.json",
                    json.loads(json.dumps(record, default=str)))
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
