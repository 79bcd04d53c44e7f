"""Run configuration: TOML schema, validation, and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import tomli

from .errors import ConfigError
from .manifold import Circle, FlatTorus, RoundSphere
from .perturbation import (
    AmbientLinear,
    AngleCosine,
    GeometricPerturbation,
    ZERO,
)

SCHEMA_VERSION = 1

DEFAULT_TOLERANCES = {
    "tol_crit": None,          # None -> 1e-9 * sqrt(N)
    "tol_conv": 1e-8,
    "tol_nondeg": 1e-6,
    "dedup_radius": None,      # None -> 1e-4 * injectivity radius
    "capture_radius": None,    # None -> 0.05 * injectivity radius
    "rank_tol": 1e-6,
}


@dataclass
class RunConfig:
    manifold: object
    potential: object            # Perturbation acting as the background V
    level: float
    n: int
    h_s: float
    s_max: float
    tolerances: dict
    seeds: dict
    reference_betti: list | None
    out_dir: str
    rng_seed: int
    threads: int
    raw: dict = field(default_factory=dict, repr=False)
    config_hash: str = ""

    def tol_crit(self):
        v = self.tolerances["tol_crit"]
        return 1e-9 * np.sqrt(self.n) if v is None else v

    def dedup_radius(self):
        v = self.tolerances["dedup_radius"]
        return 1e-4 * self.manifold.injectivity_radius if v is None else v

    def capture_radius(self):
        v = self.tolerances["capture_radius"]
        return 0.05 * self.manifold.injectivity_radius if v is None else v


def _build_manifold(tbl):
    family = tbl.get("family")
    if family == "circle":
        c = float(tbl.get("circumference", 1.0))
        return Circle(c / (2 * np.pi))
    if family == "flat_torus":
        return FlatTorus(int(tbl.get("m", 2)),
                         float(tbl.get("circumference", 1.0)))
    if family == "round_sphere":
        return RoundSphere(int(tbl.get("dim", 2)),
                           float(tbl.get("radius", 1.0)))
    raise ConfigError(f"unknown manifold family: {family!r}")


def _build_potential(tbl, manifold):
    kind = tbl.get("kind", "zero")
    if kind == "zero":
        return ZERO
    if kind == "angle_cosine":
        return GeometricPerturbation(AngleCosine(
            manifold,
            tbl["amplitudes"],
            tbl.get("frequencies"),
            tbl.get("phases")))
    if kind == "ambient_linear":
        return GeometricPerturbation(
            AmbientLinear(manifold, tbl["direction"]))
    raise ConfigError(f"unknown potential kind: {kind!r}")


def load_config(path, overrides=None):
    """Parse and validate a TOML run configuration.

    overrides (out/threads from the command line) affect where and how
    the run executes but not its mathematical content, so they are
    excluded from the recorded configuration hash: the same scientific
    run always carries the same digest.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse as TOML: {exc}")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema must be {SCHEMA_VERSION}, got "
            f"{raw.get('schema')!r}")
    for key, val in (overrides or {}).items():
        if val is not None:
            raw[key] = val

    try:
        manifold = _build_manifold(raw.get("manifold", {}))
        potential = _build_potential(raw.get("potential", {}), manifold)
        run = raw.get("run", {})
        n = int(run.get("n", 64))
        level = float(run.get("level", 1.0))
        h_s = float(run.get("h_s", 1e-3))
        s_max = float(run.get("s_max", 40.0))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}")

    if n < 16 or n & (n - 1):
        raise ConfigError(f"n must be a power of two >= 16, got {n}")
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in raw.get("tolerances", {}).items():
        if k not in tol:
            raise ConfigError(f"unknown tolerance key: {k!r}")
        tol[k] = float(v)
    for k, v in tol.items():
        if v is not None and v <= 0:
            raise ConfigError(f"tolerance {k} must be positive, got {v}")
    if h_s <= 0 or s_max <= 0:
        raise ConfigError("h_s and s_max must be positive")

    seeds = {"angle_grid": 8, "winding_bound": 0}
    seeds.update(raw.get("seeds", {}))
    ref = raw.get("reference", {}).get("betti")

    cfg = RunConfig(
        manifold=manifold,
        potential=potential,
        level=level,
        n=n,
        h_s=h_s,
        s_max=s_max,
        tolerances=tol,
        seeds=seeds,
        reference_betti=list(ref) if ref is not None else None,
        out_dir=str(raw.get("out", "out")),
        rng_seed=int(raw.get("rng_seed", 0)),
        threads=int(raw.get("threads", 0)),
        raw=raw,
    )
    hashed = {k: v for k, v in raw.items() if k not in ("out", "threads")}
    cfg.config_hash = hashlib.sha256(
        json.dumps(hashed, sort_keys=True, default=str).encode()).hexdigest()
    return cfg


def artifact_header(cfg):
    """Common provenance block embedded in every output file."""
    return {
        "schema": SCHEMA_VERSION,
        "config_sha256": cfg.config_hash,
        "rng_seed": cfg.rng_seed,
        "n": cfg.n,
        "h_s": cfg.h_s,
        "level": cfg.level,
        "manifold": [cfg.manifold.spec.kind,
                     cfg.manifold.spec.intrinsic_dim,
                     cfg.manifold.spec.scale],
        "tolerances": {
            "tol_crit": cfg.tol_crit(),
            "tol_conv": cfg.tolerances["tol_conv"],
            "tol_nondeg": cfg.tolerances["tol_nondeg"],
            "dedup_radius": cfg.dedup_radius(),
            "capture_radius": cfg.capture_radius(),
            "rank_tol": cfg.tolerances["rank_tol"],
        },
    }
