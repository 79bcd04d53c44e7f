"""Shared gallery fixtures.

The circle and torus pendulum galleries are computed once per session
and reused by the unit and acceptance tests; each fixture records its
own wall-clock time so the runtime acceptance criteria measure the
actual pipeline cost, not repeated recomputation.
"""

import time

import numpy as np
import pytest

from loopflow import (
    AngleCosine,
    Circle,
    FlatTorus,
    FlowControls,
    GeometricPerturbation,
    RoundSphere,
    build_chart,
    compute_sign,
    enumerate_below,
    enumerate_connecting,
)

EPS = 0.1
LEVEL = 1.0
N = 64


def pendulum(manifold, m):
    """V = eps * sum_i cos(2 pi q_i), wells at q = 0."""
    return GeometricPerturbation(AngleCosine(
        manifold, [EPS] * m, [1] * m, [np.pi] * m))


@pytest.fixture(scope="session")
def circle_manifold():
    return Circle(1.0 / (2 * np.pi))


@pytest.fixture(scope="session")
def circle_potential(circle_manifold):
    return pendulum(circle_manifold, 1)


@pytest.fixture(scope="session")
def torus_manifold():
    return FlatTorus(2)


@pytest.fixture(scope="session")
def torus_potential(torus_manifold):
    return pendulum(torus_manifold, 2)


@pytest.fixture(scope="session")
def sphere_manifold():
    return RoundSphere(2, 1.0)


def gallery_controls(manifold, h_s=1e-3):
    return FlowControls(
        h_s=h_s, s_max=40.0, tol_conv=1e-8,
        capture_radius=0.05 * manifold.injectivity_radius,
        store_stride=20,
        sweep_h_s=0.99 * 0.25 / N, sweep_stride=8)


@pytest.fixture(scope="session")
def circle_gallery(circle_manifold, circle_potential):
    t0 = time.perf_counter()
    crit = enumerate_below(circle_potential, LEVEL, circle_manifold, N)
    src = [c for c in crit if c.morse_index == 1][0]
    tgt = [c for c in crit if c.morse_index == 0][0]
    chart = build_chart(src, V=circle_potential)
    controls = gallery_controls(circle_manifold)
    orbits = enumerate_connecting(src, tgt, chart, circle_potential,
                                  controls, crit)
    for o in orbits:
        o.sign = compute_sign(o, circle_potential)
    elapsed = time.perf_counter() - t0
    return {"manifold": circle_manifold, "V": circle_potential,
            "crit": crit, "chart": chart, "orbits": orbits,
            "controls": controls, "elapsed": elapsed}


@pytest.fixture(scope="session")
def torus_gallery(torus_manifold, torus_potential):
    t0 = time.perf_counter()
    crit = enumerate_below(torus_potential, LEVEL, torus_manifold, N)
    controls = gallery_controls(torus_manifold)
    orbits = []
    charts = {}
    for src in crit:
        if src.morse_index < 1:
            continue
        chart = build_chart(src, V=torus_potential)
        charts[id(src)] = chart
        cache = {}
        for tgt in crit:
            if src.morse_index - tgt.morse_index != 1:
                continue
            found = enumerate_connecting(
                src, tgt, chart, torus_potential, controls, crit,
                sweep_cache=cache)
            for o in found:
                o.sign = compute_sign(o, torus_potential)
            orbits.extend(found)
    elapsed = time.perf_counter() - t0
    return {"manifold": torus_manifold, "V": torus_potential,
            "crit": crit, "charts": charts, "orbits": orbits,
            "controls": controls, "elapsed": elapsed}
