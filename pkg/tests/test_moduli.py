"""Moduli machinery: charts, step Jacobian, Newton refinement, signs."""

import numpy as np
import pytest

from loopflow import (
    DiscreteLoop,
    build_chart,
    stationary_trajectory,
    step,
)
from loopflow.errors import IndexZeroChartError, ResidualTooLargeError, \
    StalledError
from loopflow.heatflow import CylinderTrajectory, _imex_symbol
from loopflow.loopspace import action
from loopflow.moduli import (
    _apply_dstep,
    _block_thomas,
    ev0_injectivity,
    normalize_shift,
    refine_trajectory,
    scheme_residual,
    unstable_rank,
)

RNG = np.random.default_rng(23)


def _min_point(crit):
    return [c for c in crit if c.morse_index == 0][0]


def test_chart_rejects_index_zero(circle_gallery):
    # [TRIVIAL] a local minimum has no unstable directions to chart
    with pytest.raises(IndexZeroChartError):
        build_chart(_min_point(circle_gallery["crit"]),
                    V=circle_gallery["V"])


def test_chart_seed_drops_action(circle_gallery):
    # [PAPER] seeds along unstable directions start strictly below the
    # critical action
    chart = circle_gallery["chart"]
    V = circle_gallery["V"]
    for c in (np.array([1.0]), np.array([-1.0])):
        seed = chart.seed(c)
        assert action(seed, V) < chart.base.action


def test_step_jacobian_matches_finite_differences(circle_gallery):
    # [DERIVED] the hand-assembled Jacobian of one IMEX step agrees with
    # central finite differences of the step map through the projection
    orbit = circle_gallery["orbits"][0]
    u = orbit.trajectory.loops[2]
    V = circle_gallery["V"]
    mfd = u.manifold
    h = 1e-3
    sym = _imex_symbol(u.n_samples, h)
    zeta = mfd.project_tangent(u.points,
                               RNG.standard_normal(u.points.shape))
    exact = _apply_dstep(u, V, h, sym, zeta)
    eps = 1e-6
    plus = step(DiscreteLoop(mfd, mfd.project(u.points + eps * zeta)),
                V, h).points
    minus = step(DiscreteLoop(mfd, mfd.project(u.points - eps * zeta)),
                 V, h).points
    fd = (plus - minus) / (2 * eps)
    assert np.abs(exact - fd).max() < 1e-5 * max(1.0, np.abs(exact).max())


def _perturbed_stationary(x, V, h_s=3e-3, n_slices=30, amp=1e-4):
    traj = stationary_trajectory(x, (0.0, h_s * (n_slices - 1)), h_s)
    mfd = traj.manifold
    K = traj.n_slices
    t = np.arange(traj.loops[0].n_samples) / traj.loops[0].n_samples
    shape = np.sin(2 * np.pi * t)[:, None] * np.ones(
        traj.loops[0].points.shape[-1])
    loops = []
    for k, u in enumerate(traj.loops):
        xi = amp * np.sin(2 * np.pi * k / K) * mfd.project_tangent(
            u.points, shape)
        loops.append(DiscreteLoop(mfd, mfd.exp(u.points, xi)))
    return CylinderTrajectory(
        manifold=mfd, s=traj.s, loops=loops, h_s=h_s,
        monitors=dict(traj.monitors), status=traj.status)


def test_refine_contracts_to_scheme_orbit(circle_gallery):
    # [DERIVED] Newton refinement drives the scheme residual of a
    # perturbed stationary cylinder below tolerance with a bounded
    # correction norm
    x = _min_point(circle_gallery["crit"])
    V = circle_gallery["V"]
    work = _perturbed_stationary(x, V)
    res0 = np.abs(scheme_residual(work, V)).max()
    assert res0 > 1e-4
    refined, corr = refine_trajectory(work, V, tol=1e-10)
    res1 = np.abs(scheme_residual(refined, V)).max()
    assert res1 < 1e-9
    assert 0 < corr < 1.0


def test_refine_rejects_large_residual(circle_gallery):
    # [TRIVIAL] refinement refuses to start outside its trust region
    x = _min_point(circle_gallery["crit"])
    V = circle_gallery["V"]
    work = _perturbed_stationary(x, V)
    with pytest.raises(ResidualTooLargeError):
        refine_trajectory(work, V, delta0=1e-12)


def test_refine_reports_stall(circle_gallery):
    # [TRIVIAL] an impossible contraction requirement raises
    x = _min_point(circle_gallery["crit"])
    V = circle_gallery["V"]
    work = _perturbed_stationary(x, V)
    with pytest.raises(StalledError):
        refine_trajectory(work, V, tol=0.0, contraction_limit=1e-15)


def test_block_thomas_matches_dense_solve():
    # [DERIVED] the block-tridiagonal Cholesky sweep reproduces the dense
    # solution of the assembled symmetric positive definite system
    K, m = 6, 5
    diag, up = [], []
    for k in range(K):
        A = RNG.standard_normal((m, m))
        diag.append(A @ A.T + 5.0 * m * np.eye(m))
        if k + 1 < K:
            up.append(RNG.standard_normal((m, m)))
    rhs = RNG.standard_normal((K, m))
    y = _block_thomas(diag, up, rhs)
    dense = np.zeros((K * m, K * m))
    for k in range(K):
        dense[k * m:(k + 1) * m, k * m:(k + 1) * m] = diag[k]
        if k + 1 < K:
            dense[k * m:(k + 1) * m, (k + 1) * m:(k + 2) * m] = up[k]
            dense[(k + 1) * m:(k + 2) * m, k * m:(k + 1) * m] = up[k].T
    ref = np.linalg.solve(dense, rhs.reshape(-1)).reshape(K, m)
    assert np.allclose(y, ref, rtol=1e-9, atol=1e-11)


def test_normalize_shift_idempotent(circle_gallery):
    # [PAPER] the action-crossing renormalization is idempotent on
    # already-normalized orbits
    orbit = circle_gallery["orbits"][0]
    c_star = 0.5 * (orbit.source.action + orbit.target.action)
    again, shift = normalize_shift(orbit.trajectory, c_star)
    assert shift == 0.0
    assert np.allclose(again.s, orbit.trajectory.s)
    assert np.array_equal(again.loops[0].points,
                          orbit.trajectory.loops[0].points)


def test_circle_orbit_signs_cancel(circle_gallery):
    # [PAPER] the two heat-flow lines from the pendulum maximum to the
    # minimum carry opposite signs, so the boundary map squares to zero
    signs = sorted(o.sign for o in circle_gallery["orbits"])
    assert signs == [-1, 1]


def test_ev0_injectivity_report(circle_gallery):
    # [PAPER] distinct orbits stay separated at the renormalized time-0
    # slice; the report carries the pair count and no violations
    rep = ev0_injectivity(circle_gallery["orbits"])
    assert rep["pairs"] == 1
    assert rep["violations"] == []
    iota = circle_gallery["manifold"].injectivity_radius
    assert rep["min_separation"] > 0.1 * iota


def test_unstable_rank_matches_index(circle_gallery, torus_gallery):
    # [PAPER] the endpoint map of the unstable chart has numerical rank
    # equal to the Morse index
    chart = circle_gallery["chart"]
    assert unstable_rank(chart, circle_gallery["V"], 1.0, 1e-3) == 1
    crit = torus_gallery["crit"]
    top = max(crit, key=lambda c: c.morse_index)
    chart2 = torus_gallery["charts"][id(top)]
    assert unstable_rank(chart2, torus_gallery["V"], 1.0, 1e-3) == 2
