"""Acceptance suite: every primary criterion with its stated tolerance.

Each test prints one PASS line with the measured quantity; the assertion
uses exactly the tolerance stated in the criterion.
"""

import numpy as np
import pytest

from loopflow import (
    AmbientLinear,
    BumpPerturbation,
    DiscreteLoop,
    GeometricPerturbation,
    OperatorFamily,
    action,
    apply_Du,
    build_chart,
    compute_sign,
    cylinder_inner,
    enumerate_below,
    enumerate_connecting,
    heat_residual,
    integrate,
    loop_distance,
    random_smooth_loop,
    spectral_flow,
    stationary_kernel_basis,
    stationary_trajectory,
)
from loopflow.complex import assemble, check_d_squared, homology, \
    orientation_invariance
from loopflow.heatflow import CylinderTrajectory, decay_fit
from loopflow.loopspace import constant_loop, random_tangent_field, LoopField
from loopflow.moduli import FlowControls, _residual_pnorm, ev0_injectivity, \
    refine_trajectory, scheme_residual, unstable_rank
from loopflow.perturbation import SumPerturbation, check_sublevel_inclusions
from conftest import EPS, LEVEL, N, gallery_controls

RNG = np.random.default_rng(2026)


def _report(num, name, ok, detail):
    print(f"ACCEPTANCE-{num:02d} {name}: {'PASS' if ok else 'FAIL'} "
          f"({detail})")
    assert ok, f"criterion {num}: {detail}"


# -- criterion 1: circle pendulum gallery -------------------------------------


def test_criterion_01_circle_gallery(circle_gallery):
    crit = circle_gallery["crit"]
    orbits = circle_gallery["orbits"]
    actions = sorted(c.action for c in crit)
    indices = sorted(c.morse_index for c in crit)
    cx = assemble(crit, orbits)
    betti = homology(cx).betti
    ok = (
        len(crit) == 2
        and np.allclose(actions, [-EPS, EPS], atol=1e-6)
        and indices == [0, 1]
        and len(orbits) == 2
        and sorted(o.sign for o in orbits) == [-1, 1]
        and cx.boundary_array(1).tolist() == [[0]]
        and betti == [1, 1]
        and circle_gallery["elapsed"] <= 60.0
    )
    _report(1, "circle-pendulum-gallery", ok,
            f"actions={actions}, indices={indices}, "
            f"n_orbits={len(orbits)}, boundary={cx.boundary_array(1).tolist()}, "
            f"betti={betti}, runtime={circle_gallery['elapsed']:.1f}s")


# -- criterion 2: flat 2-torus gallery ----------------------------------------


def test_criterion_02_torus_gallery(torus_gallery):
    crit = torus_gallery["crit"]
    orbits = torus_gallery["orbits"]
    indices = sorted(c.morse_index for c in crit)
    cx = assemble(crit, orbits)
    dsq = check_d_squared(cx, raise_on_failure=False)
    betti = homology(cx).betti
    ok = (
        len(crit) == 4
        and indices == [0, 1, 1, 2]
        and dsq["ok"] and dsq["max_entry"] == 0
        and betti == [1, 2, 1]
        and torus_gallery["elapsed"] <= 600.0
    )
    _report(2, "torus-pendulum-gallery", ok,
            f"indices={indices}, d_squared_max={dsq['max_entry']}, "
            f"betti={betti}, runtime={torus_gallery['elapsed']:.1f}s")


# -- criterion 3: energy identity ---------------------------------------------


def test_criterion_03_energy_identity(circle_gallery, torus_gallery):
    worst = 0.0
    count = 0
    for gallery in (circle_gallery, torus_gallery):
        for o in gallery["orbits"]:
            drop = o.action_drop
            defect = abs(o.energy - drop) / max(1.0, abs(drop))
            worst = max(worst, defect)
            count += 1
    ok = worst <= 1e-3 and count == 10
    _report(3, "energy-identity", ok,
            f"{count} orbits, max rel defect {worst:.2e} <= 1e-3")


# -- criterion 4: spectral flow -----------------------------------------------


def test_criterion_04_spectral_flow(circle_gallery, torus_gallery):
    flows, crossings = [], []
    for gallery in (circle_gallery, torus_gallery):
        for o in gallery["orbits"]:
            fam = OperatorFamily.from_trajectory(
                o.trajectory, gallery["V"], max_slices=40)
            res = spectral_flow(fam)
            flows.append(res.flow)
            crossings.append(len(res.crossings))
    ok = all(f == 1 for f in flows) and all(c == 1 for c in crossings)
    _report(4, "fredholm-spectral-flow", ok,
            f"flows={flows}, crossings={crossings}")


# -- criterion 5: exponential decay at N = 128 --------------------------------


@pytest.fixture(scope="module")
def circle128(circle_manifold, circle_potential):
    crit = enumerate_below(circle_potential, LEVEL, circle_manifold, 128)
    src = [c for c in crit if c.morse_index == 1][0]
    tgt = [c for c in crit if c.morse_index == 0][0]
    chart = build_chart(src, V=circle_potential)
    controls = FlowControls(
        h_s=1e-3, s_max=40.0, tol_conv=1e-8,
        capture_radius=0.05 * circle_manifold.injectivity_radius,
        store_stride=20, sweep_h_s=0.99 * 0.25 / 128, sweep_stride=8)
    orbits = enumerate_connecting(src, tgt, chart, circle_potential,
                                  controls, crit)
    return {"crit": crit, "src": src, "tgt": tgt, "orbits": orbits}


def test_criterion_05_exponential_decay(circle128):
    src, tgt = circle128["src"], circle128["tgt"]
    gap_src = float(np.min(np.abs(src.eigenvalues)))
    gap_tgt = float(np.min(np.abs(tgt.eigenvalues)))
    details = []
    ok = len(circle128["orbits"]) == 2
    for o in circle128["orbits"]:
        fwd = decay_fit(o.trajectory, "forward", reference_gap=gap_tgt)
        bwd = decay_fit(o.trajectory, "backward", reference_gap=gap_src)
        details.append((fwd.rho, bwd.rho, fwd.r_squared, bwd.r_squared))
        ok = ok and abs(fwd.rho - gap_tgt) <= 0.15 * gap_tgt
        ok = ok and abs(bwd.rho - gap_src) <= 0.15 * gap_src
        ok = ok and fwd.r_squared >= 0.99 and bwd.r_squared >= 0.99
    _report(5, "exponential-decay-N128", ok,
            f"gaps=({gap_src:.3f},{gap_tgt:.3f}), fits="
            + "; ".join(f"fwd {a:.3f} bwd {b:.3f} r2 {c:.4f}/{d:.4f}"
                        for a, b, c, d in details))


# -- criterion 6: stationary kernel convergence order -------------------------


def test_criterion_06_stationary_kernel(circle_gallery):
    x = max(circle_gallery["crit"], key=lambda c: c.morse_index)
    V = circle_gallery["V"]
    norms = []
    steps = [4e-3, 2e-3, 1e-3]
    for h_s in steps:
        traj = stationary_trajectory(x, (0.0, 0.2), h_s)
        _, fields = stationary_kernel_basis(x, (0.0, 0.2),
                                            n_slices=len(traj.s))
        xi = fields[0]
        r = apply_Du(traj, V, xi)
        norms.append(np.sqrt(cylinder_inner(traj, r, r))
                     / np.sqrt(cylinder_inner(traj, xi, xi)))
    orders = np.log2(np.array(norms[:-1]) / np.array(norms[1:]))
    ok = bool(np.all(orders >= 0.9))
    _report(6, "stationary-kernel-order", ok,
            f"norms={[f'{v:.2e}' for v in norms]}, "
            f"orders={[f'{v:.2f}' for v in orders]} >= 0.9")


# -- criterion 7: refined-IFT scaling ------------------------------------------


@pytest.fixture(scope="module")
def scheme_window(circle_gallery):
    """Stride-1 stored scheme orbit segment from the circle gallery."""
    V = circle_gallery["V"]
    chart = circle_gallery["chart"]
    h = 0.99 * 0.25 / N
    traj = integrate(chart.seed(np.array([1.0])), V, h, 20.0,
                     tol_conv=1e-5, store_stride=1)
    i0 = traj.n_slices // 3
    i1 = min(traj.n_slices, i0 + 320)
    s = traj.s[i0:i1]
    mask = (traj.monitors["s"] >= s[0] - 1e-12) \
        & (traj.monitors["s"] <= s[-1] + 1e-12)
    window = CylinderTrajectory(
        manifold=traj.manifold, s=s, loops=traj.loops[i0:i1], h_s=h,
        monitors={k: v[mask] for k, v in traj.monitors.items()},
        status="window")
    return window, V


def _perturb_window(window, eps):
    mfd = window.manifold
    K = window.n_slices
    n = window.loops[0].n_samples
    t = np.arange(n) / n
    shape = np.stack([np.sin(2 * np.pi * t), np.cos(4 * np.pi * t)],
                     -1)[:, :window.loops[0].points.shape[-1]]
    loops = []
    for k, u in enumerate(window.loops):
        xi = eps * np.sin(np.pi * k / (K - 1)) * mfd.project_tangent(
            u.points, shape)
        loops.append(DiscreteLoop(mfd, mfd.exp(u.points, xi)))
    return CylinderTrajectory(
        manifold=mfd, s=window.s, loops=loops, h_s=window.h_s,
        monitors=dict(window.monitors), status=window.status)


def test_criterion_07_refined_ift_scaling(scheme_window):
    window, V = scheme_window
    n = window.loops[0].n_samples
    h = window.h_s
    delta0 = 0.5
    base = np.abs(scheme_residual(window, V)).max()
    assert base < 1e-12, f"window is not a scheme orbit: {base:.2e}"
    eps0 = 1e-3
    pn0 = _residual_pnorm(scheme_residual(_perturb_window(window, eps0), V),
                          n, h, 4)
    ratios, contractions, residuals = [], [], []
    for target in (1e-2 * delta0, 5e-3 * delta0, 2.5e-3 * delta0):
        eps = eps0 * target / pn0
        work = _perturb_window(window, eps)
        res0 = _residual_pnorm(scheme_residual(work, V), n, h, 4)
        refined, corr = refine_trajectory(work, V, tol=1e-14, max_steps=1)
        res1 = _residual_pnorm(scheme_residual(refined, V), n, h, 4)
        residuals.append(res0)
        ratios.append(corr / res0)
        contractions.append(res1 / res0)
    mean = float(np.mean(ratios))
    ok = all(abs(r - mean) <= 0.3 * mean for r in ratios) \
        and all(c <= 0.2 for c in contractions)
    _report(7, "refined-ift-scaling", ok,
            f"residuals={[f'{v:.2e}' for v in residuals]}, "
            f"corr/res={[f'{v:.3f}' for v in ratios]} within 30% of "
            f"{mean:.3f}, contractions={[f'{v:.2e}' for v in contractions]}"
            " <= 0.2")


# -- criterion 8: unstable manifold dimension ----------------------------------


def test_criterion_08_unstable_rank(circle_gallery, torus_gallery):
    pairs = []
    chart = circle_gallery["chart"]
    pairs.append((chart.base.morse_index,
                  unstable_rank(chart, circle_gallery["V"], 1.0, 1e-3)))
    for c in torus_gallery["crit"]:
        if c.morse_index < 1:
            continue
        ch = torus_gallery["charts"][id(c)]
        pairs.append((c.morse_index,
                      unstable_rank(ch, torus_gallery["V"], 1.0, 1e-3)))
    ok = all(idx == rank for idx, rank in pairs)
    _report(8, "unstable-manifold-dimension", ok,
            f"(index, rank) pairs = {pairs}")


# -- criterion 9: orientation invariance + sign antisymmetry -------------------


def test_criterion_09_orientation_invariance(circle_gallery, torus_gallery):
    inv = orientation_invariance(torus_gallery["crit"],
                                 torus_gallery["orbits"], RNG, trials=8)
    orbit = circle_gallery["orbits"][0]
    V = circle_gallery["V"]
    s0 = compute_sign(orbit, V)
    s_src = compute_sign(orbit, V, orientations={orbit.source: -1})
    s_tgt = compute_sign(orbit, V, orientations={orbit.target: -1})
    s_both = compute_sign(orbit, V, orientations={orbit.source: -1,
                                                  orbit.target: -1})
    antisym = s_src == -s0 and s_tgt == -s0 and s_both == s0
    ok = inv["invariant"] and antisym
    _report(9, "orientation-invariance", ok,
            f"8 reassignments invariant={inv['invariant']}, "
            f"signs base/src-flip/tgt-flip/both = "
            f"{s0}/{s_src}/{s_tgt}/{s_both}")


# -- criterion 10: admissibility -----------------------------------------------


def test_criterion_10_admissibility(circle_gallery):
    mfd = circle_gallery["manifold"]
    V = circle_gallery["V"]
    crit = circle_gallery["crit"]
    values = [c.action for c in crit]
    rng = np.random.default_rng(5)

    # bump supported in an L^2 ball of radius 2/k = 0.125 around the
    # constant loop at quarter turn: distance ~0.225 from both critical
    # loops, comfortably outside the U-neighborhood of radius 0.1
    center = constant_loop(mfd, mfd.point_of_angle(0.5 * np.pi), N)
    direction = random_tangent_field(center, rng, amplitude=1e-3)
    bump = BumpPerturbation(center, direction, k=16)
    assert all(bump.eval(c.loop) == 0.0 for c in crit)

    base = enumerate_below(V, LEVEL, mfd, N)
    pert = enumerate_below(SumPerturbation(V, bump), LEVEL, mfd, N)
    bijection = len(base) == len(pert)
    if bijection:
        for c in base:
            d, best = min(
                (loop_distance(c.loop, c2.loop, "C0"), c2) for c2 in pert)
            bijection = bijection and d <= 1e-6 \
                and best.morse_index == c.morse_index \
                and abs(best.action - c.action) <= 1e-8

    probes = [random_smooth_loop(mfd, N, rng) for _ in range(512)]
    incl = check_sublevel_inclusions(V, bump, LEVEL, probes, values)

    # negative control: a bump of size 2 delta evaluated on a probe in the
    # low sublevel must break the first inclusion rule
    well = [c for c in crit if c.morse_index == 0][0].loop
    xi = random_tangent_field(well, rng, amplitude=0.01).vectors
    probe = DiscreteLoop(mfd, mfd.exp(well.points, xi))
    assert action(probe, V) <= incl["levels"]["c_low"]
    raw = BumpPerturbation(well, LoopField(well, xi), k=2)
    scale = -2.0 * incl["delta"] / raw.eval(probe)
    big = BumpPerturbation(well, LoopField(well, scale * xi), k=2)
    neg = check_sublevel_inclusions(V, big, LEVEL, [probe], values)

    ok = bijection and incl["passed"] and incl["checked"] == 512 \
        and len(neg["failures"]) >= 1
    _report(10, "admissibility", ok,
            f"bijection={bijection}, probes={incl['checked']} "
            f"failures={len(incl['failures'])}, negative control "
            f"failures={len(neg['failures'])} >= 1")


# -- criterion 11: ev0 separation -----------------------------------------------


def test_criterion_11_ev0_separation(circle_gallery):
    rep = ev0_injectivity(circle_gallery["orbits"])
    iota = circle_gallery["manifold"].injectivity_radius
    ok = rep["min_separation"] > 0.1 * iota
    _report(11, "ev0-separation", ok,
            f"min C0 separation {rep['min_separation']:.3f} > "
            f"{0.1 * iota:.3f}")


# -- criterion 12: gradient consistency -----------------------------------------


def test_criterion_12_gradient_consistency(
        circle_manifold, circle_potential, torus_manifold, torus_potential,
        sphere_manifold):
    sphere_potential = GeometricPerturbation(
        AmbientLinear(sphere_manifold, [0.0, 0.0, 0.3]))
    rng = np.random.default_rng(9)
    worst = 0.0
    for mfd, V in ((circle_manifold, circle_potential),
                   (torus_manifold, torus_potential),
                   (sphere_manifold, sphere_potential)):
        for _ in range(50):
            x = random_smooth_loop(mfd, N, rng, amplitude=0.2)
            xi = random_tangent_field(x, rng)
            inner = np.sum(heat_residual(x, V).vectors * xi.vectors) / N
            tau = 1e-6
            fd = (action(x.exp(tau * xi.vectors), V)
                  - action(x.exp(-tau * xi.vectors), V)) / (2 * tau)
            worst = max(worst, abs(inner + fd) / max(1.0, abs(fd)))
    ok = worst <= 1e-4
    _report(12, "gradient-consistency", ok,
            f"150 pairs, max rel error {worst:.2e} <= 1e-4")
