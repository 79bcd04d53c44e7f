"""Connecting-orbit moduli: unstable-manifold charts, shooting and
sphere sweeps, shift normalization, characteristic signs, Newton
refinement of approximate trajectories, and diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .critical import assemble_hessian, field_to_frame, frame_to_field, \
    loop_frame
from .errors import (
    FrameCollapseError,
    IndexZeroChartError,
    NonTransverseError,
    ResidualTooLargeError,
    StalledError,
)
from .heatflow import CylinderTrajectory, detect_limit, energy, integrate, \
    step
from .loopspace import DiscreteLoop, LoopField, action, loop_distance


# -- unstable charts -----------------------------------------------------------


@dataclass
class UnstableChart:
    base: object                  # CriticalPoint
    directions: list              # unit-L^2 LoopFields spanning E^-
    eps_seed: float

    @property
    def index(self):
        return len(self.directions)

    def seed(self, c):
        c = np.atleast_1d(np.asarray(c, float))
        xi = sum(ck * d.vectors for ck, d in zip(c, self.directions))
        return self.base.loop.exp(self.eps_seed * xi)


def build_chart(x, eps_seed=None, V=None, action_gap=None):
    """Shooting chart from the negative eigenspace of a critical point.

    Seeds are exp_x(eps_seed * sum c_k v_k) for unit c.  When V is given
    the seed actions are validated: strictly below S(x), and above
    S(x) - action_gap/4 when a gap is supplied.
    """
    if x.morse_index == 0:
        raise IndexZeroChartError("index-zero chart is a single point")
    mfd = x.loop.manifold
    if eps_seed is None:
        eps_seed = 1e-3 * mfd.injectivity_radius
    n = x.loop.n_samples
    dirs = []
    for i in range(x.morse_index):
        f = x.eigenfield(i)
        dirs.append(LoopField(x.loop, f.vectors / f.l2()))
    chart = UnstableChart(base=x, directions=dirs, eps_seed=eps_seed)
    if V is not None:
        for i in range(len(dirs)):
            for s in (1.0, -1.0):
                c = np.zeros(len(dirs))
                c[i] = s
                a_seed = action(chart.seed(c), V)
                if not a_seed < x.action:
                    raise ValueError(
                        f"seed action {a_seed} not below {x.action}; "
                        "eps_seed too small or point degenerate")
                if action_gap is not None \
                        and a_seed <= x.action - action_gap / 4:
                    raise ValueError(
                        "eps_seed too large: seed action fell by more "
                        f"than {action_gap / 4}")
    return chart


@dataclass
class FlowControls:
    h_s: float = 1e-3
    s_max: float = 20.0
    tol_conv: float = 1e-8
    capture_radius: float = 0.01
    store_stride: int = 1
    sweep_angles: int = 256
    bisect_width: float = 1e-6
    sweep_horizon: float = 6.0
    sweep_tol: float = 1e-6
    sweep_h_s: float = None
    sweep_stride: int = 4

    def __post_init__(self):
        if self.sweep_h_s is None:
            self.sweep_h_s = self.h_s


def shoot(chart, c, V, controls, crit_list):
    """Integrate from a chart seed and classify the limit."""
    c = np.atleast_1d(np.asarray(c, float))
    if abs(np.linalg.norm(c) - 1.0) > 1e-12:
        raise ValueError("shoot direction must be a unit vector")
    traj = integrate(chart.seed(c), V, controls.h_s, controls.s_max,
                     tol_conv=controls.tol_conv,
                     store_stride=controls.store_stride)
    limit = None
    if traj.converged:
        limit = detect_limit(traj, crit_list, controls.capture_radius)
    status = traj.status if limit is not None else "budget-exhausted" \
        if not traj.converged else "unrecognized-limit"
    return status, {"trajectory": traj, "limit": limit, "direction": c}


# -- connecting orbits ----------------------------------------------------------


@dataclass(eq=False)
class ConnectingOrbit:
    trajectory: CylinderTrajectory
    source: object
    target: object
    shoot_direction: np.ndarray
    normalized_at: float          # the original s of the c_* action slice
    sign: int = 0
    truncated: bool = False

    @property
    def action_drop(self):
        return self.source.action - self.target.action

    @property
    def energy(self):
        return energy(self.trajectory)

    @property
    def time0_loop(self):
        return self.trajectory.slice_at(0.0)

    def to_json(self, extra=None):
        rec = {
            "source_action": self.source.action,
            "target_action": self.target.action,
            "source_index": self.source.morse_index,
            "target_index": self.target.morse_index,
            "sign": int(self.sign),
            "energy": self.energy,
            "action_drop": self.action_drop,
            "shoot_direction": [float(v) for v in self.shoot_direction],
            "normalized_at": self.normalized_at,
            "truncated": self.truncated,
        }
        if extra:
            rec.update(extra)
        return rec


def normalize_shift(traj, c_star):
    """Shift s so the slice whose action crosses c_star sits at s = 0.

    The crossing s is interpolated on the monitor grid; idempotent once
    applied (a second normalization shifts by the same rounded slice
    offset, which is then zero).
    """
    mon_s = traj.monitors["s"]
    act = traj.monitors["action"]
    below = np.nonzero(act <= c_star)[0]
    if len(below) == 0 or below[0] == 0:
        return traj.shifted(0.0), 0.0
    i = below[0]
    frac = (act[i - 1] - c_star) / (act[i - 1] - act[i])
    s_star = mon_s[i - 1] + frac * (mon_s[i] - mon_s[i - 1])
    # snap to the stored-slice grid so slice_at(0) is the crossing slice
    s_star = traj.s[int(np.argmin(np.abs(traj.s - s_star)))]
    return traj.shifted(s_star), float(s_star)


def _truncate(traj, k_stop):
    mon_mask = traj.monitors["s"] <= traj.s[k_stop] + 1e-15
    return CylinderTrajectory(
        manifold=traj.manifold,
        s=traj.s[:k_stop + 1].copy(),
        loops=traj.loops[:k_stop + 1],
        h_s=traj.h_s,
        monitors={k: v[mon_mask] for k, v in traj.monitors.items()},
        status="truncated-at-capture",
    )


def _closest_approach(traj, target):
    d = np.array([loop_distance(u, target.loop, "C0") for u in traj.loops])
    k = int(np.argmin(d))
    return k, float(d[k])


def _route_sign(traj, target, k_closest):
    """Side on which the trajectory passes the target saddle: the sign of
    the component of the offset along the target's unstable direction."""
    u = traj.loops[k_closest]
    e = target.eigenfield(0).vectors
    off = u.points - target.loop.points
    val = float(np.mean(np.sum(off * e, axis=-1)))
    return 1 if val >= 0 else -1


def _sweep_classify(chart, theta, V, controls, crit_list, target,
                    cache=None):
    key = round(theta, 12)
    traj = cache.get(key) if cache is not None else None
    if traj is None:
        c = np.array([np.cos(theta), np.sin(theta)])
        traj = integrate(chart.seed(c), V, controls.sweep_h_s,
                         controls.sweep_horizon, tol_conv=controls.sweep_tol,
                         store_stride=controls.sweep_stride)
        if cache is not None:
            cache[key] = traj
    k, d = _closest_approach(traj, target)
    if d < controls.capture_radius:
        label = ("hit", 0)
    else:
        label = ("side", _route_sign(traj, target, k))
    return label, traj


def _finalize(traj, source, target, direction, controls, truncated):
    c_star = 0.5 * (source.action + target.action)
    normalized, s_star = normalize_shift(traj, c_star)
    return ConnectingOrbit(
        trajectory=normalized, source=source, target=target,
        shoot_direction=np.atleast_1d(np.asarray(direction, float)),
        normalized_at=s_star, truncated=truncated)


def enumerate_connecting(source, target, chart, V, controls, crit_list,
                         sweep_cache=None):
    """All heat-flow orbits from source to target (index difference one),
    modulo time shift, found by a deterministic sweep of the unit sphere
    in the unstable eigenspace.

    For index 1 the sphere is two points.  For index 2 the target is a
    codimension-one hit: the sweep classifies each angle by the side on
    which it passes the target, and bisects every side change down to
    bisect_width; non-shrinking intervals raise (Morse-Smale suspect).
    """
    if source.morse_index - target.morse_index != 1:
        raise ValueError("index difference must be one")
    k = source.morse_index
    orbits = []
    if k == 1:
        for c in (np.array([1.0]), np.array([-1.0])):
            status, rec = shoot(chart, c, V, controls, crit_list)
            if rec["limit"] is target:
                orbits.append(_finalize(rec["trajectory"], source, target,
                                        c, controls, truncated=False))
    elif k == 2:
        m = controls.sweep_angles
        thetas = 2 * np.pi * np.arange(m + 1) / m
        labels = []
        for th in thetas[:-1]:
            labels.append(_sweep_classify(chart, th, V, controls,
                                          crit_list, target,
                                          cache=sweep_cache)[0])
        labels.append(labels[0])
        hit_angles = []
        for i in range(m):
            la, lb = labels[i], labels[i + 1]
            if la == ("hit", 0):
                hit_angles.append(thetas[i])
                continue
            if lb == ("hit", 0) or la == lb:
                continue
            lo, hi = thetas[i], thetas[i + 1]
            llo = la
            while hi - lo > controls.bisect_width:
                mid = 0.5 * (lo + hi)
                lmid, _ = _sweep_classify(chart, mid, V, controls,
                                          crit_list, target)
                if lmid == ("hit", 0):
                    lo = hi = mid
                    break
                if lmid == llo:
                    lo = mid
                else:
                    hi = mid
            if hi - lo > controls.bisect_width:
                raise NonTransverseError(
                    "bisection interval failed to shrink",
                    interval=(lo, hi))
            hit_angles.append(0.5 * (lo + hi))
        for th in sorted(hit_angles):
            c = np.array([np.cos(th), np.sin(th)])
            traj = integrate(chart.seed(c), V, controls.h_s,
                             controls.sweep_horizon,
                             tol_conv=controls.tol_conv,
                             store_stride=controls.store_stride)
            kc, d = _closest_approach(traj, target)
            if d >= controls.capture_radius:
                raise NonTransverseError(
                    "bisected direction does not reach the target",
                    distance=d)
            orbits.append(_finalize(_truncate(traj, kc), source, target,
                                    c, controls, truncated=True))
    else:
        raise NotImplementedError(
            "sphere sweeps are implemented for index 1 and 2 only")
    # dedup by the normalized time-0 slice
    rad = 1e-4 * source.loop.manifold.injectivity_radius
    unique = []
    for orb in orbits:
        if any(loop_distance(orb.time0_loop, u.time0_loop, "C0") < rad
               for u in unique):
            continue
        unique.append(orb)
    return unique


# -- characteristic signs --------------------------------------------------------


def _transport_step(asm, h, coords):
    """e^{-h A} applied to frame-coordinate columns."""
    w, Q = asm.eig()
    return Q @ (np.exp(-h * w)[:, None] * (Q.T @ coords))


def compute_sign(orbit, V, orientations=None, n_transport=120):
    """Characteristic sign of an index-difference-one orbit.

    An oriented basis of the source's negative eigenspace is transported
    along the orbit by the linearized flow; at the forward end its
    projection onto span(ds u) + E^-(target) must be invertible, and the
    sign of that determinant (times the endpoint orientation factors) is
    the orbit's sign.
    """
    src, tgt = orbit.source, orbit.target
    traj = orbit.trajectory
    k = src.morse_index
    nu = 1
    if orientations:
        nu = orientations.get(src, 1) * orientations.get(tgt, 1)

    idx = np.unique(np.linspace(0, traj.n_slices - 1,
                                min(n_transport, traj.n_slices)).astype(int))
    loops = [traj.loops[i] for i in idx]
    svals = traj.s[idx]

    # start from the source eigenbasis expressed at the first slice
    cols = np.stack([src.eigenfield(i).vectors for i in range(k)], -1)
    u = loops[0]
    P = u.manifold.tangent_projector(u.points)
    cols = np.einsum("jab,jbi->jai", P, cols)
    F, _ = loop_frame(u)
    coords = np.einsum("jab,jai->jbi", F, cols).reshape(-1, k)
    for step_i in range(len(loops) - 1):
        u, u_next = loops[step_i], loops[step_i + 1]
        h = svals[step_i + 1] - svals[step_i]
        asm = assemble_hessian(u, V)
        coords = _transport_step(asm, h, coords)
        # push to the next slice: ambient, project, re-frame
        n = u.n_samples
        amb = np.einsum("jab,jbi->jai",
                        asm.frame, coords.reshape(n, -1, k))
        Pn = u_next.manifold.tangent_projector(u_next.points)
        amb = np.einsum("jab,jbi->jai", Pn, amb)
        Fn, _ = loop_frame(u_next)
        coords = np.einsum("jab,jai->jbi", Fn, amb).reshape(-1, k)
        # orientation-preserving re-orthonormalization
        Q, R = np.linalg.qr(coords)
        coords = Q * np.sign(np.diag(R))

    # basis at the forward end: flow direction plus E^-(target)
    u_end = loops[-1]
    F_end, _ = loop_frame(u_end)
    prev = traj.loops[-2] if traj.n_slices > 1 else traj.loops[-1]
    dsu = u_end.manifold.project_tangent(
        u_end.points, u_end.points - prev.points)
    nrm = np.linalg.norm(dsu)
    if nrm < 1e-300:
        raise FrameCollapseError("vanishing flow direction at the end")
    basis = [np.einsum("jab,ja->jb", F_end, dsu / nrm).reshape(-1)]
    Pe = u_end.manifold.tangent_projector(u_end.points)
    for i in range(tgt.morse_index):
        e = np.einsum("jab,jb->ja", Pe, tgt.eigenfield(i).vectors)
        e = e / np.sqrt(np.sum(e * e))
        basis.append(np.einsum("jab,ja->jb", F_end, e).reshape(-1))
    B = np.stack(basis, -1)  # (M, k)
    G = B.T @ coords
    det = float(np.linalg.det(G))
    if abs(det) < 1e-8:
        raise FrameCollapseError(
            f"projected frame determinant {det:.3g} below threshold")
    return int(np.sign(det)) * nu


# -- Newton refinement of approximate trajectories --------------------------------


def _apply_dstep(u, V, h_s, symbol, zeta):
    """Exact Jacobian of the IMEX step applied to tangent fields zeta of
    shape (..., N, d) along u."""
    mfd = u.manifold
    pts = u.points
    dcu = 0.5 * u.n_samples * (np.roll(pts, -1, 0) - np.roll(pts, 1, 0))
    v = u.velocity()
    dczeta = 0.5 * u.n_samples * (np.roll(zeta, -1, -2)
                                  - np.roll(zeta, 1, -2))
    dv = mfd.project_tangent(pts, dczeta) \
        + mfd.tangent_projector_derivative(pts, dcu, zeta)
    dnl = mfd.sff_jacobian_term(pts, v, zeta, dv) \
        + np.einsum("jab,...jb->...ja", V.grad_jacobian(u), zeta)
    rhs = zeta + h_s * dnl
    dtilde = np.fft.ifft(
        np.fft.fft(rhs, axis=-2) / symbol[:, None], axis=-2).real
    rhs_full = pts + h_s * (mfd.sff(pts, v, v) + V.gradient(u).vectors)
    tilde = np.fft.ifft(
        np.fft.fft(rhs_full, axis=0) / symbol[:, None], axis=0).real
    return np.einsum("jab,...jb->...ja", mfd.project_jacobian(tilde), dtilde)


def scheme_residual(traj, V):
    """Per-step defect of the stored slices under the integration scheme,
    tangent at each slice, zero on unperturbed scheme orbits."""
    from .heatflow import _imex_symbol

    h = traj.h_s
    sym = _imex_symbol(traj.loops[0].n_samples, h)
    R = []
    for k in range(traj.n_slices - 1):
        u = traj.loops[k]
        pred = step(u, V, h, _symbol=sym)
        diff = (traj.loops[k + 1].points - pred.points) / h
        R.append(u.manifold.project_tangent(u.points, diff))
    return np.array(R)


def _residual_pnorm(R, n, h, p):
    return float((h / n * np.sum(np.abs(R) ** p)) ** (1.0 / p))


def w_norm(traj, xi):
    """Cylinder norm with first s- and t-derivatives."""
    h = traj.h_s
    n = traj.loops[0].n_samples
    dt = n * (np.roll(xi, -1, -2) - xi)
    ds = np.diff(xi, axis=0) / h
    sq = h / n * (np.sum(xi**2) + np.sum(dt**2)) + h / n * np.sum(ds**2)
    return float(np.sqrt(sq))


def refine_trajectory(traj, V, tol=1e-10, delta0=0.5, max_steps=4, p=4,
                      contraction_limit=0.8):
    """Newton corrections toward an exact scheme orbit.

    Solves the underdetermined linearized scheme equations J xi = -R in
    least-norm form (xi in the row space of J, the discrete analogue of
    the image-of-the-adjoint constraint), with the exact per-step
    Jacobian, then updates pointwise by the exponential map.
    """
    from .heatflow import _imex_symbol

    h = traj.h_s
    n = traj.loops[0].n_samples
    sym = _imex_symbol(n, h)
    work = traj
    total_norm = 0.0
    R = scheme_residual(work, V)
    res0 = _residual_pnorm(R, n, h, p)
    if res0 > delta0:
        raise ResidualTooLargeError(
            f"residual {res0:.3g} exceeds delta0 = {delta0}")
    res_prev = res0
    for _ in range(max_steps):
        if res_prev <= tol:
            break
        K = work.n_slices
        frames = [loop_frame(u)[0] for u in work.loops]
        dim = frames[0].shape[-1]
        M = n * dim
        Bt, C = [], []
        for k in range(K - 1):
            u, un = work.loops[k], work.loops[k + 1]
            Fk, Fn = frames[k], frames[k + 1]
            # delta-field basis: column (j, b) is frame vector b at sample j
            basis = np.zeros((n, dim, n, Fk.shape[1]))
            basis[np.arange(n), :, np.arange(n), :] = np.swapaxes(Fk, 1, 2)
            basis = basis.reshape(M, n, -1)
            dstep = _apply_dstep(u, V, h, sym, basis)
            Pu = u.manifold.tangent_projector(u.points)
            dstep = np.einsum("jab,ijb->ija", Pu, dstep)
            Bt.append(np.einsum("jbc,ijb->ijc", Fk, dstep)
                      .reshape(M, M).T / h)
            Cn = np.einsum("jab,jbi->jai", Pu, Fn)
            blk = np.einsum("jac,jai->jci", Fk, Cn)  # (n, dim, dim)
            Cfull = np.zeros((n, dim, n, dim))
            Cfull[np.arange(n), :, np.arange(n), :] = blk
            C.append(Cfull.reshape(M, M) / h)
        rhs = np.array([
            -field_to_frame(frames[k], R[k]).reshape(-1) / 1.0
            for k in range(K - 1)])
        # block-tridiagonal Thomas on J J^T
        diag, up = [], []
        for k in range(K - 1):
            diag.append(Bt[k] @ Bt[k].T + C[k] @ C[k].T)
            if k + 1 < K - 1:
                up.append(-C[k] @ Bt[k + 1].T)
        y = _block_thomas(diag, up, rhs)
        xi = np.zeros((K, M))
        for k in range(K - 1):
            xi[k] -= Bt[k].T @ y[k]
            xi[k + 1] += C[k].T @ y[k]
        xi_fields = np.stack([
            frame_to_field(frames[k], xi[k].reshape(n, dim))
            for k in range(K)])
        new_loops = [
            DiscreteLoop(u.manifold, u.manifold.exp(u.points, xi_fields[k]))
            for k, u in enumerate(work.loops)]
        mon = dict(work.monitors)
        work = CylinderTrajectory(
            manifold=work.manifold, s=work.s, loops=new_loops, h_s=h,
            monitors=mon, status=work.status)
        total_norm += w_norm(work, xi_fields)
        R = scheme_residual(work, V)
        res = _residual_pnorm(R, n, h, p)
        contraction = res / res_prev if res_prev > 0 else 0.0
        if res > tol and contraction >= contraction_limit:
            raise StalledError(
                f"contraction factor {contraction:.2f} too weak",
                residual=res)
        res_prev = res
    return work, total_norm


def _block_thomas(diag, up, rhs):
    """Solve the symmetric block tridiagonal system (diag, up) y = rhs."""
    from scipy.linalg import cho_factor, cho_solve

    K = len(diag)
    factors, zs = [], []
    S = diag[0]
    z = rhs[0]
    for k in range(K):
        cf = cho_factor(S, lower=True)
        factors.append(cf)
        zs.append(z)
        if k + 1 < K:
            S = diag[k + 1] - up[k].T @ cho_solve(cf, up[k])
            z = rhs[k + 1] - up[k].T @ cho_solve(cf, z)
    y = [None] * K
    y[-1] = cho_solve(factors[-1], zs[-1])
    for k in range(K - 2, -1, -1):
        y[k] = cho_solve(factors[k], zs[k] - up[k] @ y[k + 1])
    return np.array(y)


# -- diagnostics -----------------------------------------------------------------


def ev0_injectivity(orbits, sep_min=None):
    """Pairwise C^0 separation of the normalized time-0 loops."""
    if len(orbits) < 2:
        return {"pairs": 0, "min_separation": np.inf, "violations": []}
    if sep_min is None:
        sep_min = 1e-4 * orbits[0].source.loop.manifold.injectivity_radius
    seps, violations = [], []
    for i, a in enumerate(orbits):
        for j, b in enumerate(orbits[i + 1:], i + 1):
            d = loop_distance(a.time0_loop, b.time0_loop, "C0")
            seps.append(d)
            if d <= sep_min:
                violations.append(
                    {"pair": (i, j), "separation": d,
                     "status": "uc-violation-suspect"})
    return {"pairs": len(seps), "min_separation": float(min(seps)),
            "violations": violations}


def unstable_rank(chart, V, probe_time, h_s, rank_tol=1e-6, fd_delta=0.05):
    """Numerical rank of the endpoint map of the chart after flowing for
    probe_time: the dimension of the local unstable manifold."""
    k = chart.index
    base = integrate(chart.base.loop, V, h_s, probe_time, tol_conv=0.0,
                     store_stride=10**9).final_loop

    cols = []
    for i in range(k):
        out = []
        for s in (1.0, -1.0):
            c = np.zeros(k)
            c[i] = s * fd_delta
            end = integrate(chart.seed(c), V, h_s, probe_time, tol_conv=0.0,
                            store_stride=10**9).final_loop
            out.append(end.points)
        cols.append(((out[0] - out[1]) / (2 * fd_delta)).reshape(-1))
    if not cols:
        return 0
    J = np.stack(cols, -1)
    sv = np.linalg.svd(J, compute_uv=False)
    return int(np.sum(sv > rank_tol * sv[0]))
