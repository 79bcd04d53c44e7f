"""Semi-implicit integration of the loop-space heat flow.

One step treats the stiff periodic second difference implicitly (a
circulant solve per ambient coordinate via FFT), the second fundamental
form and potential gradient explicitly, then reprojects every sample to
the manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousCaptureError,
    FarFromManifoldError,
    InsufficientTailError,
    ProjectionFailedError,
)
from .loopspace import DiscreteLoop, LoopField, action, loop_distance

TOL_CONV = 1e-8


def h_s_max(n_samples):
    """Default step bound: the explicit nonlinear terms stay stable well
    below the advective scale 1/N."""
    return 0.25 / n_samples


def _imex_symbol(n, h_s):
    k = np.arange(n)
    return 1.0 + h_s * 2.0 * n**2 * (1.0 - np.cos(2 * np.pi * k / n))


def step(u, V, h_s, _symbol=None):
    """One IMEX step of the embedded heat equation.

    Solves (I - h_s D_tt) u~ = u + h_s (Gamma(u)(du, du) + grad V(u)) per
    ambient coordinate, then reprojects.
    """
    mfd = u.manifold
    pts = u.points
    v = u.velocity()
    rhs = pts + h_s * (mfd.sff(pts, v, v) + V.gradient(u).vectors)
    sym = _imex_symbol(u.n_samples, h_s) if _symbol is None else _symbol
    tilde = np.fft.ifft(np.fft.fft(rhs, axis=0) / sym[:, None], axis=0).real
    try:
        return DiscreteLoop(mfd, mfd.project(tilde))
    except FarFromManifoldError as exc:
        raise ProjectionFailedError(
            "intermediate point left the projection tube "
            "(step size too large)", h_s=h_s) from exc


@dataclass
class CylinderTrajectory:
    """Heat-flow solution slices with per-step monitors.

    Slices may be stored at a stride; monitors (action, L^2 speed, sup
    velocity, sup covariant acceleration) are always at full resolution.
    """

    manifold: object
    s: np.ndarray           # s values of stored slices
    loops: list             # stored DiscreteLoop slices
    h_s: float
    monitors: dict          # arrays keyed s, action, dsu_l2, dtu_sup,
                            # nabla_t_dtu_sup
    status: str             # "converged" | "budget-exhausted" | "stationary"

    @property
    def n_slices(self):
        return len(self.loops)

    @property
    def converged(self):
        return self.status in ("converged", "stationary")

    @property
    def final_loop(self):
        return self.loops[-1]

    @property
    def initial_loop(self):
        return self.loops[0]

    def slice_at(self, s_value):
        i = int(np.argmin(np.abs(self.s - s_value)))
        return self.loops[i]

    def reversed(self):
        mon = {k: v[::-1].copy() for k, v in self.monitors.items()}
        mon["s"] = -self.monitors["s"][::-1].copy()
        return CylinderTrajectory(
            manifold=self.manifold,
            s=-self.s[::-1].copy(),
            loops=list(reversed(self.loops)),
            h_s=self.h_s,
            monitors=mon,
            status=self.status,
        )

    def shifted(self, s0):
        mon = dict(self.monitors)
        mon["s"] = self.monitors["s"] - s0
        return CylinderTrajectory(
            manifold=self.manifold,
            s=self.s - s0,
            loops=self.loops,
            h_s=self.h_s,
            monitors=mon,
            status=self.status,
        )


def _slice_monitors(u, V, dsu_l2):
    sd = u.second_difference()
    nabla2 = np.einsum("...ij,...j->...i",
                       u.manifold.tangent_projector(u.points), sd)
    return (action(u, V), dsu_l2,
            float(np.max(np.linalg.norm(u.velocity(), axis=-1))),
            float(np.max(np.linalg.norm(nabla2, axis=-1))))


def integrate(u0, V, h_s, s_max, tol_conv=TOL_CONV, store_stride=1,
              s_offset=0.0):
    """Flow until the L^2 speed drops below tol_conv or the s budget runs
    out.  Deterministic; restarting from any stored slice reproduces the
    tail bit-for-bit."""
    if h_s > h_s_max(u0.n_samples):
        raise ValueError(
            f"h_s = {h_s} exceeds stability bound {h_s_max(u0.n_samples)}")
    mfd = u0.manifold
    sym = _imex_symbol(u0.n_samples, h_s)
    n_steps = int(round(s_max / h_s))
    u = u0.copy()
    s_vals, loops = [s_offset], [u]
    rows = []
    status = "budget-exhausted"
    for k in range(n_steps):
        u_next = step(u, V, h_s, _symbol=sym)
        dsu = LoopField(u, mfd.project_tangent(
            u.points, (u_next.points - u.points) / h_s))
        dsu_l2 = dsu.l2()
        rows.append((s_offset + k * h_s,) + _slice_monitors(u, V, dsu_l2))
        converged = dsu_l2 <= tol_conv
        if (k + 1) % store_stride == 0 or converged or k == n_steps - 1:
            s_vals.append(s_offset + (k + 1) * h_s)
            loops.append(u_next)
        u = u_next
        if converged:
            status = "converged" if k > 0 else "stationary"
            break
    if not rows:  # zero-length budget
        rows.append((s_offset,) + _slice_monitors(u, V, 0.0))
    last = rows[-1]
    rows.append((last[0] + h_s, action(u, V)) + last[2:])
    keys = ("s", "action", "dsu_l2", "dtu_sup", "nabla_t_dtu_sup")
    monitors = {k: np.array([r[i] for r in rows])
                for i, k in enumerate(keys)}
    return CylinderTrajectory(
        manifold=mfd, s=np.array(s_vals), loops=loops, h_s=h_s,
        monitors=monitors, status=status)


def energy(traj):
    """Flow energy: the s-integral of the squared L^2 speed.

    The recorded speed is a forward difference, second-order accurate at
    midpoints, so the step-sum is a midpoint rule.
    """
    dsu = traj.monitors["dsu_l2"][:-1]
    return float(traj.h_s * np.sum(dsu**2))


def detect_limit(traj, crit_list, capture_radius):
    """The unique critical point within C^0 capture_radius of the final
    slice, or None."""
    if len(crit_list) >= 2:
        gaps = [loop_distance(a.loop, b.loop, "C0")
                for i, a in enumerate(crit_list)
                for b in crit_list[i + 1:]]
        if capture_radius >= 0.5 * min(gaps):
            raise AmbiguousCaptureError(
                "capture radius exceeds half the minimal pairwise gap",
                capture_radius=capture_radius, min_gap=min(gaps))
    final = traj.final_loop
    hits = [c for c in crit_list
            if loop_distance(final, c.loop, "C0") < capture_radius]
    if len(hits) > 1:
        raise AmbiguousCaptureError("multiple critical points captured")
    return hits[0] if hits else None


@dataclass
class DecayFit:
    rho: float
    window: tuple
    r_squared: float
    reference_gap: float = np.nan
    side: str = "forward"

    @property
    def gap_ratio(self):
        return self.rho / self.reference_gap


def decay_fit(traj, side, reference_gap=np.nan, tol_conv=TOL_CONV,
              min_slices=20):
    """Exponential rate of the L^2 speed: least squares on log speed
    versus s over the trailing (forward) or leading (backward) window."""
    s = traj.monitors["s"][:-1]
    dsu = traj.monitors["dsu_l2"][:-1]
    pos = dsu > 0
    s, dsu = s[pos], dsu[pos]
    if side == "forward":
        # trailing decades just above the convergence floor
        mask = (dsu >= 10 * tol_conv) & (dsu <= 1e3 * tol_conv)
        if np.sum(mask) < min_slices:
            mask = dsu <= 1e4 * tol_conv
    elif side == "backward":
        # leading decades of growth away from the source
        mask = np.zeros_like(dsu, bool)
        lead = np.nonzero(dsu <= 100 * dsu[0])[0]
        stop = lead[np.nonzero(np.diff(lead) > 1)[0][0]] + 1 \
            if np.any(np.diff(lead) > 1) else lead[-1] + 1
        mask[:stop] = True
    else:
        raise ValueError(f"unknown side {side!r}")
    if np.sum(mask) < min_slices:
        raise InsufficientTailError(
            f"only {int(np.sum(mask))} slices in the {side} regime")
    sw, lw = s[mask], np.log(dsu[mask])
    slope, intercept = np.polyfit(sw, lw, 1)
    pred = slope * sw + intercept
    ss_res = float(np.sum((lw - pred) ** 2))
    ss_tot = float(np.sum((lw - np.mean(lw)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    rho = -slope if side == "forward" else slope
    return DecayFit(rho=float(rho), window=(float(sw[0]), float(sw[-1])),
                    r_squared=r2, reference_gap=reference_gap, side=side)


def check_apriori(traj, c0, bound_factor=10.0, lead=10):
    """No-blow-up surrogate: sup monitors never exceed bound_factor times
    their early-trajectory values, and the action stays below c0."""
    mon = traj.monitors
    if np.any(mon["action"] > c0):
        return {"accepted": False,
                "reason": f"action exceeds c0 = {c0}", "ratios": {}}
    ratios = {}
    ok = True
    for key in ("dtu_sup", "nabla_t_dtu_sup", "dsu_l2"):
        head = float(np.max(mon[key][:lead]))
        full = float(np.max(mon[key]))
        r = full / head if head > 0 else (1.0 if full == 0 else np.inf)
        ratios[key] = r
        ok = ok and r <= bound_factor
    return {"accepted": True, "passed": ok, "ratios": ratios,
            "bound_factor": bound_factor}
