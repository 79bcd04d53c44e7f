"""Linearization along heat-flow cylinders: the operator D_u, its formal
adjoint, slice Hessian families, spectral flow, and stationary kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .critical import assemble_hessian
from .errors import (
    DegenerateCriticalPointError,
    EndpointDegenerateError,
    GridMismatchError,
    TrackingAmbiguousError,
)
from .loopspace import LoopField

TOL_NONDEG = 1e-6


def _check_grid(u_loops, xi):
    if len(xi) != len(u_loops) or any(
            np.shape(x) != np.shape(u.points)
            for x, u in zip(xi, u_loops)):
        raise GridMismatchError(
            f"field shape {np.shape(xi)} does not match the trajectory")


def _slice_A_apply(u, V, xi_slice):
    """Pointwise part A(s) xi = -nabla_t nabla_t xi - R(xi,du)du - H_V xi."""
    mfd = u.manifold
    P = mfd.tangent_projector(u.points)
    n = u.n_samples
    sd = n**2 * (np.roll(xi_slice, -1, 0) - 2 * xi_slice
                 + np.roll(xi_slice, 1, 0))
    v = u.velocity()
    out = -np.einsum("...ij,...j->...i", P, sd)
    out -= mfd.curvature(u.points, xi_slice, v, v)
    out -= V.hessian_apply(u, LoopField(u, xi_slice)).vectors
    return out


def apply_Du(traj, V, xi):
    """D_u xi = nabla_s xi + A(u_s) xi with nabla_s the projected forward
    s-difference (backward at the final slice)."""
    loops = traj.loops
    _check_grid(loops, xi)
    h = float(traj.s[1] - traj.s[0]) if len(loops) > 1 else traj.h_s
    out = np.empty_like(np.asarray(xi, float))
    for k, u in enumerate(loops):
        if k + 1 < len(loops):
            ds = (xi[k + 1] - xi[k]) / h
        else:
            ds = (xi[k] - xi[k - 1]) / h
        ds = u.manifold.project_tangent(u.points, ds)
        out[k] = ds + _slice_A_apply(u, V, xi[k])
    return out


def apply_Du_star(traj, V, xi):
    """Formal adjoint: -nabla_s (projected backward difference) + A(u_s)."""
    loops = traj.loops
    _check_grid(loops, xi)
    h = float(traj.s[1] - traj.s[0]) if len(loops) > 1 else traj.h_s
    out = np.empty_like(np.asarray(xi, float))
    for k, u in enumerate(loops):
        if k >= 1:
            ds = (xi[k] - xi[k - 1]) / h
        else:
            ds = (xi[1] - xi[0]) / h
        ds = u.manifold.project_tangent(u.points, ds)
        out[k] = -ds + _slice_A_apply(u, V, xi[k])
    return out


def cylinder_inner(traj, xi, eta):
    """L^2 inner product on the cylinder (1/N t-weight, h_s s-weight)."""
    h = float(traj.s[1] - traj.s[0]) if len(traj.loops) > 1 else traj.h_s
    n = traj.loops[0].n_samples
    return float(h / n * np.sum(np.asarray(xi) * np.asarray(eta)))


# -- operator families and spectral flow --------------------------------------


@dataclass
class OperatorFamily:
    s_grid: np.ndarray
    slices: list          # HessianAssembly per s
    refine: object = None  # callback (s_lo, s_hi, count) -> list of
                           # (s, HessianAssembly) for tracking guards

    @classmethod
    def from_trajectory(cls, traj, V, max_slices=40):
        stride = max(1, (traj.n_slices - 1) // max_slices)
        idx = list(range(0, traj.n_slices, stride))
        if idx[-1] != traj.n_slices - 1:
            idx.append(traj.n_slices - 1)
        s_grid = traj.s[idx]
        slices = [assemble_hessian(traj.loops[i], V) for i in idx]

        def refine(s_lo, s_hi, count):
            ss = np.linspace(s_lo, s_hi, count + 2)[1:-1]
            return [(float(s), assemble_hessian(traj.slice_at(s), V))
                    for s in ss]

        return cls(np.asarray(s_grid, float), slices, refine)


@dataclass
class SpectralFlowResult:
    flow: int
    crossings: list               # (s, eigenvalue position, direction)
    endpoint_indices: tuple

    def to_json(self):
        return {
            "flow": self.flow,
            "crossings": [
                {"s": s, "position": int(p), "direction": int(d)}
                for s, p, d in self.crossings],
            "endpoint_indices": list(self.endpoint_indices),
        }


def spectral_flow(fam, track_tol=1e-3, tol_nondeg=TOL_NONDEG,
                  max_refine=3):
    """Net signed count of eigenvalue zero crossings of the slice family.

    Sorted eigenvalue curves of a symmetric family are continuous, so
    crossings are sign changes per sorted position between consecutive
    slices.  An upward crossing (negative to positive) lowers the index
    and counts +1.  The result is asserted against the endpoint index
    difference; the crossing list is the independent evidence.
    """
    s_grid = list(fam.s_grid)
    eigs = [np.linalg.eigvalsh(a.matrix) for a in fam.slices]
    for side in (0, -1):
        if np.min(np.abs(eigs[side])) <= tol_nondeg:
            raise EndpointDegenerateError(
                f"endpoint slice at s = {s_grid[side]} is degenerate")

    for _ in range(max_refine + 1):
        crossings = []
        ambiguous_at = None
        for k in range(len(s_grid) - 1):
            lo, hi = eigs[k], eigs[k + 1]
            changed = np.nonzero(np.sign(lo) != np.sign(hi))[0]
            changed = [i for i in changed if lo[i] != 0]
            if len(changed) > 1 and fam.refine is not None:
                near_zero = np.sum(np.minimum(np.abs(lo[changed]),
                                              np.abs(hi[changed]))
                                   < track_tol)
                if near_zero > 1:
                    ambiguous_at = k
                    break
            for i in changed:
                direction = 1 if hi[i] > lo[i] else -1
                # zero location by linear interpolation
                frac = abs(lo[i]) / (abs(lo[i]) + abs(hi[i]))
                s_cross = s_grid[k] + frac * (s_grid[k + 1] - s_grid[k])
                crossings.append((float(s_cross), int(i), direction))
        if ambiguous_at is None:
            break
        if fam.refine is None:
            raise TrackingAmbiguousError(
                "two eigenvalues cross together and no refinement "
                "callback is available")
        new = fam.refine(s_grid[ambiguous_at], s_grid[ambiguous_at + 1], 3)
        for s_new, asm in reversed(new):
            s_grid.insert(ambiguous_at + 1, s_new)
            eigs.insert(ambiguous_at + 1, np.linalg.eigvalsh(asm.matrix))
    else:
        raise TrackingAmbiguousError(
            f"crossing still ambiguous after {max_refine} refinements")

    ind_lo = int(np.sum(eigs[0] < 0))
    ind_hi = int(np.sum(eigs[-1] < 0))
    flow = sum(d for _, _, d in crossings)
    if flow != ind_lo - ind_hi:
        raise TrackingAmbiguousError(
            f"crossing count {flow} disagrees with endpoint index "
            f"difference {ind_lo - ind_hi}")
    crossings.sort(key=lambda c: c[0])
    return SpectralFlowResult(flow=flow, crossings=crossings,
                              endpoint_indices=(ind_lo, ind_hi))


def stationary_trajectory(x, s_window, h_s):
    """Constant-in-s cylinder over a critical point, for linearized-
    operator tests."""
    from .heatflow import CylinderTrajectory

    s = np.arange(s_window[0], s_window[1] + 0.5 * h_s, h_s)
    loops = [x.loop] * len(s)
    zero = np.zeros(len(s))
    monitors = {"s": s, "action": np.full(len(s), x.action),
                "dsu_l2": zero, "dtu_sup": zero, "nabla_t_dtu_sup": zero}
    return CylinderTrajectory(
        manifold=x.loop.manifold, s=s, loops=loops, h_s=h_s,
        monitors=monitors, status="stationary")


def stationary_kernel_basis(x, s_window, n_slices=64):
    """Separable kernel fields e^{-s lambda_k} v_k on the stationary
    cylinder over x, one per negative eigenpair."""
    if x.is_degenerate:
        raise DegenerateCriticalPointError(
            f"nondeg margin {x.nondeg_margin:.3g} below tolerance")
    s0, s1 = s_window
    s = np.linspace(s0, s1, n_slices)
    fields = []
    for i in range(x.morse_index):
        lam = x.eigenvalues[i]
        v = x.eigenfield(i).vectors
        fields.append(np.exp(-lam * s)[:, None, None] * v[None])
    return s, fields
