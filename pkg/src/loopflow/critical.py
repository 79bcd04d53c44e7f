"""Perturbed closed geodesics: Newton search, covariant Hessians in a
parallel orthonormal frame, Morse indices, and enumeration below a level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateHessianError,
    FarFromManifoldError,
    NoConvergenceError,
    RegularValueError,
)
from .loopspace import (
    DiscreteLoop,
    LoopField,
    action,
    circle_geodesic,
    constant_loop,
    heat_residual,
    loop_distance,
    winding_numbers,
)
from .perturbation import (
    ComboPerturbation,
    GeometricPerturbation,
    SumPerturbation,
)

TOL_NONDEG = 1e-6


def default_tol_crit(n_samples):
    return 1e-9 * np.sqrt(n_samples)


def dedup_radius(manifold):
    return 1e-4 * manifold.injectivity_radius


# -- parallel frames along a loop ---------------------------------------------


def loop_frame(x):
    """Discretely parallel orthonormal frame along the loop.

    Returns (F, h): F has shape (N, d_amb, dim) and h is the holonomy
    rotation of the frame after one full circuit, expressed in frame
    coordinates (h = F_0^T (transport of F_{N-1} to x_0)).
    """
    mfd = x.manifold
    pts = x.points
    n = x.n_samples
    F = np.empty((n, mfd.ambient_dim, mfd.dim))
    F[0] = mfd.frame(pts[0])
    for j in range(1, n):
        T = mfd.transport(pts[j - 1], mfd.log(pts[j - 1], pts[j]))
        G = T @ F[j - 1]
        # re-orthonormalize against drift, keeping orientation
        Q, R = np.linalg.qr(mfd.project_tangent(pts[j], G.T).T)
        F[j] = Q * np.sign(np.diag(R))
    T = mfd.transport(pts[-1], mfd.log(pts[-1], pts[0]))
    h = F[0].T @ (T @ F[-1])
    # h is orthogonal up to discretization; snap to the nearest rotation
    U, _, Vt = np.linalg.svd(h)
    return F, U @ Vt


def field_to_frame(F, vectors):
    """Frame coordinates of a tangent field, shape (N, dim)."""
    return np.einsum("jia,ji->ja", F, vectors)


def frame_to_field(F, coords):
    return np.einsum("jia,ja->ji", F, coords)


def _is_pointwise(V):
    if isinstance(V, GeometricPerturbation):
        return True
    if isinstance(V, ComboPerturbation):
        return all(_is_pointwise(g) for _, g in V.terms)
    if isinstance(V, SumPerturbation):
        return all(_is_pointwise(p) for p in V.parts)
    return False


@dataclass
class HessianAssembly:
    """Second variation of the action at a loop, in frame coordinates."""

    matrix: np.ndarray
    frame: np.ndarray
    holonomy: np.ndarray
    asymmetry_defect: float

    def eig(self):
        return np.linalg.eigh(self.matrix)


def assemble_hessian(x, V):
    """Discrete covariant Hessian A_x of the action.

    A_x xi = -nabla_t nabla_t xi - R(xi, xdot) xdot - Hess_V(x) xi,
    assembled in a parallel orthonormal frame along x and symmetrized.
    The second t-derivative is the three-point difference in frame
    coordinates, with the holonomy rotation closing the circle.
    """
    mfd = x.manifold
    n, dim = x.n_samples, mfd.dim
    F, h = loop_frame(x)
    M = n * dim
    A = np.zeros((M, M))

    # -nabla_t nabla_t in the parallel frame: block circulant with twist
    n2 = float(n) ** 2
    idx = np.arange(n)
    for b in range(dim):
        A[idx * dim + b, idx * dim + b] = 2.0 * n2
    eye = np.eye(dim)
    for j in range(n):
        jp = (j + 1) % n
        blk_p = h.T if jp == 0 else eye
        A[j * dim:(j + 1) * dim, jp * dim:(jp + 1) * dim] -= n2 * blk_p
        jm = (j - 1) % n
        blk_m = h if j == 0 else eye
        A[j * dim:(j + 1) * dim, jm * dim:(jm + 1) * dim] -= n2 * blk_m

    v = x.velocity()
    if _is_pointwise(V):
        for a in range(dim):
            fa = F[:, :, a]
            ra = mfd.curvature(x.points, fa, v, v)
            hv = V.hessian_apply(x, LoopField(x, fa)).vectors
            col = np.einsum("jib,ji->jb", F, ra + hv)  # (n, dim)
            for b in range(dim):
                A[idx * dim + b, idx * dim + a] -= col[:, b]
    else:
        # nonlocal Hessian: assemble column by column on delta fields
        for j in range(n):
            pa = mfd.curvature(x.points[j], F[j].T, v[j], v[j])  # (dim, d)
            for a in range(dim):
                delta = np.zeros((n, mfd.ambient_dim))
                delta[j] = F[j, :, a]
                hv = V.hessian_apply(x, LoopField(x, delta)).vectors
                col = field_to_frame(F, hv)
                col[j] += F[j].T @ pa[a]  # curvature acts pointwise
                A[:, j * dim + a] -= col.reshape(-1)

    defect = float(np.max(np.abs(A - A.T)))
    A = 0.5 * (A + A.T)
    return HessianAssembly(A, F, h, defect)


# -- critical points -----------------------------------------------------------


@dataclass(eq=False)
class CriticalPoint:
    loop: DiscreteLoop
    action: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, frame coordinates
    morse_index: int
    nondeg_margin: float
    frame: np.ndarray
    holonomy: np.ndarray
    residual_sup: float
    residual_history: list = field(default_factory=list)

    @property
    def is_degenerate(self):
        return self.nondeg_margin <= TOL_NONDEG

    @property
    def winding(self):
        return winding_numbers(self.loop)

    def eigenfield(self, i):
        n = self.loop.n_samples
        coords = self.eigenvectors[:, i].reshape(n, -1)
        return LoopField(self.loop, frame_to_field(self.frame, coords))

    def summary(self):
        return {
            "action": self.action,
            "index": self.morse_index,
            "nondeg_margin": self.nondeg_margin,
            "eigenvalues": [float(v) for v in self.eigenvalues[:8]],
            "residual_sup": self.residual_sup,
            "winding": list(self.winding),
            "degenerate": bool(self.is_degenerate),
        }


def _make_critical_point(x, V, history):
    asm = assemble_hessian(x, V)
    w, Q = asm.eig()
    res = heat_residual(x, V)
    return CriticalPoint(
        loop=x,
        action=float(action(x, V)),
        eigenvalues=w,
        eigenvectors=Q,
        morse_index=int(np.sum(w < 0)),
        nondeg_margin=float(np.min(np.abs(w))),
        frame=asm.frame,
        holonomy=asm.holonomy,
        residual_sup=float(res.sup()),
        residual_history=history,
    )


def newton_solve(seed, V, tol_crit=None, max_iter=50, tol_nondeg=TOL_NONDEG):
    """Damped Newton iteration on the closed-geodesic residual.

    The update solves A_x xi = residual in the loop frame (the residual
    is minus the action gradient, and the linearization of minus the
    residual is A_x), with Armijo backtracking on the squared L^2
    residual and projection back to the manifold.
    """
    mfd = seed.manifold
    if tol_crit is None:
        tol_crit = default_tol_crit(seed.n_samples)
    x = seed.copy()
    history = []
    for _ in range(max_iter):
        r = heat_residual(x, V)
        rsup = r.sup()
        history.append(float(rsup))
        if rsup <= tol_crit:
            return _make_critical_point(x, V, history)
        asm = assemble_hessian(x, V)
        w, Q = asm.eig()
        if np.min(np.abs(w)) <= tol_nondeg:
            raise DegenerateHessianError(
                f"Newton system singular: min |eig| = {np.min(np.abs(w)):.3g}")
        rc = field_to_frame(asm.frame, r.vectors).reshape(-1)
        step = (Q @ ((Q.T @ rc) / w)).reshape(x.n_samples, -1)
        xi = frame_to_field(asm.frame, step)
        rl2_sq = r.l2() ** 2
        tau = 1.0
        if r.l2() >= 1e-4:
            accepted = False
            for _ in range(30):
                try:
                    cand = DiscreteLoop(
                        mfd, mfd.project(x.points + tau * xi))
                except FarFromManifoldError:
                    tau *= 0.5  # trial left the projection tube
                    continue
                if heat_residual(cand, V).l2() ** 2 \
                        <= (1 - 1e-4 * tau) * rl2_sq:
                    accepted = True
                    break
                tau *= 0.5
            if not accepted:
                raise NoConvergenceError(
                    "Armijo backtracking stalled", residual=float(rsup))
            x = cand
        else:
            x = DiscreteLoop(mfd, mfd.project(x.points + xi))
    raise NoConvergenceError(
        f"no convergence in {max_iter} iterations",
        residual=history[-1] if history else None)


# -- enumeration ----------------------------------------------------------------


def default_seeds(manifold, n_samples, angle_grid=8, winding_bound=0,
                  level=None):
    """Deterministic seed family: constant loops on an angular or
    coordinate lattice, plus geodesic loops per winding class whose
    kinetic energy does not already exceed the level."""
    seeds = []
    kind = manifold.spec.kind
    if kind in ("circle", "flat_torus"):
        m = 1 if kind == "circle" else manifold.m
        L = 2 * np.pi * manifold.r
        grid = np.arange(angle_grid) / angle_grid * L
        mesh = np.meshgrid(*([grid] * m), indexing="ij")
        arcs = np.stack([g.ravel() for g in mesh], -1)
        for arc in arcs:
            if kind == "circle":
                q = manifold.point_of_angle(arc[0] / manifold.r)
            else:
                q = manifold.point_of_angles(arc)
            seeds.append(constant_loop(manifold, q, n_samples))
        if winding_bound > 0 and kind == "circle":
            for w in range(-winding_bound, winding_bound + 1):
                if w == 0:
                    continue
                kin = 0.5 * (w * L) ** 2
                if level is not None and kin > level + 1.0:
                    continue
                seeds.append(circle_geodesic(manifold, n_samples, winding=w))
    else:
        d = manifold.ambient_dim
        for i in range(d):
            for s in (1.0, -1.0):
                q = np.zeros(d)
                q[i] = s * manifold.r
                seeds.append(constant_loop(manifold, q, n_samples))
    return seeds


def enumerate_below(V, a, manifold, n_samples, seeds=None, angle_grid=8,
                    winding_bound=0, winding_filter=None, tol_crit=None,
                    max_iter=50, tol_reg=1e-9, keep_degenerate=False):
    """Critical points with action at most a, from a deterministic seed
    sweep, deduplicated by C^0 distance.

    Raises when some found action lies within tol_reg of a (a must be
    regular for the downstream sublevel constructions).
    """
    if seeds is None:
        seeds = default_seeds(manifold, n_samples, angle_grid,
                              winding_bound, level=a)
    found = []
    skipped = 0
    for seed in seeds:
        try:
            cp = newton_solve(seed, V, tol_crit=tol_crit, max_iter=max_iter)
        except (NoConvergenceError, DegenerateHessianError):
            skipped += 1
            continue
        if cp.action > a:
            continue
        if winding_filter is not None and cp.winding != tuple(winding_filter):
            continue
        if cp.is_degenerate and not keep_degenerate:
            continue
        found.append(cp)
    found.sort(key=lambda c: (c.action,
                              tuple(np.round(c.loop.points[0], 9))))
    rad = dedup_radius(manifold)
    unique = []
    for cp in found:
        if any(loop_distance(cp.loop, u.loop, "C0") < rad for u in unique):
            continue
        unique.append(cp)
    for cp in unique:
        if abs(cp.action - a) < tol_reg:
            raise RegularValueError(
                f"critical value {cp.action} within {tol_reg} of level {a}")
    return unique
