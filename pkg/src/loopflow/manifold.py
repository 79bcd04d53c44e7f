"""Catalogue of embedded model manifolds with exact geometric primitives.

Three closed manifolds are supported, each isometrically embedded in
Euclidean space with closed-form projection, second fundamental form,
curvature, exponential map, parallel transport and the E-maps:

* ``circle``       -- round circle of radius ``scale`` in R^2,
* ``flat_torus``   -- product of ``intrinsic_dim`` circles of circumference
                      ``scale`` (default 1), one R^2 block per factor,
* ``round_sphere`` -- round sphere of radius ``scale`` in R^(d+1).

All operations accept either a single point (shape ``(ambient_dim,)``) or a
batch of points (shape ``(..., ambient_dim)``) and are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BeyondInjectivityRadiusError, FarFromManifoldError

EPS_MFD = 1e-12

_KINDS = ("circle", "flat_torus", "round_sphere")


@dataclass(frozen=True)
class ManifoldSpec:
    """Declaration of a catalogue manifold."""

    kind: str
    intrinsic_dim: int
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.intrinsic_dim < 1:
            raise ValueError("intrinsic_dim must be positive")
        if self.kind == "circle" and self.intrinsic_dim != 1:
            raise ValueError("circle has intrinsic_dim 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def ambient_dim(self):
        if self.kind == "circle":
            return 2
        if self.kind == "flat_torus":
            return 2 * self.intrinsic_dim
        return self.intrinsic_dim + 1


def make_manifold(spec):
    """Instantiate the geometry backend for a ManifoldSpec."""
    if spec.kind == "circle":
        return Circle(spec.scale)
    if spec.kind == "flat_torus":
        return FlatTorus(spec.intrinsic_dim, spec.scale)
    return RoundSphere(spec.intrinsic_dim, spec.scale)


class _Manifold:
    """Common interface; subclasses fill in the closed forms."""

    spec: ManifoldSpec
    dim: int
    ambient_dim: int
    injectivity_radius: float

    # -- basic primitives -------------------------------------------------

    def project(self, q):
        """Closest point on M; raises FarFromManifoldError outside the
        iota/2 tube."""
        raise NotImplementedError

    def tangent_projector(self, q):
        """Orthogonal projector onto T_qM, shape (..., d_amb, d_amb)."""
        raise NotImplementedError

    def project_tangent(self, q, v):
        """Apply the tangent projector at q to v (cheaper than forming P)."""
        P = self.tangent_projector(q)
        return np.einsum("...ij,...j->...i", P, v)

    def project_jacobian(self, q):
        """Exact Jacobian of ``project`` at a near-manifold point q."""
        raise NotImplementedError

    def sff(self, q, v, w):
        """Second fundamental form Gamma(v, w), normal-valued at q."""
        raise NotImplementedError

    def sff_jacobian_term(self, q, v, dq, dv):
        """Derivative of q -> Gamma(q)(v(q), v(q)) along (dq, dv)."""
        raise NotImplementedError

    def curvature(self, q, x, y, z):
        """Riemann tensor R(x, y)z at q (closed form, Gauss equation)."""
        raise NotImplementedError

    def exp(self, q, xi):
        """Riemannian exponential; ||xi|| must be below iota."""
        raise NotImplementedError

    def transport(self, q, xi):
        """Parallel transport matrix along t -> exp_q(t xi), T_q -> T_exp."""
        raise NotImplementedError

    def log(self, q, p):
        """Inverse of exp: xi in T_qM with exp_q(xi) = p."""
        raise NotImplementedError

    def dist(self, q, p):
        xi = self.log(q, p)
        return np.linalg.norm(xi, axis=-1)

    def dlog(self, base, q):
        """Derivative of q -> log_base(q) as a matrix T_qM -> T_baseM.

        Shape (..., d_amb, d_amb); rows annihilate normal directions at
        base, columns act on tangent vectors at q.
        """
        xi = self.log(base, q)
        T = self.transport(base, xi)  # T_base -> T_q
        Tt = np.swapaxes(T, -1, -2)
        P = self.tangent_projector(q)
        return self._dlog_correction(base, xi) @ Tt @ P

    def _dlog_correction(self, base, xi):
        """Flat default: transport alone inverts the differential of exp."""
        shape = np.broadcast_shapes(np.shape(base), np.shape(xi))
        return np.broadcast_to(
            np.eye(shape[-1]), shape[:-1] + (shape[-1], shape[-1]))

    def frame(self, q):
        """Deterministic orthonormal basis of T_qM, shape (d_amb, dim)."""
        raise NotImplementedError

    # -- derived ----------------------------------------------------------

    def exp_and_transport(self, q, xi):
        self._check_radius(xi)
        return self.exp(q, xi), self.transport(q, xi)

    def _check_radius(self, xi):
        n = np.max(np.linalg.norm(np.atleast_2d(xi), axis=-1))
        if n >= self.injectivity_radius:
            raise BeyondInjectivityRadiusError(
                f"|xi| = {n:.3g} >= iota = {self.injectivity_radius:.3g}")

    def e_maps(self, q, xi, fd_step=1e-5):
        """E_1, E_2 (matrices) and E_11, E_12, E_22 (bilinear callables).

        These satisfy  d/ds exp_u(xi) = E_1 du/ds + E_2 D_s xi  and the
        companion identities for the covariant s-derivatives of E_i eta,
        with E_i(q,0) = identity and E_ij(q,0) = 0.
        """
        self._check_radius(xi)
        E1 = self._e1(q, xi)
        E2 = self._e2(q, xi)

        c0 = self.exp(q, xi)

        def pull_back(c_h, vec):
            # transport vec from T_{c_h} to T_{c0} along the short geodesic
            T = self.transport(c0, self.log(c0, c_h))
            return T.T @ vec

        def bilinear(vary_base, which):
            def apply(eta, zeta):
                h = fd_step
                Ei = self._e1 if which == 1 else self._e2
                if vary_base:
                    # move the base point, transport xi and eta along
                    qp = self.exp(q, h * zeta)
                    qm = self.exp(q, -h * zeta)
                    Tp = self.transport(q, h * zeta)
                    Tm = self.transport(q, -h * zeta)
                    ap = pull_back(self.exp(qp, Tp @ xi),
                                   Ei(qp, Tp @ xi) @ (Tp @ eta))
                    am = pull_back(self.exp(qm, Tm @ xi),
                                   Ei(qm, Tm @ xi) @ (Tm @ eta))
                else:
                    # vary xi only, same base point
                    ap = pull_back(self.exp(q, xi + h * zeta),
                                   Ei(q, xi + h * zeta) @ eta)
                    am = pull_back(self.exp(q, xi - h * zeta),
                                   Ei(q, xi - h * zeta) @ eta)
                return (ap - am) / (2 * h)
            return apply

        E11 = bilinear(True, 1)
        E12 = bilinear(False, 1)
        E22 = bilinear(False, 2)
        return E1, E2, E11, E12, E22

    def _e1(self, q, xi):
        raise NotImplementedError

    def _e2(self, q, xi):
        raise NotImplementedError

    def random_point(self, rng, n=None):
        """Uniform-ish random sample, for tests and probe sets."""
        shape = (self.ambient_dim,) if n is None else (n, self.ambient_dim)
        return self.project(self._raw_random(rng, shape))

    def _raw_random(self, rng, shape):
        raise NotImplementedError


# ---------------------------------------------------------------------------


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


class Circle(_Manifold):
    """Round circle of radius r in R^2."""

    def __init__(self, radius):
        self.r = float(radius)
        self.dim = 1
        self.ambient_dim = 2
        self.injectivity_radius = np.pi * self.r
        self.spec = ManifoldSpec("circle", 1, self.r)

    def project(self, q):
        q = np.asarray(q, float)
        n = np.linalg.norm(q, axis=-1, keepdims=True)
        if np.any(np.abs(n - self.r) > self.injectivity_radius / 2):
            raise FarFromManifoldError("point outside the iota/2 tube")
        return q * (self.r / n)

    def tangent_projector(self, q):
        q = np.asarray(q, float)
        return np.eye(2) - np.einsum("...i,...j->...ij", q, q) / self.r**2

    def project_jacobian(self, q):
        q = np.asarray(q, float)
        n = np.linalg.norm(q, axis=-1)[..., None, None]
        qh = q / np.linalg.norm(q, axis=-1, keepdims=True)
        return (self.r / n) * (np.eye(2) - np.einsum("...i,...j->...ij", qh, qh))

    def sff(self, q, v, w):
        q, v, w = (np.asarray(a, float) for a in (q, v, w))
        return -(np.sum(v * w, axis=-1)[..., None] / self.r**2) * q

    def sff_jacobian_term(self, q, v, dq, dv):
        return -(np.sum(v * v, -1)[..., None] * dq
                 + 2 * np.sum(v * dv, -1)[..., None] * q) / self.r**2

    def tangent_projector_derivative(self, q, w, dq):
        return -(np.sum(q * w, -1)[..., None] * dq
                 + np.sum(dq * w, -1)[..., None] * q) / self.r**2

    def curvature(self, q, x, y, z):
        shape = np.broadcast_shapes(*(np.shape(a) for a in (x, y, z)))
        return np.zeros(shape)

    def angle(self, q):
        q = np.asarray(q, float)
        return np.arctan2(q[..., 1], q[..., 0])

    def point_of_angle(self, theta):
        theta = np.asarray(theta, float)
        return self.r * np.stack([np.cos(theta), np.sin(theta)], -1)

    def unit_tangent(self, q):
        q = np.asarray(q, float)
        return np.stack([-q[..., 1], q[..., 0]], -1) / self.r

    def exp(self, q, xi):
        q, xi = np.asarray(q, float), np.asarray(xi, float)
        c = np.sum(xi * self.unit_tangent(q), -1)  # signed arc length
        R = _rot2(c / self.r)
        return np.einsum("...ij,...j->...i", R, q)

    def transport(self, q, xi):
        q, xi = np.asarray(q, float), np.asarray(xi, float)
        c = np.sum(xi * self.unit_tangent(q), -1)
        return _rot2(c / self.r)

    def log(self, q, p):
        dtheta = self.angle(p) - self.angle(q)
        dtheta = (dtheta + np.pi) % (2 * np.pi) - np.pi
        return (self.r * dtheta)[..., None] * self.unit_tangent(q)

    def frame(self, q):
        return self.unit_tangent(q)[..., None]

    def _e1(self, q, xi):
        return self.transport(q, xi)

    def _e2(self, q, xi):
        return self.transport(q, xi)

    def _raw_random(self, rng, shape):
        theta = rng.uniform(0, 2 * np.pi, shape[:-1])
        return self.point_of_angle(theta)


class FlatTorus(_Manifold):
    """Product of m circles of circumference ``scale``, one R^2 block each."""

    def __init__(self, m, scale=1.0):
        self.m = int(m)
        self.circumference = float(scale)
        self.r = self.circumference / (2 * np.pi)  # factor radius
        self.dim = self.m
        self.ambient_dim = 2 * self.m
        self.injectivity_radius = self.circumference / 2
        self.spec = ManifoldSpec("flat_torus", self.m, self.circumference)
        self._factor = Circle(self.r)

    def _blocks(self, a):
        return np.asarray(a, float).reshape(*np.shape(a)[:-1], self.m, 2)

    def _flat(self, a):
        return a.reshape(*a.shape[:-2], 2 * self.m)

    def _per_factor(self, fn, *args):
        blocks = [self._blocks(a) for a in args]
        out = fn(*(b for b in blocks))
        return self._flat(out)

    def project(self, q):
        return self._per_factor(self._factor.project, q)

    def tangent_projector(self, q):
        qb = self._blocks(q)
        Pb = self._factor.tangent_projector(qb)  # (..., m, 2, 2)
        shape = qb.shape[:-2]
        P = np.zeros(shape + (self.ambient_dim, self.ambient_dim))
        for f in range(self.m):
            P[..., 2 * f:2 * f + 2, 2 * f:2 * f + 2] = Pb[..., f, :, :]
        return P

    def project_jacobian(self, q):
        qb = self._blocks(q)
        Jb = self._factor.project_jacobian(qb)
        shape = qb.shape[:-2]
        J = np.zeros(shape + (self.ambient_dim, self.ambient_dim))
        for f in range(self.m):
            J[..., 2 * f:2 * f + 2, 2 * f:2 * f + 2] = Jb[..., f, :, :]
        return J

    def sff(self, q, v, w):
        return self._per_factor(self._factor.sff, q, v, w)

    def sff_jacobian_term(self, q, v, dq, dv):
        return self._per_factor(self._factor.sff_jacobian_term, q, v, dq, dv)

    def tangent_projector_derivative(self, q, w, dq):
        return self._per_factor(
            self._factor.tangent_projector_derivative, q, w, dq)

    def curvature(self, q, x, y, z):
        shape = np.broadcast_shapes(*(np.shape(a) for a in (x, y, z)))
        return np.zeros(shape)

    def angles(self, q):
        """Per-factor normalized coordinates in [0, 1) times circumference."""
        qb = self._blocks(q)
        return self._factor.angle(qb) * self.r  # arc-length coordinates

    def point_of_angles(self, arcs):
        """Inverse of ``angles``: arc-length coordinates per factor."""
        arcs = np.asarray(arcs, float)
        return self._flat(self._factor.point_of_angle(arcs / self.r))

    def exp(self, q, xi):
        return self._per_factor(self._factor.exp, q, xi)

    def transport(self, q, xi):
        qb, xib = self._blocks(q), self._blocks(xi)
        Tb = self._factor.transport(qb, xib)
        shape = qb.shape[:-2]
        T = np.zeros(shape + (self.ambient_dim, self.ambient_dim))
        for f in range(self.m):
            T[..., 2 * f:2 * f + 2, 2 * f:2 * f + 2] = Tb[..., f, :, :]
        return T

    def log(self, q, p):
        return self._per_factor(self._factor.log, q, p)

    def frame(self, q):
        qb = self._blocks(q)
        tau = self._factor.unit_tangent(qb)  # (..., m, 2)
        shape = qb.shape[:-2]
        E = np.zeros(shape + (self.ambient_dim, self.m))
        for f in range(self.m):
            E[..., 2 * f:2 * f + 2, f] = tau[..., f, :]
        return E

    def _e1(self, q, xi):
        return self.transport(q, xi)

    def _e2(self, q, xi):
        return self.transport(q, xi)

    def _raw_random(self, rng, shape):
        theta = rng.uniform(0, 2 * np.pi, shape[:-1] + (self.m,))
        return self._flat(self._factor.point_of_angle(theta))


class RoundSphere(_Manifold):
    """Round sphere S^d of radius r in R^(d+1)."""

    def __init__(self, d, radius):
        self.d = int(d)
        self.r = float(radius)
        self.dim = self.d
        self.ambient_dim = self.d + 1
        self.injectivity_radius = np.pi * self.r
        self.spec = ManifoldSpec("round_sphere", self.d, self.r)

    def project(self, q):
        q = np.asarray(q, float)
        n = np.linalg.norm(q, axis=-1, keepdims=True)
        if np.any(np.abs(n - self.r) > self.injectivity_radius / 2):
            raise FarFromManifoldError("point outside the iota/2 tube")
        return q * (self.r / n)

    def tangent_projector(self, q):
        q = np.asarray(q, float)
        return (np.eye(self.ambient_dim)
                - np.einsum("...i,...j->...ij", q, q) / self.r**2)

    def project_jacobian(self, q):
        q = np.asarray(q, float)
        n = np.linalg.norm(q, axis=-1)[..., None, None]
        qh = q / np.linalg.norm(q, axis=-1, keepdims=True)
        return (self.r / n) * (np.eye(self.ambient_dim)
                               - np.einsum("...i,...j->...ij", qh, qh))

    def sff(self, q, v, w):
        q, v, w = (np.asarray(a, float) for a in (q, v, w))
        return -(np.sum(v * w, axis=-1)[..., None] / self.r**2) * q

    def sff_jacobian_term(self, q, v, dq, dv):
        return -(np.sum(v * v, -1)[..., None] * dq
                 + 2 * np.sum(v * dv, -1)[..., None] * q) / self.r**2

    def tangent_projector_derivative(self, q, w, dq):
        return -(np.sum(q * w, -1)[..., None] * dq
                 + np.sum(dq * w, -1)[..., None] * q) / self.r**2

    def curvature(self, q, x, y, z):
        x, y, z = (np.asarray(a, float) for a in (x, y, z))
        return (np.sum(y * z, -1)[..., None] * x
                - np.sum(x * z, -1)[..., None] * y) / self.r**2

    def exp(self, q, xi):
        q, xi = np.asarray(q, float), np.asarray(xi, float)
        n = np.linalg.norm(xi, axis=-1, keepdims=True)
        small = n < 1e-300
        nsafe = np.where(small, 1.0, n)
        phi = n / self.r
        return np.where(
            small, q,
            q * np.cos(phi) + (xi / nsafe) * self.r * np.sin(phi))

    def transport(self, q, xi):
        q, xi = np.asarray(q, float), np.asarray(xi, float)
        n = np.linalg.norm(xi, axis=-1, keepdims=True)
        I = np.broadcast_to(
            np.eye(self.ambient_dim),
            np.broadcast_shapes(q.shape, xi.shape)[:-1]
            + (self.ambient_dim, self.ambient_dim)).copy()
        mask = (n[..., 0] > 1e-300)
        if not np.any(mask):
            return I
        a = q / self.r
        b = np.where(n > 1e-300, xi / np.where(n > 1e-300, n, 1.0), 0.0)
        phi = (n / self.r)[..., None]
        aa = np.einsum("...i,...j->...ij", a, a)
        bb = np.einsum("...i,...j->...ij", b, b)
        ba = np.einsum("...i,...j->...ij", b, a)
        ab = np.einsum("...i,...j->...ij", a, b)
        R = (np.eye(self.ambient_dim)
             + (np.cos(phi) - 1) * (aa + bb) + np.sin(phi) * (ba - ab))
        return np.where(mask[..., None, None], R, I)

    def log(self, q, p):
        q, p = np.asarray(q, float), np.asarray(p, float)
        c = np.sum(q * p, -1, keepdims=True) / self.r**2
        c = np.clip(c, -1.0, 1.0)
        perp = p - c * q
        np_ = np.linalg.norm(perp, axis=-1, keepdims=True)
        phi = np.arccos(c)
        if np.any(np_ < 1e-14):
            if np.any(phi[np_[..., 0] < 1e-14] > 1e-8):
                raise BeyondInjectivityRadiusError("antipodal log undefined")
        safe = np.where(np_ < 1e-300, 1.0, np_)
        return np.where(np_ < 1e-14, 0.0, (self.r * phi) * perp / safe)

    def frame(self, q):
        q = np.asarray(q, float)
        if q.ndim > 1:
            raise NotImplementedError("sphere frame is per-point")
        # Gram-Schmidt of the standard basis against q, deterministic
        cols = []
        for i in range(self.ambient_dim):
            v = np.zeros(self.ambient_dim)
            v[i] = 1.0
            v = v - (q @ v / self.r**2) * q
            for c in cols:
                v = v - (c @ v) * c
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                cols.append(v / nv)
            if len(cols) == self.dim:
                break
        return np.stack(cols, axis=-1)

    def _e1(self, q, xi):
        """Jacobi-field closed form: parallel part transported, normal part
        scaled by cos(|xi|/r)."""
        T = self.transport(q, xi)
        n = np.linalg.norm(xi)
        if n < 1e-300:
            return T
        b = xi / n
        phi = n / self.r
        P_par = np.outer(b, b)
        P_tan = self.tangent_projector(q)
        P_perp = P_tan - P_par
        return T @ (P_par + np.cos(phi) * P_perp)

    def _e2(self, q, xi):
        T = self.transport(q, xi)
        n = np.linalg.norm(xi)
        if n < 1e-300:
            return T
        b = xi / n
        phi = n / self.r
        P_par = np.outer(b, b)
        P_tan = self.tangent_projector(q)
        P_perp = P_tan - P_par
        return T @ (P_par + (np.sin(phi) / phi) * P_perp)

    def _raw_random(self, rng, shape):
        g = rng.standard_normal(shape)
        return self.r * g / np.linalg.norm(g, axis=-1, keepdims=True)

    def _dlog_correction(self, base, xi):
        """Inverse Jacobi factor: parallel part kept, normal part scaled by
        phi/sin(phi)."""
        base = np.asarray(base, float)
        xi = np.asarray(xi, float)
        shape = np.broadcast_shapes(base.shape, xi.shape)
        I = np.broadcast_to(np.eye(shape[-1]),
                            shape[:-1] + (shape[-1], shape[-1])).copy()
        n = np.linalg.norm(xi, axis=-1)
        mask = n > 1e-14
        if not np.any(mask):
            return I
        nsafe = np.where(mask, n, 1.0)
        b = xi / nsafe[..., None]
        phi = n / self.r
        P_par = np.einsum("...i,...j->...ij", b, b)
        P_tan = self.tangent_projector(np.broadcast_to(base, shape))
        P_perp = P_tan - P_par
        fac = np.where(mask, phi / np.where(mask, np.sin(phi), 1.0), 1.0)
        C = P_par + fac[..., None, None] * P_perp
        return np.where(mask[..., None, None], C, I)

