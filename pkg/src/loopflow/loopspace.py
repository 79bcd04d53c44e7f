"""Discrete loops, tangent fields along them, norms, action and residual.

A loop is sampled at N equispaced parameters t_j = j/N.  The kinetic term
of the action uses the forward difference, and the residual uses the
projected three-point second difference; with this pairing the discrete
directional derivative of the action equals -<residual, xi> exactly for
tangent fields xi (summation by parts is exact on the periodic grid).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError
from .manifold import EPS_MFD, make_manifold

MIN_SAMPLES = 16


def _check_power_of_two(n):
    if n < MIN_SAMPLES or (n & (n - 1)) != 0:
        raise ValueError(f"n_samples must be a power of two >= {MIN_SAMPLES}, got {n}")


@dataclass
class DiscreteLoop:
    """N equispaced samples of a loop S^1 -> M, stored as an (N, d) array."""

    manifold: object  # a _Manifold instance
    points: np.ndarray  # (N, ambient_dim)

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        _check_power_of_two(self.n_samples)

    @property
    def n_samples(self):
        return self.points.shape[0]

    @property
    def t(self):
        return np.arange(self.n_samples) / self.n_samples

    def validate(self, eps=1e-9):
        on_m = self.manifold.project(self.points)
        err = np.max(np.linalg.norm(on_m - self.points, axis=-1))
        if err > eps:
            raise ValueError(f"loop leaves the manifold by {err:.3g}")

    def velocity(self):
        """Centered-difference t-derivative, projected to the tangent."""
        p = self.points
        n = self.n_samples
        d = (np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)) * (n / 2.0)
        return self.manifold.project_tangent(p, d)

    def second_difference(self):
        """Ambient three-point second difference, times N^2."""
        p = self.points
        n = self.n_samples
        return (np.roll(p, -1, axis=0) - 2 * p + np.roll(p, 1, axis=0)) * n**2

    def exp(self, vecs):
        """Pointwise exponential: a new loop exp_{x_j}(vecs_j)."""
        return DiscreteLoop(self.manifold, self.manifold.exp(self.points, vecs))

    def copy(self):
        return DiscreteLoop(self.manifold, self.points.copy())


@dataclass
class LoopField:
    """Tangent field along a loop, vectors[j] in T_{points[j]}M."""

    base: DiscreteLoop
    vectors: np.ndarray  # (N, ambient_dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, float)
        if self.vectors.shape != self.base.points.shape:
            raise GridMismatchError("field/loop shape mismatch")

    def l2(self):
        return float(np.sqrt(np.mean(np.sum(self.vectors**2, axis=-1))))

    def sup(self):
        return float(np.max(np.linalg.norm(self.vectors, axis=-1)))


@dataclass
class LoopNorms:
    l2: float
    lp: float
    sup: float
    w12: float
    w22: float
    p: float = 2.0


def field_norms(xi, p=2.0):
    """All norms of a LoopField at once (trapezoid quadrature in t)."""
    v = xi.vectors
    mag = np.linalg.norm(v, axis=-1)
    n = v.shape[0]
    mfd = xi.base.manifold
    dv = mfd.project_tangent(
        xi.base.points, (np.roll(v, -1, 0) - np.roll(v, 1, 0)) * (n / 2.0))
    ddv = mfd.project_tangent(
        xi.base.points, (np.roll(v, -1, 0) - 2 * v + np.roll(v, 1, 0)) * n**2)
    l2 = np.sqrt(np.mean(mag**2))
    lp = np.mean(mag**p) ** (1.0 / p)
    sup = np.max(mag)
    w12 = np.sqrt(l2**2 + np.mean(np.sum(dv**2, -1)))
    w22 = np.sqrt(w12**2 + np.mean(np.sum(ddv**2, -1)))
    return LoopNorms(float(l2), float(lp), float(sup), float(w12),
                     float(w22), p)


# -- the action functional and its L^2 gradient ----------------------------


def kinetic_energy(x):
    """(1/2) sum |forward difference|^2 / N: discrete Dirichlet energy."""
    p = x.points
    n = x.n_samples
    d = (np.roll(p, -1, axis=0) - p) * float(n)
    return 0.5 * float(np.mean(np.sum(d * d, axis=-1)))


def action(x, V):
    """S_V(x) = kinetic energy minus the perturbation value."""
    return kinetic_energy(x) - V.eval(x)


def heat_residual(x, V):
    """P(x) d_t d_t x + grad V(x): zero exactly at critical loops.

    This equals the (downhill) heat-flow velocity; the discrete action
    gradient is its negative.
    """
    curv = x.manifold.project_tangent(x.points, x.second_difference())
    return LoopField(x, curv + V.gradient(x).vectors)


def loop_distance(x, y, norm="C0"):
    """Norm of the ambient pointwise difference x - y."""
    if x.n_samples != y.n_samples or x.points.shape != y.points.shape:
        raise GridMismatchError("loops live on different grids")
    diff = np.linalg.norm(x.points - y.points, axis=-1)
    if norm == "L2":
        return float(np.sqrt(np.mean(diff**2)))
    if norm == "C0":
        return float(np.max(diff))
    if norm == "W12":
        d = (np.roll(x.points - y.points, -1, 0)
             - np.roll(x.points - y.points, 1, 0)) * (x.n_samples / 2.0)
        return float(np.sqrt(np.mean(diff**2) + np.mean(np.sum(d * d, -1))))
    raise ValueError(f"unknown norm {norm!r}")


# -- constructors -----------------------------------------------------------


def constant_loop(manifold, q, n_samples):
    return DiscreteLoop(manifold, np.tile(np.asarray(q, float), (n_samples, 1)))


def circle_geodesic(manifold, n_samples, winding=1, phase=0.0):
    """Arc-length geodesic loop on the circle (winding w, offset phase)."""
    t = np.arange(n_samples) / n_samples
    theta = 2 * np.pi * (winding * t + phase)
    return DiscreteLoop(manifold, manifold.point_of_angle(theta))


def great_circle(sphere, n_samples, axis=(0, 1)):
    """Unit-speed great circle in the coordinate plane ``axis``."""
    t = np.arange(n_samples) / n_samples
    p = np.zeros((n_samples, sphere.ambient_dim))
    p[:, axis[0]] = sphere.r * np.cos(2 * np.pi * t)
    p[:, axis[1]] = sphere.r * np.sin(2 * np.pi * t)
    return DiscreteLoop(sphere, p)


def random_smooth_loop(manifold, n_samples, rng, amplitude=0.1, modes=3):
    """Smooth random loop: low-frequency ambient Fourier noise around a
    random point, projected to M.  Amplitude is relative to the length
    scale of the manifold so the noise stays inside the projection tube.
    """
    base = manifold.random_point(rng)
    t = np.arange(n_samples) / n_samples
    p = np.tile(base, (n_samples, 1)).astype(float)
    scale = amplitude * manifold.injectivity_radius / np.pi
    for k in range(1, modes + 1):
        a = rng.standard_normal(manifold.ambient_dim) * scale / k
        b = rng.standard_normal(manifold.ambient_dim) * scale / k
        p += np.outer(np.cos(2 * np.pi * k * t), a)
        p += np.outer(np.sin(2 * np.pi * k * t), b)
    return DiscreteLoop(manifold, manifold.project(p))


def random_tangent_field(x, rng, amplitude=1.0, modes=3):
    """Smooth random tangent field along x."""
    n = x.n_samples
    t = np.arange(n) / n
    v = np.zeros_like(x.points)
    for k in range(modes + 1):
        a = rng.standard_normal(x.points.shape[1]) * amplitude / (k + 1)
        b = rng.standard_normal(x.points.shape[1]) * amplitude / (k + 1)
        v += np.outer(np.cos(2 * np.pi * k * t), a)
        v += np.outer(np.sin(2 * np.pi * k * t), b)
    return LoopField(x, x.manifold.project_tangent(x.points, v))


def winding_numbers(x):
    """Integer winding per angular factor (circle: 1 entry, torus: m)."""
    mfd = x.manifold
    kind = mfd.spec.kind
    if kind == "circle":
        theta = np.arctan2(x.points[:, 1], x.points[:, 0])
        unwrapped = np.unwrap(np.append(theta, theta[0]))
        return (int(np.rint((unwrapped[-1] - unwrapped[0]) / (2 * np.pi))),)
    if kind == "flat_torus":
        out = []
        for f in range(mfd.m):
            block = x.points[:, 2 * f:2 * f + 2]
            theta = np.arctan2(block[:, 1], block[:, 0])
            unwrapped = np.unwrap(np.append(theta, theta[0]))
            out.append(int(np.rint((unwrapped[-1] - unwrapped[0]) / (2 * np.pi))))
        return tuple(out)
    return ()  # simply connected


# -- serialization ----------------------------------------------------------


def loop_to_csv(x):
    buf = io.StringIO()
    w = csv.writer(buf)
    d = x.points.shape[1]
    w.writerow(["t"] + [f"coord_{i + 1}" for i in range(d)])
    for tj, row in zip(x.t, x.points):
        w.writerow([repr(float(tj))] + [repr(float(c)) for c in row])
    return buf.getvalue()


def loop_from_csv(text, manifold):
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(c) for c in row[1:]] for row in rows[1:]])
    return DiscreteLoop(manifold, data)
