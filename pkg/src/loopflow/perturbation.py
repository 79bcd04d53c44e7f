"""Potentials on the loop space: geometric closed forms, localized bump
perturbations, and weighted linear combinations.

Every perturbation exposes ``eval`` (a real number per loop), ``gradient``
(the L^2 gradient as a tangent field) and ``hessian_apply`` (the covariant
Hessian applied to a field).  Geometric potentials additionally provide
the ambient Jacobian of their gradient field, used by the trajectory
Newton corrector.
"""

from __future__ import annotations

import numpy as np

from .loopspace import LoopField, constant_loop, heat_residual, loop_distance

FD_STEP = 1e-5


# -- smooth cutoffs ----------------------------------------------------------


def _bump_f(s):
    s = np.asarray(s, float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _smoothstep(z, lo, hi):
    """C^inf transition: 1 for z <= lo, 0 for z >= hi."""
    z = np.asarray(z, float)
    width = hi - lo
    up = _bump_f((hi - z) / width)
    down = _bump_f((z - lo) / width)
    with np.errstate(invalid="ignore"):
        val = np.where(z <= lo, 1.0, np.where(z >= hi, 0.0, up / (up + down)))
    return val


def rho_cutoff(u):
    """Plateau 1 on [-1, 1], support [-4, 4], max slope below 1."""
    return _smoothstep(np.abs(u), 1.0, 4.0)


def rho_cutoff_prime(u, h=1e-7):
    return (rho_cutoff(np.asarray(u) + h) - rho_cutoff(np.asarray(u) - h)) / (2 * h)


class CutoffPair:
    """The radial cutoff and the injectivity-radius cutoff together."""

    def __init__(self, iota):
        self.iota = float(iota)

    def rho(self, u):
        return rho_cutoff(u)

    def beta(self, u):
        return _smoothstep(np.abs(u), (self.iota / 2) ** 2, self.iota**2)

    def beta_prime(self, u, h=1e-8):
        u = np.asarray(u, float)
        return (self.beta(u + h) - self.beta(u - h)) / (2 * h)


# -- geometric potential catalogue -------------------------------------------


class Potential:
    """Closed-form function of an ambient point, with tangent gradient."""

    def value(self, points):
        raise NotImplementedError

    def gradient(self, points):
        raise NotImplementedError

    def hessian_apply(self, points, vecs):
        raise NotImplementedError

    def grad_jacobian(self, points):
        raise NotImplementedError


class ZeroPotential(Potential):
    def value(self, points):
        return np.zeros(points.shape[:-1])

    def gradient(self, points):
        return np.zeros_like(points)

    def hessian_apply(self, points, vecs):
        return np.zeros_like(vecs)

    def grad_jacobian(self, points):
        d = points.shape[-1]
        return np.zeros(points.shape[:-1] + (d, d))


class ConstantPotential(Potential):
    def __init__(self, level):
        self.level = float(level)

    def value(self, points):
        return np.full(points.shape[:-1], self.level)

    def gradient(self, points):
        return np.zeros_like(points)

    def hessian_apply(self, points, vecs):
        return np.zeros_like(vecs)

    def grad_jacobian(self, points):
        d = points.shape[-1]
        return np.zeros(points.shape[:-1] + (d, d))


class AngleCosine(Potential):
    """Sum over angular factors of eps_f cos(2 pi m_f q_f + phase_f), where
    q_f in [0, 1) is the normalized arc coordinate of factor f.

    Works on the circle (one factor) and the flat torus (m factors).
    """

    def __init__(self, manifold, amplitudes, frequencies=None, phases=None):
        self.manifold = manifold
        kind = manifold.spec.kind
        if kind == "circle":
            self.n_factors = 1
            self.radius = manifold.r
        elif kind == "flat_torus":
            self.n_factors = manifold.m
            self.radius = manifold.r
        else:
            raise ValueError("AngleCosine needs an angular manifold")
        self.L = 2 * np.pi * self.radius  # factor circumference
        self.eps = np.broadcast_to(
            np.asarray(amplitudes, float), (self.n_factors,)).copy()
        self.m = np.broadcast_to(
            np.asarray(frequencies if frequencies is not None else 1, float),
            (self.n_factors,)).copy()
        self.phase = np.broadcast_to(
            np.asarray(phases if phases is not None else 0.0, float),
            (self.n_factors,)).copy()

    def _blocks(self, points):
        return np.asarray(points, float).reshape(
            *np.shape(points)[:-1], self.n_factors, 2)

    def _theta(self, points):
        b = self._blocks(points)
        return np.arctan2(b[..., 1], b[..., 0])  # (..., n_factors)

    def _fprimes(self, theta):
        # f(arc) = eps cos(m theta + phase); arc = r theta
        arg = self.m * theta + self.phase
        w = self.m / self.radius  # d(m theta)/d(arc)
        f = self.eps * np.cos(arg)
        f1 = -self.eps * np.sin(arg) * w
        f2 = -self.eps * np.cos(arg) * w**2
        return f, f1, f2

    def value(self, points):
        f, _, _ = self._fprimes(self._theta(points))
        return np.sum(f, axis=-1)

    def _factor_tangents(self, points):
        b = self._blocks(points)
        tau = np.stack([-b[..., 1], b[..., 0]], -1)
        tau = tau / np.linalg.norm(tau, axis=-1, keepdims=True)
        return tau  # (..., n_factors, 2)

    def gradient(self, points):
        theta = self._theta(points)
        _, f1, _ = self._fprimes(theta)
        tau = self._factor_tangents(points)
        g = f1[..., None] * tau
        return g.reshape(np.shape(points))

    def hessian_apply(self, points, vecs):
        theta = self._theta(points)
        _, _, f2 = self._fprimes(theta)
        tau = self._factor_tangents(points)
        vb = self._blocks(vecs)
        comp = np.sum(vb * tau, axis=-1)  # (..., n_factors)
        out = (f2 * comp)[..., None] * tau
        return out.reshape(np.shape(vecs))

    def grad_jacobian(self, points):
        """Ambient Jacobian of the gradient field, block diagonal."""
        b = self._blocks(points)
        theta = self._theta(points)
        _, f1, f2 = self._fprimes(theta)
        rho2 = np.sum(b * b, axis=-1)  # squared block radius
        rho = np.sqrt(rho2)
        w = np.stack([-b[..., 1], b[..., 0]], -1)  # (..., nf, 2)
        grad_theta = w / rho2[..., None]
        # the gradient field is f1(theta) w / rho; d f1/d theta = r f2
        Jw = np.array([[0.0, -1.0], [1.0, 0.0]])
        r = self.radius
        blocks = (
            (r * f2)[..., None, None]
            * np.einsum("...i,...j->...ij", w / rho[..., None], grad_theta)
            + f1[..., None, None]
            * (Jw / rho[..., None, None]
               - np.einsum("...i,...j->...ij", w, b)
               / (rho**3)[..., None, None]))
        shape = np.shape(points)
        d = shape[-1]
        J = np.zeros(shape[:-1] + (d, d))
        for f in range(self.n_factors):
            J[..., 2 * f:2 * f + 2, 2 * f:2 * f + 2] = blocks[..., f, :, :]
        return J


class AmbientLinear(Potential):
    """V(p) = <c, p>; on the round sphere this is a height potential."""

    def __init__(self, manifold, direction):
        self.manifold = manifold
        self.c = np.asarray(direction, float)

    def value(self, points):
        return points @ self.c

    def gradient(self, points):
        return self.manifold.project_tangent(
            points, np.broadcast_to(self.c, np.shape(points)))

    def hessian_apply(self, points, vecs):
        r2 = self.manifold.r ** 2
        return -(points @ self.c / r2)[..., None] * vecs

    def grad_jacobian(self, points):
        r2 = self.manifold.r ** 2
        d = points.shape[-1]
        pc = (points @ self.c)[..., None, None]
        return -(pc * np.eye(d)
                 + np.einsum("...i,j->...ij", points, self.c)) / r2


# -- perturbations on the loop space ------------------------------------------


class Perturbation:
    def eval(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian_apply(self, x, xi):
        """Default: transported centered difference of the gradient along
        exp_x(tau xi)."""
        return hessian_fd(self, x, xi)

    def grad_jacobian(self, x):
        raise NotImplementedError(
            f"{type(self).__name__} has no closed-form gradient Jacobian")


class GeometricPerturbation(Perturbation):
    """Integral over the loop of a closed-form pointwise potential."""

    def __init__(self, potential):
        self.potential = potential

    def eval(self, x):
        return float(np.mean(self.potential.value(x.points)))

    def gradient(self, x):
        return LoopField(x, self.potential.gradient(x.points))

    def hessian_apply(self, x, xi):
        return LoopField(x, self.potential.hessian_apply(x.points, xi.vectors))

    def grad_jacobian(self, x):
        return self.potential.grad_jacobian(x.points)


ZERO = GeometricPerturbation(ZeroPotential())


class BumpPerturbation(Perturbation):
    """Localized perturbation: radial cutoff in L^2 distance from a center
    loop times the pairing of the pointwise logarithm with a direction
    field, itself cut off at the injectivity radius."""

    def __init__(self, center, direction, k):
        self.center = center
        self.direction = direction
        self.k = int(k)
        self.cutoffs = CutoffPair(center.manifold.injectivity_radius)
        if k < 1:
            raise ValueError("k must be a positive integer")

    @property
    def support_radius(self):
        """The L^2 distance beyond which the perturbation vanishes."""
        return 2.0 / self.k

    def _radial(self, x):
        d2 = loop_distance(x, self.center, "L2") ** 2
        return d2, self.cutoffs.rho(self.k**2 * d2)

    def _pointwise(self, x):
        """beta(|xi|^2) <xi, eta> per sample, with xi = log_center(x)."""
        mfd = x.manifold
        xi = mfd.log(self.center.points, x.points)  # in T_{center}
        n2 = np.sum(xi * xi, axis=-1)
        beta = self.cutoffs.beta(n2)
        pair = np.sum(xi * self.direction.vectors, axis=-1)
        return xi, n2, beta, pair

    def eval(self, x):
        d2, radial = self._radial(x)
        if radial == 0.0:
            return 0.0
        _, _, beta, pair = self._pointwise(x)
        return float(radial * np.mean(beta * pair))

    def eval_inner(self, x):
        """The integral factor alone (without the radial cutoff)."""
        _, _, beta, pair = self._pointwise(x)
        return float(np.mean(beta * pair))

    def gradient(self, x):
        mfd = x.manifold
        d2, radial = self._radial(x)
        if radial == 0.0 and rho_cutoff_prime(self.k**2 * d2) == 0.0:
            return LoopField(x, np.zeros_like(x.points))
        xi, n2, beta, pair = self._pointwise(x)
        inner = float(np.mean(beta * pair))
        # chain rule through the squared L^2 distance
        rp = float(rho_cutoff_prime(self.k**2 * d2)) * self.k**2
        term1 = 2 * rp * inner * mfd.project_tangent(
            x.points, x.points - self.center.points)
        # pointwise gradient of beta(|xi|^2) <xi, eta>
        L = mfd.dlog(self.center.points, x.points)  # T_x -> T_center
        w = (2 * self.cutoffs.beta_prime(n2) * pair)[..., None] * xi \
            + beta[..., None] * self.direction.vectors
        term2 = radial * np.einsum("...ji,...j->...i", L, w)
        return LoopField(x, term1 + term2)


class ComboPerturbation(Perturbation):
    """Weighted sum of generators with monotone weight constants.

    The weighted-norm constants default to 1 per term; use
    ``assign_constants`` to derive them from empirical bounds.
    """

    def __init__(self, terms, constants=None):
        self.terms = [(float(lam), gen) for lam, gen in terms]
        if constants is None:
            constants = [1.0] * len(self.terms)
        constants = [float(c) for c in constants]
        if any(c <= 0 for c in constants):
            raise ValueError("constants must be positive")
        if any(b < a for a, b in zip(constants, constants[1:])):
            raise ValueError("constants must be nondecreasing")
        self.constants = constants

    @property
    def norm(self):
        return sum(abs(lam) * c
                   for (lam, _), c in zip(self.terms, self.constants))

    def eval(self, x):
        return sum(lam * gen.eval(x) for lam, gen in self.terms)

    def gradient(self, x):
        out = np.zeros_like(x.points)
        for lam, gen in self.terms:
            out += lam * gen.gradient(x).vectors
        return LoopField(x, out)

    def hessian_apply(self, x, xi):
        out = np.zeros_like(xi.vectors)
        for lam, gen in self.terms:
            out += lam * gen.hessian_apply(x, xi).vectors
        return LoopField(x, out)

    def grad_jacobian(self, x):
        d = x.points.shape[-1]
        out = np.zeros(x.points.shape[:-1] + (d, d))
        for lam, gen in self.terms:
            out += lam * gen.grad_jacobian(x)
        return out


class SumPerturbation(Perturbation):
    """Plain sum V + v, used when flowing a perturbed functional."""

    def __init__(self, *parts):
        self.parts = list(parts)

    def eval(self, x):
        return sum(p.eval(x) for p in self.parts)

    def gradient(self, x):
        out = np.zeros_like(x.points)
        for p in self.parts:
            out += p.gradient(x).vectors
        return LoopField(x, out)

    def hessian_apply(self, x, xi):
        out = np.zeros_like(xi.vectors)
        for p in self.parts:
            out += p.hessian_apply(x, xi).vectors
        return LoopField(x, out)

    def grad_jacobian(self, x):
        d = x.points.shape[-1]
        out = np.zeros(x.points.shape[:-1] + (d, d))
        for p in self.parts:
            out += p.grad_jacobian(x)
        return out


# -- generic tools -------------------------------------------------------------


def hessian_fd(V, x, xi, step=FD_STEP):
    """Covariant Hessian via transported centered differences of the
    gradient along exp_x(tau xi)."""
    mfd = x.manifold
    vec = xi.vectors
    xp = x.exp(step * vec)
    xm = x.exp(-step * vec)
    gp = V.gradient(xp).vectors
    gm = V.gradient(xm).vectors
    Tp = mfd.transport(x.points, step * vec)
    Tm = mfd.transport(x.points, -step * vec)
    gp0 = np.einsum("...ji,...j->...i", Tp, gp)  # pull back with transpose
    gm0 = np.einsum("...ji,...j->...i", Tm, gm)
    return LoopField(x, (gp0 - gm0) / (2 * step))


def v0_bounds(V, sample_loops):
    """Empirical sup |V| and sup of the pointwise gradient norm."""
    if not sample_loops:
        raise ValueError("nonempty sample required")
    sup_v = max(abs(V.eval(x)) for x in sample_loops)
    sup_g = max(V.gradient(x).sup() for x in sample_loops)
    return sup_v, sup_g


def assign_constants(generators, sample_loops):
    """Monotone dominating weight constants: empirical (V0) bounds rounded
    up to the next power of two, enforced nondecreasing."""
    consts = []
    running = 1.0
    for gen in generators:
        sv, sg = v0_bounds(gen, sample_loops)
        c = max(1.0, 2.0 ** np.ceil(np.log2(max(sv + sg, 1e-30))))
        running = max(running, c)
        consts.append(running)
    return consts


# -- admissibility machinery ---------------------------------------------------


def critical_gap(critical_values, a, tol_reg=1e-9):
    """Half the distance from a to the neighboring critical values.

    Returns (c_low, c_high, gap).  When no critical value lies above a the
    mirror value a + (a - c_low) is used, and symmetrically below.
    """
    from .errors import RegularValueError

    vals = sorted(critical_values)
    if not vals:
        raise RegularValueError("no critical values supplied")
    if min(abs(v - a) for v in vals) < tol_reg:
        raise RegularValueError(f"{a} is a critical value within {tol_reg}")
    below = [v for v in vals if v < a]
    above = [v for v in vals if v > a]
    if below:
        c_low = max(below)
        c_high = min(above) if above else a + (a - c_low)
    else:
        c_high = min(above)
        c_low = a - (c_high - a)
    gap = 0.5 * min(a - c_low, c_high - a)
    return c_low, c_high, gap


def admissible_radius(V, a, crit, U_radius, probe_loops, tol_reg=1e-9):
    """The safe perturbation radius: half the minimum of the critical-value
    gap and the smallest off-neighborhood gradient norm among probes.

    ``crit`` is a sequence of objects with ``action`` and ``loop``
    attributes.  Probes inside the L^2 neighborhood of radius U_radius
    around any critical loop, or above the upper level, are skipped.  The
    gradient infimum is a finite-sample upper estimate.
    """
    values = [c.action for c in crit]
    c_low, c_high, gap = critical_gap(values, a, tol_reg)
    kappa = np.inf
    used = 0
    for gamma in probe_loops:
        from .loopspace import action as loop_action

        if loop_action(gamma, V) >= c_high:
            continue
        if any(loop_distance(gamma, c.loop, "L2") <= U_radius for c in crit):
            continue
        used += 1
        kappa = min(kappa, LoopField(gamma, heat_residual(gamma, V).vectors).l2())
    r = 0.5 * min(gap, kappa)
    return {
        "delta": gap,
        "kappa": kappa,
        "kappa_is_upper_estimate": True,
        "probes_used": used,
        "c_low": c_low,
        "c_high": c_high,
        "radius": r,
    }


def check_sublevel_inclusions(V, v, a, sample_loops, critical_values,
                              tol_reg=1e-9):
    """Pointwise verification of the sublevel inclusion chain on a sample.

    Checks, for each sampled loop, the implications between sublevels of
    the unperturbed and perturbed action at the five levels
    c_low < a- < a < a+ < c_high.  Failures are reported, not raised.
    """
    from .loopspace import action as loop_action

    c_low, c_high, gap = critical_gap(critical_values, a, tol_reg)
    a_minus, a_plus = a - gap, a + gap
    rules = [
        ("low<=c_low  implies perturbed<=a-", c_low, a_minus, False),
        ("perturbed<=a-  implies base<=a", a_minus, a, True),
        ("base<=a  implies perturbed<=a+", a, a_plus, False),
        ("perturbed<=a+  implies base<c_high", a_plus, c_high, True),
        ("base<=a-  implies perturbed<=a", a_minus, a, False),
        ("perturbed<=a  implies base<=a+", a, a_plus, True),
    ]
    failures = []
    checked = 0
    for idx, gamma in enumerate(sample_loops):
        s_base = loop_action(gamma, V)
        s_pert = s_base - v.eval(gamma)  # adding v to V subtracts from S
        checked += 1
        for name, lhs_level, rhs_level, pert_first in rules:
            lhs = s_pert if pert_first else s_base
            rhs = s_base if pert_first else s_pert
            if lhs <= lhs_level and not (rhs <= rhs_level):
                failures.append({
                    "rule": name, "loop_index": idx,
                    "base_action": s_base, "perturbed_action": s_pert,
                })
    return {
        "checked": checked,
        "failures": failures,
        "passed": not failures,
        "delta": gap,
        "levels": {"c_low": c_low, "a_minus": a_minus, "a": a,
                   "a_plus": a_plus, "c_high": c_high},
    }
