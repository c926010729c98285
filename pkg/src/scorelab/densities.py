"""Target densities p(x) = exp(-u(x) + a(x)) and their assumption metadata.

Three families are supported:

* ``GaussianMixtureDensity`` -- closed-form tractable test family,
* ``PerturbedLogConcaveDensity`` -- strongly convex potential u plus a
  Hoelder perturbation a, both supplied as vectorized callables,
* ``CompactDensity`` -- log-density defined on a convex box or ball,
  tagged MINUS_INF outside.

All densities are unnormalized: every downstream formula consumes ratios in
which the normalization cancels.  Evaluators take ``(n, d)`` arrays and are
pure, so they are safe for concurrent use.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, UnsupportedError

__all__ = [
    "MINUS_INF",
    "AssumptionProfile",
    "Box",
    "Ball",
    "GaussianMixtureDensity",
    "PerturbedLogConcaveDensity",
    "CompactDensity",
    "ValidationReport",
    "log_density_unnormalized",
    "validate_assumptions",
    "standard_gaussian",
    "isotropic_gaussian",
    "gaussian_1d",
    "two_bump_mixture",
    "uniform_box",
    "QuadraticPotential",
    "QuarticBoundedPotential",
    "holder_cusp",
    "cosine_perturbation",
    "zero_perturbation",
    "holder_cusp_density",
    "bounded_curvature_density",
    "smooth_perturbed_density",
]


class _MinusInf:
    """Tagged stand-in for log-density outside a compact support.

    Deliberately not a float: quadrature and samplers branch on it
    explicitly instead of propagating -inf through arithmetic.
    """

    _singleton = None

    def __new__(cls):
        if cls._singleton is None:
            cls._singleton = super().__new__(cls)
        return cls._singleton

    def __repr__(self):
        return "MINUS_INF"


MINUS_INF = _MinusInf()


def _as_points(x, dim=None):
    """Promote x to an (n, d) float array; reject non-finite input."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise InputError(f"points must be at most 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("non-finite coordinates in input point(s)")
    if dim is not None and arr.shape[1] != dim:
        raise InputError(f"expected dimension {dim}, got {arr.shape[1]}")
    return arr


# ---------------------------------------------------------------------------
# Assumption metadata
# ---------------------------------------------------------------------------

_CONDITION2 = ("compact", "bounded_curvature", "bounded_a")
_SUPPORTS = ("full", "compact_convex")


@dataclass(frozen=True)
class AssumptionProfile:
    """Declared regularity of a target density.

    alpha: strong-convexity lower bound on the Hessian of u.
    beta/holder_K: Hoelder exponent and constant of the perturbation a.
    curvature_A: optional upper bound on the Hessian of u.
    condition2: which structural branch holds (exactly one).
    """

    alpha: float
    beta: float
    holder_K: float = 1.0
    curvature_A: Optional[float] = None
    support: str = "full"
    condition2: str = "bounded_a"

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise InputError(f"beta must be > 0, got {self.beta}")
        if not self.holder_K >= 1:
            raise InputError(f"holder_K must be >= 1, got {self.holder_K}")
        if self.curvature_A is not None and self.curvature_A < self.alpha:
            raise InputError(
                f"curvature_A={self.curvature_A} must dominate alpha={self.alpha}")
        if self.support not in _SUPPORTS:
            raise InputError(f"support must be one of {_SUPPORTS}, got {self.support!r}")
        if self.condition2 not in _CONDITION2:
            raise InputError(
                f"condition2 must be one of {_CONDITION2}, got {self.condition2!r}")


# ---------------------------------------------------------------------------
# Convex support descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InputError("box lo/hi must be 1-d arrays of equal length")
        if np.any(hi <= lo):
            raise InputError("box must have hi > lo on every axis")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def diameter(self):
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((X >= lo) & (X <= hi), axis=-1)

    def inflate(self, factor):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo) * factor
        return Box(tuple(c - h), tuple(c + h))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.ndim != 1:
            raise InputError("ball center must be a 1-d array")
        if not self.radius > 0:
            raise InputError("ball radius must be > 0")
        object.__setattr__(self, "center", tuple(c))

    @property
    def dim(self):
        return len(self.center)

    @property
    def diameter(self):
        return 2.0 * self.radius

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X - np.asarray(self.center), axis=-1) <= self.radius

    def inflate(self, factor):
        return Ball(self.center, self.radius * factor)


# ---------------------------------------------------------------------------
# Gaussian mixtures
# ---------------------------------------------------------------------------

class GaussianMixtureDensity:
    """Finite Gaussian mixture sum_i w_i N(m_i, S_i), fully normalized."""

    def __init__(self, weights, means, covariances, label="mixture"):
        w = np.asarray(weights, dtype=float)
        m = np.asarray(means, dtype=float)
        S = np.asarray(covariances, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if S.ndim == 1:
            S = S[:, None, None]
        elif S.ndim == 2 and m.shape[1] == 1:
            S = S[:, :, None]
        if w.ndim != 1 or m.ndim != 2 or S.ndim != 3:
            raise InputError("mixture parameters have inconsistent shapes")
        k, d = m.shape
        if w.shape[0] != k or S.shape != (k, d, d):
            raise InputError("mixture parameters have inconsistent shapes")
        if np.any(w < 0):
            raise InputError("mixture weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InputError(f"mixture weights must sum to 1, got {w.sum()!r}")
        evals = np.linalg.eigvalsh(S)
        if np.any(evals <= 0):
            raise InputError("every mixture covariance must be positive definite")
        self.weights = w
        self.means = m
        self.covariances = S
        self.label = label
        self.dim = d
        self._chol = np.linalg.cholesky(S)
        self._prec = np.linalg.inv(S)
        self._logdet = np.linalg.slogdet(S)[1]

    @property
    def n_components(self):
        return len(self.weights)

    def component_logpdfs(self, X):
        """Per-component normalized Gaussian log-densities, shape (n, k)."""
        X = _as_points(X, self.dim)
        diff = X[:, None, :] - self.means[None, :, :]          # (n,k,d)
        q = np.einsum("nki,kij,nkj->nk", diff, self._prec, diff)
        return -0.5 * (q + self._logdet[None, :] + self.dim * np.log(2 * np.pi))

    def logpdf(self, X):
        comp = self.component_logpdfs(X) + np.log(self.weights)[None, :]
        mx = comp.max(axis=1)
        return mx + np.log(np.exp(comp - mx[:, None]).sum(axis=1))

    def sample(self, rng, n):
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[idx] + np.einsum("nij,nj->ni", self._chol[idx], z)

    def log_density_batch(self, X):
        return self.logpdf(X), np.ones(len(_as_points(X, self.dim)), dtype=bool)


# ---------------------------------------------------------------------------
# Perturbed log-concave densities
# ---------------------------------------------------------------------------

class QuadraticPotential:
    """u(x) = alpha * ||x||^2 / 2."""

    def __init__(self, alpha):
        self.alpha = float(alpha)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        u = 0.5 * self.alpha * np.sum(X * X, axis=1)
        grad = self.alpha * X
        hess = np.broadcast_to(self.alpha * np.eye(d), (n, d, d)).copy()
        return u, grad, hess


class QuarticBoundedPotential:
    """1-d potential u(x) = x^2/2 + x^4/(1+x^2), curvature in [1, 3.5].

    Using x^4/(1+x^2) = x^2 - 1 + 1/(1+x^2):
        u   = 3x^2/2 + 1/(1+x^2) - 1
        u'  = 3x - 2x/(1+x^2)^2
        u'' = 3 + (6x^2-2)/(1+x^2)^3
    """

    alpha = 1.0
    curvature_A = 3.5

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        x = X[:, 0]
        s = 1.0 + x * x
        u = 1.5 * x * x + 1.0 / s - 1.0
        grad = (3.0 * x - 2.0 * x / s ** 2)[:, None]
        hess = (3.0 + (6.0 * x * x - 2.0) / s ** 3)[:, None, None]
        return u, grad, hess


def holder_cusp(K, beta):
    """a(x) = K * min(1, |x_1|)^beta -- exactly beta-Hoelder with constant K."""
    def a_eval(X):
        x1 = np.abs(np.asarray(X, dtype=float)[:, 0])
        return K * np.minimum(1.0, x1) ** beta
    a_eval.kinks = (-1.0, 0.0, 1.0)
    return a_eval


def cosine_perturbation(K, freq=1.0):
    """Smooth perturbation a(x) = K * cos(freq * x_1)."""
    def a_eval(X):
        return K * np.cos(freq * np.asarray(X, dtype=float)[:, 0])
    a_eval.kinks = ()
    return a_eval


def zero_perturbation():
    def a_eval(X):
        return np.zeros(len(np.asarray(X)))
    a_eval.kinks = ()
    return a_eval


class PerturbedLogConcaveDensity:
    """p(x) = exp(-u(x) + a(x)), unnormalized.

    u_eval(X) must return (u, grad_u, hess_u) with shapes (n,), (n,d), (n,d,d);
    a_eval(X) returns (n,).  ``kinks`` lists first-coordinate locations where
    a is not smooth; 1-d quadrature splits its panels there.
    """

    def __init__(self, u_eval, a_eval, profile, dim=1, kinks=None, label="perturbed"):
        self.u_eval = u_eval
        self.a_eval = a_eval
        self.profile = profile
        self.dim = dim
        self.label = label
        if kinks is None:
            kinks = tuple(getattr(a_eval, "kinks", ()))
        self.kinks = tuple(sorted(kinks))

    def u(self, X):
        return self.u_eval(_as_points(X, self.dim))

    def a(self, X):
        return self.a_eval(_as_points(X, self.dim))

    def log_density_batch(self, X):
        X = _as_points(X, self.dim)
        u, _, _ = self.u_eval(X)
        return -u + self.a_eval(X), np.ones(len(X), dtype=bool)

    def with_zero_perturbation(self, label=None):
        """The log-concave companion exp(-u(x)), same potential, a stripped."""
        return PerturbedLogConcaveDensity(
            self.u_eval, zero_perturbation(), self.profile, dim=self.dim,
            kinks=(), label=label or f"{self.label}|a=0")


# ---------------------------------------------------------------------------
# Compactly supported densities
# ---------------------------------------------------------------------------

class CompactDensity:
    """Density supported on a convex box or ball.

    ``log_density_interior`` is evaluated only inside the support; outside,
    the density reports the tagged MINUS_INF value.
    """

    def __init__(self, support, log_density_interior=None, label="compact",
                 uniform=None):
        if not isinstance(support, (Box, Ball)):
            raise InputError("compact support must be a Box or Ball descriptor")
        if log_density_interior is None:
            log_density_interior = lambda X: np.zeros(len(np.asarray(X)))
            uniform = True if uniform is None else uniform
        self.support = support
        self.log_density_interior = log_density_interior
        self.diameter = support.diameter
        self.dim = support.dim
        self.label = label
        self.is_uniform = bool(uniform)

    def log_density_batch(self, X):
        X = _as_points(X, self.dim)
        mask = self.support.contains(X)
        vals = np.zeros(len(X))
        if mask.any():
            vals[mask] = self.log_density_interior(X[mask])
        return vals, mask

    def sample(self, rng, n):
        if not self.is_uniform:
            raise UnsupportedError(
                "exact sampling implemented only for uniform compact densities")
        if isinstance(self.support, Box):
            lo = np.asarray(self.support.lo)
            hi = np.asarray(self.support.hi)
            return rng.uniform(lo, hi, size=(n, self.dim))
        # uniform on a ball: direction times radius^(1/d)-scaled radius
        z = rng.standard_normal((n, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = self.support.radius * rng.uniform(0, 1, n) ** (1.0 / self.dim)
        return np.asarray(self.support.center) + z * r[:, None]


# ---------------------------------------------------------------------------
# Shared operations
# ---------------------------------------------------------------------------

def log_density_unnormalized(density, x):
    """-u(x) + a(x) up to an additive constant; MINUS_INF outside support."""
    X = _as_points(x, density.dim)
    if len(X) != 1:
        raise InputError("log_density_unnormalized takes a single point")
    vals, mask = density.log_density_batch(X)
    if not mask[0]:
        return MINUS_INF
    return float(vals[0])


@dataclass
class ValidationReport:
    min_hessian_eig: Optional[float] = None
    max_hessian_eig: Optional[float] = None
    holder_quotient_max: Optional[float] = None
    support_diameter: Optional[float] = None
    convexity_ok: Optional[bool] = None
    curvature_ok: Optional[bool] = None
    holder_ok: Optional[bool] = None
    worst_probe: Optional[np.ndarray] = None
    n_pairs_skipped: int = 0
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        checks = [self.convexity_ok, self.curvature_ok, self.holder_ok]
        return all(c is not False for c in checks)


def validate_assumptions(density, probes, pairs=(), tol=1e-6):
    """Sampling-based check of the declared assumption profile.

    Reports the minimum Hessian eigenvalue of u over probes (should clear
    alpha - tol), the maximum Hoelder quotient of a over point pairs (should
    stay below K + tol) and, when a curvature bound A is declared, the
    maximum Hessian eigenvalue (<= A + tol).
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.size == 0:
        raise InputError("validate_assumptions requires a nonempty probe set")

    report = ValidationReport()

    if isinstance(density, CompactDensity):
        report.support_diameter = density.diameter
        report.notes.append("compact support: curvature checks skipped")
        return report

    if isinstance(density, GaussianMixtureDensity):
        report.notes.append("mixture has no explicit (u, a) split; checks skipped")
        return report

    profile = density.profile
    _, _, hess = density.u_eval(_as_points(probes, density.dim))
    eigs = np.linalg.eigvalsh(hess)
    report.min_hessian_eig = float(eigs.min())
    report.convexity_ok = report.min_hessian_eig >= profile.alpha - tol
    if not report.convexity_ok:
        report.worst_probe = probes[int(np.argmin(eigs.min(axis=1)))]
    if profile.curvature_A is not None:
        report.max_hessian_eig = float(eigs.max())
        report.curvature_ok = report.max_hessian_eig <= profile.curvature_A + tol

    pairs = list(pairs)
    if pairs:
        xs = _as_points(np.asarray([p[0] for p in pairs]), density.dim)
        ys = _as_points(np.asarray([p[1] for p in pairs]), density.dim)
        sep = np.linalg.norm(xs - ys, axis=1)
        keep = (sep > 0) & (sep <= 1.0)
        report.n_pairs_skipped = int(np.sum(~keep))
        if report.n_pairs_skipped:
            report.notes.append(
                f"{report.n_pairs_skipped} pairs outside separation (0, 1] skipped")
        if keep.any():
            expo = min(profile.beta, 1.0)
            if profile.beta > 1:
                report.notes.append(
                    "beta > 1: quotient checked with exponent 1 (local Lipschitz)")
            qa = np.abs(density.a_eval(xs[keep]) - density.a_eval(ys[keep]))
            quot = qa / sep[keep] ** expo
            report.holder_quotient_max = float(quot.max())
            report.holder_ok = report.holder_quotient_max <= profile.holder_K + tol
    return report


# ---------------------------------------------------------------------------
# Canonical densities used throughout the test batteries
# ---------------------------------------------------------------------------

def standard_gaussian(d=1):
    return GaussianMixtureDensity(
        [1.0], np.zeros((1, d)), np.eye(d)[None, :, :], label=f"gauss{d}d")


def isotropic_gaussian(mean, var, d=None):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = len(mean) if d is None else d
    return GaussianMixtureDensity(
        [1.0], mean.reshape(1, d), (var * np.eye(d))[None, :, :],
        label=f"gauss(m={mean.tolist()},v={var})")


def gaussian_1d(mean, var):
    return isotropic_gaussian([mean], var)


def two_bump_mixture(sep=1.0, var=0.25, w=0.5):
    """Symmetric two-component 1-d mixture at +-sep."""
    return GaussianMixtureDensity(
        [w, 1.0 - w], [[-sep], [sep]], [[[var]], [[var]]],
        label=f"mix2(sep={sep},var={var})")


def uniform_box(lo=-1.0, hi=1.0):
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    return CompactDensity(Box(tuple(lo), tuple(hi)),
                          label=f"uniform[{lo.tolist()},{hi.tolist()}]")


def holder_cusp_density(beta=0.5, K=0.5, alpha=2.0):
    """u = alpha x^2/2 with alpha=2 (i.e. u = x^2), a = K min(1,|x|)^beta."""
    profile = AssumptionProfile(alpha=alpha, beta=beta, holder_K=max(K, 1.0),
                                condition2="bounded_a")
    return PerturbedLogConcaveDensity(
        QuadraticPotential(alpha), holder_cusp(K, beta), profile,
        label=f"cusp(beta={beta},K={K},alpha={alpha})")


def bounded_curvature_density(beta=0.5, K=0.5):
    """Quartic-bounded potential (1 <= u'' <= 3.5) with a Hoelder cusp."""
    pot = QuarticBoundedPotential()
    profile = AssumptionProfile(alpha=pot.alpha, beta=beta, holder_K=max(K, 1.0),
                                curvature_A=pot.curvature_A,
                                condition2="bounded_curvature")
    return PerturbedLogConcaveDensity(
        pot, holder_cusp(K, beta), profile,
        label=f"quartic(beta={beta},K={K})")


def smooth_perturbed_density(K=0.5, freq=2.0, alpha=2.0, beta=2.0):
    """Smooth (beta=2) perturbation a = K cos(freq x); no small-t blow-up."""
    profile = AssumptionProfile(alpha=alpha, beta=beta,
                                holder_K=max(K * max(1.0, freq) ** 2, 1.0),
                                condition2="bounded_a")
    return PerturbedLogConcaveDensity(
        QuadraticPotential(alpha), cosine_perturbation(K, freq), profile,
        label=f"smooth(K={K},freq={freq})")
