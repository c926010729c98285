"""Forward-process schedules, closed-form marginals and OU normalization.

The general forward SDE

    dX_t = -lam * gamma_t * X_t dt + sqrt(2 gamma_t) * sigma dB_t,  X_0 ~ p,

has marginal law  X_t ~ e^{-lam u_t} X_0 + sigma_t Z  with
u_t = int_0^t gamma_s ds and sigma_t^2 = (sigma^2/lam)(1 - e^{-2 lam u_t}).
It is a time-reparameterization and space-dilation of the normalized OU
process dX = -X dt + sqrt(2) dB; all analysis runs in normalized time tau
and maps back through :func:`normalize_time`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .densities import (CompactDensity, GaussianMixtureDensity,
                        PerturbedLogConcaveDensity)
from .errors import InputError, UnsupportedError
from . import rng as rngmod

__all__ = [
    "Schedule1D",
    "ForwardSchedule",
    "accumulate",
    "normalize_time",
    "marginal_mixture",
    "sample_target",
    "sample_marginal",
]


class Schedule1D:
    """Nonnegative scalar schedule of time: constant, linear, interpolation
    table, or a generic callable (integrated by adaptive Simpson)."""

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params
        if kind == "constant":
            self._c = float(params["value"])
            if self._c < 0:
                raise InputError("constant schedule must be nonnegative")
        elif kind == "linear":
            self._c0 = float(params.get("c0", 0.0))
            self._c1 = float(params.get("c1", 0.0))
        elif kind == "table":
            knots = np.asarray(params["knots"], dtype=float)
            if knots.ndim != 2 or knots.shape[1] != 2 or len(knots) < 2:
                raise InputError("table schedule needs >= 2 (t, value) knots")
            if np.any(np.diff(knots[:, 0]) <= 0):
                raise InputError("table knots must have increasing times")
            if np.any(knots[:, 1] < 0):
                raise InputError("table schedule must be nonnegative")
            self._kt = knots[:, 0]
            self._kv = knots[:, 1]
        elif kind == "callable":
            self._fn = params["fn"]
        else:
            raise InputError(f"unknown schedule kind {kind!r}")

    @classmethod
    def wrap(cls, obj) -> "Schedule1D":
        if isinstance(obj, Schedule1D):
            return obj
        if isinstance(obj, (int, float)):
            return cls("constant", value=float(obj))
        if callable(obj):
            return cls("callable", fn=obj)
        raise InputError(f"cannot interpret {obj!r} as a schedule")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(self._c, t.shape).copy() if t.ndim else self._c
        if self.kind == "linear":
            return self._c0 + self._c1 * t
        if self.kind == "table":
            return np.interp(t, self._kt, self._kv)
        return self._fn(t)

    def integral(self, t, tol=1e-10):
        """u_t = int_0^t of the schedule; exact for the analytic kinds."""
        if t < 0:
            raise InputError(f"schedule integral needs t >= 0, got {t}")
        if self.kind == "constant":
            return self._c * t
        if self.kind == "linear":
            return self._c0 * t + 0.5 * self._c1 * t * t
        if self.kind == "table":
            grid = np.concatenate([[0.0], self._kt[(self._kt > 0) & (self._kt < t)], [t]])
            vals = self(grid)
            return float(np.trapezoid(vals, grid))
        return _adaptive_simpson(self._fn, 0.0, t, tol)


def _adaptive_simpson(f, a, b, tol, depth=50):
    def simp(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def rec(lo, hi, flo, fmid, fhi, whole, eps, d):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simp(lo, mid, flo, flm, fmid)
        right = simp(mid, hi, fmid, frm, fhi)
        if d <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (rec(lo, mid, flo, flm, fmid, left, eps / 2.0, d - 1)
                + rec(mid, hi, fmid, frm, fhi, right, eps / 2.0, d - 1))

    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simp(a, b, fa, fm, fb)
    return rec(a, b, fa, fm, fb, whole, tol, depth)


@dataclass(frozen=True)
class ForwardSchedule:
    """(lam, sigma, gamma_t, b_t) of the general forward/backward pair."""

    lam: float = 1.0
    sigma: float = 1.0
    gamma: Union[Schedule1D, float, Callable] = 1.0
    b: Union[Schedule1D, float, Callable] = 1.0
    T: float = 5.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InputError(f"lam must be > 0, got {self.lam}")
        if not self.sigma > 0:
            raise InputError(f"sigma must be > 0, got {self.sigma}")
        if not self.T > 0:
            raise InputError(f"horizon T must be > 0, got {self.T}")
        object.__setattr__(self, "gamma", Schedule1D.wrap(self.gamma))
        object.__setattr__(self, "b", Schedule1D.wrap(self.b))


def accumulate(schedule: ForwardSchedule, t: float):
    """(u_t, sigma_t) of the closed-form marginal law at time t."""
    if t < 0:
        raise InputError(f"time must be >= 0, got {t}")
    if t > schedule.T:
        raise InputError(f"time {t} exceeds the schedule horizon T={schedule.T}")
    u_t = schedule.gamma.integral(t)
    var = (schedule.sigma ** 2 / schedule.lam) * (-math.expm1(-2.0 * schedule.lam * u_t))
    return u_t, math.sqrt(max(var, 0.0))


def normalize_time(schedule: ForwardSchedule, t: float):
    """Map schedule time t to (tau, scale) on the normalized OU process.

    The law of the general forward process at time t equals the scale-dilated
    law of the normalized OU process at time tau:

        e^{-lam u_t} X_0 + sigma_t Z  =d  scale * (e^{-tau} X_0 + sqrt(1-e^{-2tau}) Z)

    Matching the X_0 coefficient and the noise variance gives

        tau   = 0.5 * log(1 + sigma_t^2 e^{2 lam u_t}),
        scale = e^{tau - lam u_t}.
    """
    u_t, sigma_t = accumulate(schedule, t)
    lu = schedule.lam * u_t
    tau = 0.5 * math.log1p(sigma_t ** 2 * math.exp(2.0 * lu))
    scale = math.exp(tau - lu)
    return tau, scale


def marginal_mixture(density: GaussianMixtureDensity, tau: float):
    """Mixture marginal at normalized OU time tau.

    Component (w, m, S) maps to (w, e^{-tau} m, e^{-2tau} S + (1-e^{-2tau}) Id).
    """
    if tau < 0:
        raise InputError(f"normalized time must be >= 0, got {tau}")
    c = math.exp(-tau)
    v = -math.expm1(-2.0 * tau)
    d = density.dim
    means = c * density.means
    covs = c * c * density.covariances + v * np.eye(d)[None, :, :]
    return GaussianMixtureDensity(density.weights, means, covs,
                                  label=f"{density.label}@tau={tau:g}")


# ---------------------------------------------------------------------------
# Exact sampling of the target and its OU marginals
# ---------------------------------------------------------------------------

def _perturbed_1d_sampler(density: PerturbedLogConcaveDensity, n, rng):
    """Inverse-CDF sampling for 1-d perturbed densities on a dense grid.

    The grid spans +-(8/sqrt(alpha)) around the origin where the declared
    strong convexity confines essentially all mass; the CDF is built by
    trapezoid integration of the unnormalized density.
    """
    if density.dim != 1:
        raise UnsupportedError("exact sampling of perturbed densities is 1-d only")
    L = 8.0 / math.sqrt(density.profile.alpha)
    grid = np.linspace(-L, L, 20001)
    logp, _ = density.log_density_batch(grid[:, None])
    p = np.exp(logp - logp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    u = rng.uniform(0.0, 1.0, n)
    return np.interp(u, cdf, grid)[:, None]


def sample_target(density, n, rng):
    """Exact samples of the target law p."""
    if isinstance(density, (GaussianMixtureDensity, CompactDensity)):
        return density.sample(rng, n)
    if isinstance(density, PerturbedLogConcaveDensity):
        return _perturbed_1d_sampler(density, n, rng)
    raise UnsupportedError(f"no exact sampler for {type(density).__name__}")


def sample_marginal(density, tau, n, seed=0, rng=None):
    """Samples of the OU marginal p_tau via X = e^{-tau} X_0 + sqrt(1-e^{-2tau}) Z."""
    if tau < 0:
        raise InputError(f"normalized time must be >= 0, got {tau}")
    if rng is None:
        rng = rngmod.spawn(seed, 0xF0)
    x0 = sample_target(density, n, rng)
    z = rng.standard_normal(x0.shape)
    return math.exp(-tau) * x0 + math.sqrt(-math.expm1(-2.0 * tau)) * z
