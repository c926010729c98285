"""Backward samplers, the probability-flow transport map, and the
synchronous-coupling stability experiment.

The backward sampler integrates

    dY_s = [lam gamma_{T-s} Y_s + (sigma^2 gamma_{T-s} + b_s^2) shat_{T-s}(Y_s)] ds
           + sqrt(2) b_s dB_s,

Euler-Maruyama in sde mode, classical fourth-order Runge-Kutta when b = 0
(probability flow).  DDPM is b_s = sigma.

The transport map integrates dX_t = V(t, X_t) with
V(t, x) = (x + s(log(1/t), x)) / t from t_min to 1; in the log-time variable
l = log t the field is x + s(-l, x), which removes the 1/t stiffness, so the
integrator runs on a uniform l-grid.

The stability experiment couples two SDEs through shared Brownian increments
and shared initial points, and compares E||X_t - Xbar_t||^2 against the
Gronwall bound  t * int_0^t e^{2 int_s^t L_u du} E||a_s - abar_s||^2(Xbar_s) ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .errors import InputError, UnsupportedError
from .forward import ForwardSchedule, accumulate, sample_target
from .score import score_batch
from .tilted import QuadratureSpec

__all__ = [
    "DriftSpec",
    "Ensemble",
    "backward_sample",
    "probability_flow_map",
    "probability_flow_map_batch",
    "LipschitzEstimate",
    "lipschitz_estimate",
    "StabilityReport",
    "stability_experiment",
]

_T_FLOOR = 1e-12          # forward-time clamp for end-of-trajectory stages
_EXPLOSION_NORM = 1e8


@dataclass
class DriftSpec:
    """Drift field (s, X) -> (n, d) plus an upper bound L_s on the largest
    eigenvalue of its spatial Jacobian (from a scan envelope or closed form)."""

    drift: Callable
    onesided_profile: Callable


@dataclass
class Ensemble:
    time: float
    points: np.ndarray
    seed: int
    scheme: str
    n_steps: int
    n_excluded: int = 0


def _sample_forward_terminal(schedule, density, T, n, rng):
    """Exact law of the forward process at time T (mixtures / compact-uniform)."""
    u_T, sigma_T = accumulate(schedule, T)
    x0 = sample_target(density, n, rng)
    z = rng.standard_normal(x0.shape)
    return math.exp(-schedule.lam * u_T) * x0 + sigma_T * z


def backward_sample(schedule: ForwardSchedule, score_fn, T, n_steps, n_paths,
                    mode="sde", seed=0, density=None, init="auto",
                    dim=None) -> Ensemble:
    """Terminal ensemble of the backward sampler (Euler-Maruyama or RK4).

    ``score_fn(t, X)`` is the (approximate) score of the forward marginal in
    schedule time.  ``init='exact'`` draws Y_0 from the true forward law at T
    (requires a samplable density); ``'surrogate'`` uses the stationary
    Gaussian N(0, sigma^2/lam); ``'auto'`` prefers exact when available.
    """
    if T <= 0 or n_steps < 1 or n_paths < 1:
        raise InputError("need T > 0, n_steps >= 1, n_paths >= 1")
    if mode not in ("sde", "ode"):
        raise InputError(f"mode must be sde|ode, got {mode!r}")
    rng = rngmod.spawn(seed, 0xBAC)
    if dim is None:
        dim = density.dim if density is not None else 1
    if init == "auto":
        init = "exact" if density is not None else "surrogate"
    if init == "exact":
        if density is None:
            raise InputError("init='exact' requires a density")
        Y = _sample_forward_terminal(schedule, density, T, n_paths, rng)
    elif init == "surrogate":
        Y = rng.standard_normal((n_paths, dim)) * (schedule.sigma
                                                   / math.sqrt(schedule.lam))
    else:
        raise InputError(f"init must be auto|exact|surrogate, got {init!r}")

    dt = T / n_steps
    alive = np.ones(n_paths, dtype=bool)

    def drift(s, X):
        tf = max(T - s, _T_FLOOR)
        g = float(schedule.gamma(tf))
        bs = 0.0 if mode == "ode" else float(schedule.b(s))
        return (schedule.lam * g * X
                + (schedule.sigma ** 2 * g + bs * bs) * score_fn(tf, X))

    for k in range(n_steps):
        s = k * dt
        if mode == "ode":
            k1 = drift(s, Y)
            k2 = drift(s + 0.5 * dt, Y + 0.5 * dt * k1)
            k3 = drift(s + 0.5 * dt, Y + 0.5 * dt * k2)
            k4 = drift(s + dt, Y + dt * k3)
            Y = Y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            bs = float(schedule.b(s))
            dW = rng.standard_normal(Y.shape) * math.sqrt(dt)
            Y = Y + dt * drift(s, Y) + math.sqrt(2.0) * bs * dW
        bad = ~np.all(np.isfinite(Y), axis=1)
        if bad.any():
            alive &= ~bad
            Y[bad] = 0.0
    return Ensemble(time=T, points=Y[alive], seed=seed, scheme=mode,
                    n_steps=n_steps, n_excluded=int(np.sum(~alive)))


# ---------------------------------------------------------------------------
# Probability-flow transport map
# ---------------------------------------------------------------------------

def probability_flow_map_batch(density, X, t_min, n_steps,
                               spec: Optional[QuadratureSpec] = None):
    """Push a batch of points through d X / dt = V(t, X) from t_min to 1.

    Returns (mapped points, warn flags); a flagged point reports its last
    stable position.  When the initial points are standard Gaussian, the
    output is approximately distributed as the target p (up to the measured
    t_min truncation).
    """
    if not (0.0 < t_min <= 0.1):
        raise InputError(f"t_min must lie in (0, 0.1], got {t_min}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite initial points")

    def fieldl(l, P):
        tf = max(-l, _T_FLOOR)           # OU time = log(1/tau) = -l
        return P + score_batch(density, tf, P, spec)

    ls = np.linspace(math.log(t_min), 0.0, n_steps + 1)
    P = X.copy()
    flags = np.zeros(len(X), dtype=bool)
    for k in range(n_steps):
        l, dl = ls[k], ls[k + 1] - ls[k]
        k1 = fieldl(l, P)
        k2 = fieldl(l + 0.5 * dl, P + 0.5 * dl * k1)
        k3 = fieldl(l + 0.5 * dl, P + 0.5 * dl * k2)
        k4 = fieldl(l + dl, P + dl * k3)
        step = dl / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.all(np.isfinite(step), axis=1)
        if bad.any():
            flags |= bad
            step[bad] = 0.0
        P = P + step
    return P, flags


def probability_flow_map(density, x, t_min, n_steps,
                         spec: Optional[QuadratureSpec] = None):
    """Transport a single point; see probability_flow_map_batch."""
    out, _ = probability_flow_map_batch(density, np.asarray(x, dtype=float)
                                        .reshape(1, -1), t_min, n_steps, spec)
    return out[0]


@dataclass
class LipschitzEstimate:
    value: float
    n_skipped: int
    worst_pair: tuple

    def __float__(self):
        return self.value


def lipschitz_estimate(map_outputs) -> LipschitzEstimate:
    """max ||out_i - out_j|| / ||in_i - in_j|| over distinct input pairs.

    An empirical lower bound on the Lipschitz constant; duplicate inputs are
    skipped and counted.
    """
    pairs = list(map_outputs)
    if len(pairs) < 2:
        raise InputError("lipschitz_estimate needs at least 2 (input, output) pairs")
    ins = np.atleast_2d(np.asarray([np.ravel(p[0]) for p in pairs], dtype=float))
    outs = np.atleast_2d(np.asarray([np.ravel(p[1]) for p in pairs], dtype=float))
    din = np.linalg.norm(ins[:, None, :] - ins[None, :, :], axis=2)
    dout = np.linalg.norm(outs[:, None, :] - outs[None, :, :], axis=2)
    iu = np.triu_indices(len(pairs), k=1)
    din, dout = din[iu], dout[iu]
    dup = din == 0.0
    n_skipped = int(np.sum(dup))
    if np.all(dup):
        raise InputError("all input pairs are duplicates")
    ratio = dout[~dup] / din[~dup]
    k = int(np.argmax(ratio))
    ii, jj = iu[0][~dup][k], iu[1][~dup][k]
    return LipschitzEstimate(value=float(ratio[k]), n_skipped=n_skipped,
                             worst_pair=(ins[ii], ins[jj]))


# ---------------------------------------------------------------------------
# Coupled-SDE stability experiment
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    lhs: float               # E ||X_t - Xbar_t||^2 under synchronous coupling
    rhs: float               # Gronwall bound from the one-sided profile
    margin: float            # rhs - lhs
    se_lhs: float
    se_rhs: float
    t: float
    n_paths: int
    n_steps: int


def stability_experiment(drift_a: DriftSpec, drift_abar: DriftSpec, b,
                         mu0_sampler, t, n_paths, n_steps, seed=0
                         ) -> StabilityReport:
    """Synchronous coupling of the two SDEs against the Gronwall bound.

    Both processes share initial points and Brownian increments.  The lhs is
    the coupled second moment (an upper bound on W_2^2); the rhs integrates
    e^{2 int_s^t L_u du} times the mean squared drift discrepancy along the
    Xbar ensemble, using the one-sided profile of drift_a.
    """
    if t <= 0 or n_steps < 1 or n_paths < 2:
        raise InputError("need t > 0, n_steps >= 1, n_paths >= 2")
    if not callable(b):
        bval = float(b)
        b = lambda s: bval
    rng = rngmod.spawn(seed, 0x57AB)
    X = np.atleast_2d(np.asarray(mu0_sampler(rng, n_paths), dtype=float))
    Xb = X.copy()
    dt = t / n_steps
    grid = np.linspace(0.0, t, n_steps + 1)
    disc = np.empty(n_steps + 1)
    disc_sq_mean = np.empty(n_steps + 1)

    for k in range(n_steps + 1):
        s = grid[k]
        da = drift_a.drift(s, Xb)
        dab = drift_abar.drift(s, Xb)
        gap = np.sum((da - dab) ** 2, axis=1)
        disc[k] = float(np.mean(gap))
        disc_sq_mean[k] = float(np.mean(gap ** 2))
        if k == n_steps:
            break
        dW = rng.standard_normal(X.shape) * math.sqrt(dt)
        noise = math.sqrt(2.0) * float(b(s)) * dW
        X = X + dt * drift_a.drift(s, X) + noise
        Xb = Xb + dt * dab + noise
        mx = max(float(np.max(np.abs(X))), float(np.max(np.abs(Xb))))
        if not np.isfinite(mx) or mx > _EXPLOSION_NORM:
            raise RuntimeError(
                f"path explosion at s={s + dt:.4g} (max |coordinate| {mx:.3g})")

    sq = np.sum((X - Xb) ** 2, axis=1)
    lhs = float(np.mean(sq))
    se_lhs = float(np.std(sq) / math.sqrt(n_paths))

    L = np.array([float(drift_a.onesided_profile(s)) for s in grid])
    # int_s^t L_u du by reverse cumulative trapezoid on the step grid
    seg = 0.5 * (L[1:] + L[:-1]) * np.diff(grid)
    suffix = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    weight = np.exp(2.0 * suffix)
    rhs = t * float(np.trapezoid(weight * disc, grid))
    var_disc = np.maximum(disc_sq_mean - disc ** 2, 0.0)
    se_rhs = t * float(np.trapezoid(weight * np.sqrt(var_disc / n_paths), grid))
    return StabilityReport(lhs=lhs, rhs=rhs, margin=rhs - lhs,
                           se_lhs=se_lhs, se_rhs=se_rhs, t=t,
                           n_paths=n_paths, n_steps=n_steps)
