"""Exponent fitting, Hoelder/time-regularity estimation, 1-d Wasserstein,
and numerical probes of the concentration inequalities.

Scaling verdicts always compare exponents, never constants; slope tolerances
default to 0.15-0.2 absolute.  "sup" quantities are maxima over recorded,
seed-reproducible samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import InputError, UnsupportedError
from .score import (log_q_derivatives, score_batch, score_higher,
                    score_jacobian, score_jacobian_batch,
                    score_time_derivative_identity)
from .spectral import ConcentrationSet, sym_eigs
from .tilted import DEFAULT_SPEC, QuadratureSpec, covariance_gap

__all__ = [
    "ExponentFit",
    "fit_time_exponent",
    "HolderEstimate",
    "ScorePlusIdField",
    "holder_norm_estimate",
    "TimeRegularity",
    "time_regularity_estimate",
    "wasserstein2_1d",
    "PotentialPack",
    "TestFunction",
    "brascamp_lieb_probe",
    "moment_scaling_probe",
    "covariance_gap_scaling",
]

DEGENERATE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Log-log exponent fits
# ---------------------------------------------------------------------------

@dataclass
class ExponentFit:
    t_window: tuple
    fitted_slope: float
    intercept: float
    r_squared: float
    residual_max: float
    target_slope: Optional[float]
    tolerance: float
    verdict: str                    # "pass" | "fail" | "degenerate: zero series"
    n_points: int = 0

    @property
    def passed(self):
        return self.verdict == "pass"

    def as_dict(self):
        return {"window": list(self.t_window), "slope": self.fitted_slope,
                "intercept": self.intercept, "r_squared": self.r_squared,
                "residual_max": self.residual_max, "target": self.target_slope,
                "tolerance": self.tolerance, "verdict": self.verdict,
                "n_points": self.n_points}


def fit_time_exponent(series, window, target_slope=None, tol=0.15,
                      one_sided=None) -> ExponentFit:
    """Least-squares slope of log(value) vs log(t) over the stated window.

    ``series`` is (ts, values) or an iterable of (t, value) pairs.  A series
    that is identically ~0 yields the "degenerate: zero series" verdict
    rather than an error.  ``one_sided='lower'`` passes when the slope is
    >= target - tol (boundedness checks).
    """
    ts, vals = _as_series(series)
    lo, hi = window
    keep = (ts >= lo * (1 - 1e-12)) & (ts <= hi * (1 + 1e-12))
    ts, vals = ts[keep], vals[keep]
    if np.max(np.abs(vals), initial=0.0) < DEGENERATE_FLOOR:
        return ExponentFit(t_window=(lo, hi), fitted_slope=float("nan"),
                           intercept=float("nan"), r_squared=float("nan"),
                           residual_max=0.0, target_slope=target_slope,
                           tolerance=tol, verdict="degenerate: zero series",
                           n_points=len(ts))
    if len(ts) < 8:
        raise InputError(f"exponent fit needs >= 8 points in window, got {len(ts)}")
    if np.any(vals <= 0):
        bad = ts[vals <= 0]
        raise InputError(f"nonpositive values at t = {bad.tolist()}")
    lx, ly = np.log(ts), np.log(vals)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    verdict = "pass"
    if target_slope is not None:
        if one_sided == "lower":
            verdict = "pass" if slope >= target_slope - tol else "fail"
        elif one_sided == "upper":
            verdict = "pass" if slope <= target_slope + tol else "fail"
        else:
            verdict = "pass" if abs(slope - target_slope) <= tol else "fail"
    return ExponentFit(t_window=(lo, hi), fitted_slope=float(slope),
                       intercept=float(intercept), r_squared=r2,
                       residual_max=float(np.max(np.abs(ly - pred))),
                       target_slope=target_slope, tolerance=tol,
                       verdict=verdict, n_points=len(ts))


def _as_series(series):
    """(ts, values) from a 2-tuple of arrays or an iterable of (t, v) pairs."""
    if isinstance(series, tuple) and len(series) == 2 and np.ndim(series[0]) >= 1:
        return (np.asarray(series[0], dtype=float),
                np.asarray(series[1], dtype=float))
    arr = np.asarray(list(series), dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 0], arr[:, 1]
    raise InputError("series must be (ts, values) or (t, value) pairs")


# ---------------------------------------------------------------------------
# Hoelder-norm estimation on concentration sets
# ---------------------------------------------------------------------------

class ScorePlusIdField:
    """x -> s(t, x) + x at fixed t, with exact derivative tensors."""

    def __init__(self, density, t, spec: Optional[QuadratureSpec] = None):
        self.density = density
        self.t = t
        self.spec = spec or DEFAULT_SPEC

    def value(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return score_batch(self.density, self.t, X, self.spec) + X

    def deriv_batch(self, X, j):
        """grad^j (s + Id) over a batch; j = 1 is the shifted Jacobian."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if j == 1:
            J = score_jacobian_batch(self.density, self.t, X, self.spec)
            return J + np.eye(X.shape[1])[None, :, :]
        return np.stack([score_higher(self.density, self.t, x, j, self.spec)[j]
                         for x in X])


@dataclass
class HolderEstimate:
    gamma: float
    order_sups: dict                # j -> sup tensor norm over recorded points
    top_quotient: Optional[float]   # fractional-part quotient, if any
    total: float
    n_points: int
    n_pairs: int
    n_skipped: int
    seed: int

    def as_dict(self):
        return {"gamma": self.gamma,
                "order_sups": {str(k): v for k, v in self.order_sups.items()},
                "top_quotient": self.top_quotient, "total": self.total,
                "n_points": self.n_points, "n_pairs": self.n_pairs,
                "n_skipped": self.n_skipped, "seed": self.seed}


def _set_points(set_: ConcentrationSet, n_points, seed):
    """Reproducible points inside the set: uniform draws over the bounding
    box filtered by membership, plus dyadic clusters around the center."""
    d = len(set_.bounding_lo)
    rng = rngmod.spawn(seed, 0x401D)
    span = set_.bounding_hi - set_.bounding_lo
    raw = set_.bounding_lo + rng.uniform(size=(4 * n_points, d)) * span
    pts = [raw]
    scales = 2.0 ** -np.arange(0, 16)
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        offs = np.concatenate([scales, -scales]) * 0.5 * span[j]
        pts.append(set_.center[None, :] + offs[:, None] * e[None, :])
    pts.append(set_.center[None, :])
    P = np.concatenate(pts, axis=0)
    keep = set_.contains(P)
    n_skipped = int(np.sum(~keep))
    P = P[keep]
    if len(P) > n_points:
        P = P[:n_points]
    return P, n_skipped


def holder_norm_estimate(field, set_: ConcentrationSet, gamma, n_points=256,
                         n_pairs=256, seed=0) -> HolderEstimate:
    """H^gamma(A) norm estimate of a vector field over a convex set.

    Derivative orders up to floor(gamma) are taken from the field's exact
    tensors; the fractional part is the max Hoelder quotient of the top
    derivative over point pairs with log-spaced separations in
    [1e-4 diam, diam].  All samples are recorded and seed-reproducible.
    """
    if gamma > 4:
        raise UnsupportedError("holder_norm_estimate supports gamma <= 4")
    if gamma < 0:
        raise InputError("gamma must be >= 0")
    P, n_skipped = _set_points(set_, n_points, seed)
    if len(P) == 0:
        raise InputError("no sample points landed inside the set")
    floor_g = int(math.floor(gamma))
    frac = gamma - floor_g
    order_sups = {}
    vals = field.value(P)
    order_sups[0] = float(np.max(np.linalg.norm(vals, axis=1)))
    for j in range(1, floor_g + 1):
        T = field.deriv_batch(P, j)
        order_sups[j] = float(np.max(np.sqrt(np.sum(T * T,
                                                    axis=tuple(range(1, T.ndim))))))
    top_quotient = None
    used_pairs = 0
    if frac > 0:
        rng = rngmod.spawn(seed, 0x401E)
        diam = max(set_.diameter, 1e-12)
        seps = np.exp(rng.uniform(math.log(1e-4 * diam), math.log(diam), n_pairs))
        base = P[rng.integers(0, len(P), n_pairs)]
        dirs = rng.standard_normal((n_pairs, base.shape[1]))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        mates = base + seps[:, None] * dirs
        ok = set_.contains(mates)
        n_skipped += int(np.sum(~ok))
        base, mates, seps = base[ok], mates[ok], seps[ok]
        used_pairs = len(base)
        if used_pairs:
            Ta = field.deriv_batch(base, floor_g) if floor_g >= 1 \
                else field.value(base)
            Tb = field.deriv_batch(mates, floor_g) if floor_g >= 1 \
                else field.value(mates)
            diff = Ta - Tb
            norms = np.sqrt(np.sum(diff * diff, axis=tuple(range(1, diff.ndim))))
            top_quotient = float(np.max(norms / seps ** frac))
    total = sum(order_sups.values()) + (top_quotient or 0.0)
    return HolderEstimate(gamma=gamma, order_sups=order_sups,
                          top_quotient=top_quotient, total=total,
                          n_points=len(P), n_pairs=used_pairs,
                          n_skipped=n_skipped, seed=seed)


# ---------------------------------------------------------------------------
# Time regularity
# ---------------------------------------------------------------------------

@dataclass
class TimeRegularity:
    t_grid: np.ndarray
    series: np.ndarray              # |d_t^k s(t, x)| per grid time, (n, d)
    k: int
    x: np.ndarray
    identity_rel_dev: Optional[float]   # k=1 cross-check vs the evolution identity


def time_regularity_estimate(density, x, t_grid, k, spec=None,
                             check_identity=True) -> TimeRegularity:
    """k-th central time differences of s(t, x) on a log-spaced grid.

    Steps are t/20 (log-safe).  For k = 1 the result is cross-checked
    against the Fokker-Planck evolution identity transported to the score.
    """
    if k not in (1, 2, 3):
        raise InputError(f"k must be in 1..3, got {k}")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2:
        raise InputError("t_grid must contain at least 2 times")
    x = np.asarray(x, dtype=float).reshape(-1)
    out = []
    devs = []
    for t in t_grid:
        h = t / 20.0
        s = lambda tt: score_batch(density, tt, x.reshape(1, -1), spec)[0]
        if k == 1:
            d = (s(t + h) - s(t - h)) / (2.0 * h)
        elif k == 2:
            d = (s(t + h) - 2.0 * s(t) + s(t - h)) / h ** 2
        else:
            d = (s(t + 2 * h) - 2.0 * s(t + h) + 2.0 * s(t - h)
                 - s(t - 2 * h)) / (2.0 * h ** 3)
        out.append(d)
        if k == 1 and check_identity:
            ident = score_time_derivative_identity(density, t, x, spec)
            scale = max(1.0, float(np.linalg.norm(ident)))
            devs.append(float(np.linalg.norm(d - ident)) / scale)
    return TimeRegularity(t_grid=t_grid, series=np.asarray(out), k=k, x=x,
                          identity_rel_dev=max(devs) if devs else None)


# ---------------------------------------------------------------------------
# Exact 1-d Wasserstein-2
# ---------------------------------------------------------------------------

def wasserstein2_1d(samples_a, samples_b):
    """Empirical W2 by the sorted-sample (quantile) coupling.

    Unequal counts are handled by quantile resampling of the smaller set
    (flagged via a warning).
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if len(a) == 0 or len(b) == 0:
        raise InputError("wasserstein2_1d needs nonempty samples")
    if len(a) != len(b):
        warnings.warn("unequal sample counts: quantile-resampling the smaller set")
        n = max(len(a), len(b))
        q = (np.arange(n) + 0.5) / n
        if len(a) < n:
            a = np.quantile(a, q)
        else:
            b = np.quantile(b, q)
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# Brascamp-Lieb and moment-scaling probes
# ---------------------------------------------------------------------------

@dataclass
class PotentialPack:
    """phi with batch evaluators: value (n,), grad (n,d), hess (n,d,d)."""
    value: Callable
    grad: Callable
    hess: Callable
    dim: int = 1


@dataclass
class TestFunction:
    """Scalar test function with bounded gradient: value (n,), grad (n,d)."""
    value: Callable
    grad: Callable


def _quad_grid(pack: PotentialPack, nodes=400):
    """Gauss-Legendre grid covering the bulk of exp(-phi)."""
    x = np.zeros(pack.dim)
    for _ in range(60):
        g = pack.grad(x.reshape(1, -1))[0]
        H = pack.hess(x.reshape(1, -1))[0]
        step = np.linalg.solve(H, g)
        x = x - step
        if np.linalg.norm(step) < 1e-13:
            break
    H0 = pack.hess(x.reshape(1, -1))[0]
    sigma = 1.0 / math.sqrt(max(float(np.min(np.linalg.eigvalsh(H0))), 1e-12))
    half = 10.0 * sigma
    g, w = np.polynomial.legendre.leggauss(nodes if pack.dim == 1 else 160)
    axes = [x[j] + half * g for j in range(pack.dim)]
    wts = [half * w for _ in range(pack.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.multiply.reduce(
        np.meshgrid(*wts, indexing="ij")).ravel()
    return P, W


def brascamp_lieb_probe(q: PotentialPack, S: TestFunction, nodes=400):
    """(lhs, rhs) of Var_q(S) <= E_q[(hess phi)^{-1}(grad S, grad S)].

    q = exp(-phi) with phi convex; convexity is checked on the quadrature
    grid and a nonconvex probe is an input error naming the point.
    """
    P, W = _quad_grid(q, nodes)
    hess = q.hess(P)
    eigs = np.linalg.eigvalsh(hess)
    if np.any(eigs <= 0):
        bad = P[int(np.argmin(eigs.min(axis=1)))]
        raise InputError(f"potential is not convex at probe {bad.tolist()}")
    logq = -q.value(P)
    logq -= logq.max()
    dens = np.exp(logq) * W
    dens /= dens.sum()
    sv = S.value(P)
    mean = float(np.sum(dens * sv))
    lhs = float(np.sum(dens * (sv - mean) ** 2))
    gs = S.grad(P)
    sol = np.linalg.solve(hess, gs[..., None])[..., 0]
    rhs = float(np.sum(dens * np.einsum("ni,ni->n", gs, sol)))
    return lhs, rhs


def moment_scaling_probe(theta_grid, gamma_list, f: Optional[TestFunction] = None,
                         quartic_coeff=1.0, tol=0.1):
    """Centered gamma-moments of theta-strongly-convex measures vs theta.

    For mu = exp(-W) with W = theta x^2 / 2 (Gaussian) and
    W = theta (x^2/2 + c x^4) (theta-strongly-convex quartic), fits the
    slope of log int |f - mean|^gamma dmu against log theta and asserts it
    stays below -gamma/2 + tol.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    if theta_grid.max() / theta_grid.min() < 99.0:
        raise InputError("theta grid must span at least two decades")
    if f is None:
        f = TestFunction(value=lambda X: X[:, 0], grad=lambda X: np.ones_like(X))
    out = {}
    for family in ("gaussian", "quartic"):
        moments = {g: [] for g in gamma_list}
        for theta in theta_grid:
            half = 12.0 / math.sqrt(theta)
            g, w = np.polynomial.legendre.leggauss(600)
            x = (half * g).reshape(-1, 1)
            W = 0.5 * theta * x[:, 0] ** 2
            if family == "quartic":
                W = W + theta * quartic_coeff * x[:, 0] ** 4
            dens = np.exp(-(W - W.min())) * (half * w)
            dens /= dens.sum()
            fv = f.value(x)
            mean = float(np.sum(dens * fv))
            for gamma in gamma_list:
                moments[gamma].append(float(np.sum(dens * np.abs(fv - mean) ** gamma)))
        for gamma in gamma_list:
            fit = fit_time_exponent((theta_grid, np.asarray(moments[gamma])),
                                    (theta_grid.min(), theta_grid.max()),
                                    target_slope=-gamma / 2.0, tol=tol,
                                    one_sided="upper")
            out[(family, gamma)] = fit
    return out


def covariance_gap_scaling(density, t_grid, x, spec=None, tol=0.2) -> ExponentFit:
    """Fit opnorm of the covariance gap against log(1 - e^{-2t}).

    Target slope 1 + beta/2 from the declared Hoelder exponent.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    gaps = []
    for t in t_grid:
        G = covariance_gap(density, t, x, spec)
        gaps.append(abs(sym_eigs(G).lmax)
                    if G.shape[0] == 1 else
                    max(abs(sym_eigs(G).lmin), abs(sym_eigs(G).lmax)))
    gaps = np.asarray(gaps)
    vs = -np.expm1(-2.0 * t_grid)
    beta = density.profile.beta
    # fit in the v = 1 - e^{-2t} variable (the rate's natural abscissa)
    fit = fit_time_exponent((vs, gaps), (vs.min(), vs.max()),
                            target_slope=1.0 + beta / 2.0, tol=tol)
    return fit
