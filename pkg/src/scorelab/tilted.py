"""The Gaussian ratio r = p/gamma_d, its heat-semigroup value and the tilted
measures it induces.

With b = e^{-t} and v = 1 - e^{-2t}, the smoothed marginal factors as
p_t(x) = gamma_d(x) * Q_t r(x) where

    Q_t r(x) = int r(y) phi^{t,x}(y) dy,     phi^{t,x} = N(b x, v Id).

The tilted probability measure

    p^{t,x}(y) = r(y) phi^{t,x}(y) / Q_t r(x)
               propto p(y) * N(y; x e^{t}, (e^{2t}-1) Id)

is the posterior of Y ~ p given the noisy observation x = b Y + sqrt(v) Z,
so for Gaussian mixtures it is again a mixture in closed form.  Otherwise
moments are computed by deterministic quadrature in the standardized
coordinates W = (Y - b x)/sqrt(v):

* d = 1: panel-wise Gauss-Legendre on [b x +- R sqrt(v)] intersected with the
  support, panels split at declared kinks of a and capped at ~3 sqrt(v) width
  so the Gaussian factor is resolved spectrally at every t;
* d in {2, 3}: tensor Gauss-Hermite for full supports (nodes track the
  Gaussian factor), per-axis Gauss-Legendre for boxes, Gauss-Hermite with
  outside-nodes-zeroed (one x4 escalation) for balls.

All masses and reweightings accumulate in the log domain; moments are stored
centered to avoid cancellation at small t.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional

import numpy as np

from .densities import (Ball, Box, CompactDensity, GaussianMixtureDensity,
                        PerturbedLogConcaveDensity)
from .errors import DomainError, InputError, QuadratureWindowError, UnsupportedError

__all__ = [
    "QuadratureSpec",
    "TiltedMeasure",
    "qtr",
    "tilted_moments",
    "tilt_mean_cov",
    "log_concave_counterpart",
    "covariance_gap",
    "posterior_mixture",
]


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_per_axis: int = 64
    truncation_radius: float = 12.0
    dimension_cap: int = 3

    def __post_init__(self):
        if self.nodes_per_axis < 8:
            raise InputError("nodes_per_axis must be >= 8")
        if self.truncation_radius < 6:
            raise InputError("truncation_radius must be >= 6")


DEFAULT_SPEC = QuadratureSpec()


@dataclass(frozen=True)
class TiltedMeasure:
    """Mean and centered moments of p^{t,x} or its log-concave counterpart."""

    base: str                       # "p_tilt" | "nu_tilt"
    t: float
    x: np.ndarray
    mean: np.ndarray
    centered_moments: Dict[int, np.ndarray]
    log_mass: float                 # log Q_t r(x) (resp. Q_t q), up to a const
    method: str                     # "closed_form" | "quadrature"

    @property
    def covariance(self):
        return self.centered_moments[2]


# ---------------------------------------------------------------------------
# log r evaluation
# ---------------------------------------------------------------------------

def _log_r_batch(density, Y):
    """log r(y) = log p(y) - log gamma_d(y), NaN-free: (values, inside mask).

    For mixtures the value is exact (both factors normalized); otherwise it
    carries the density's additive constant, which cancels downstream.
    """
    vals, mask = density.log_density_batch(Y)
    d = Y.shape[1]
    logr = vals + 0.5 * np.sum(Y * Y, axis=1)
    if isinstance(density, GaussianMixtureDensity):
        logr = logr + 0.5 * d * math.log(2.0 * math.pi)
    return logr, mask


# ---------------------------------------------------------------------------
# Node construction
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _gl_nodes(m):
    g, w = np.polynomial.legendre.leggauss(m)
    return g, w


@lru_cache(maxsize=32)
def _gh_nodes(m):
    # probabilists' Hermite: weight e^{-h^2/2}, normalized so weights sum to 1
    h, w = np.polynomial.hermite_e.hermegauss(m)
    return h, w / math.sqrt(2.0 * math.pi)


def _axis_window(mu, lo, hi, radius, sqv):
    """Per-axis truncation window [wlo, whi] inside [lo, hi].

    Keeps the region where the Gaussian factor is within exp(-R^2/2) of its
    maximum over the support slice, which collapses to a boundary layer when
    the center lies outside the support.
    """
    ystar = np.clip(mu, lo, hi)
    s = np.sqrt((ystar - mu) ** 2 + (radius * sqv) ** 2)
    return np.maximum(lo, mu - s), np.minimum(hi, mu + s)


def _segment_edges(wlo, whi, sqv, kinks, max_segments=12):
    """(n, S+1) panel edges: uniform panels of width <= ~3 sqrt(v), with the
    interior edge nearest each kink snapped onto it."""
    width = whi - wlo
    nseg = int(min(max_segments, max(1, math.ceil(np.max(width) / (3.0 * sqv)))))
    frac = np.linspace(0.0, 1.0, nseg + 1)
    edges = wlo[:, None] + width[:, None] * frac[None, :]
    if kinks and nseg >= 2:
        for k in kinks:
            inside = (edges[:, 0] < k) & (k < edges[:, -1])
            if not np.any(inside):
                continue
            idx = np.argmin(np.abs(edges[:, 1:-1] - k), axis=1) + 1
            rows = np.nonzero(inside)[0]
            edges[rows, idx[rows]] = k
        edges = np.sort(edges, axis=1)
    return edges


def _nodes_gl_1d(density, t, X, spec, kinks, log_target):
    """Panel-wise Gauss-Legendre nodes for 1-d targets (optionally compact)."""
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    sqv = math.sqrt(v)
    mu = b * X[:, 0]
    if isinstance(density, CompactDensity):
        lo, hi = density.support.lo[0], density.support.hi[0]
    else:
        lo, hi = -np.inf, np.inf
    wlo, whi = _axis_window(mu, lo, hi, spec.truncation_radius, sqv)
    if np.any(whi <= wlo):
        raise QuadratureWindowError(
            "empty truncation window for 1-d quadrature",
            window=(float(np.min(wlo)), float(np.max(whi))))
    edges = _segment_edges(wlo, whi, sqv, kinks)
    m0 = max(8, spec.nodes_per_axis // 4)
    g, wg = _gl_nodes(m0)
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])            # (n, S)
    half = 0.5 * (edges[:, 1:] - edges[:, :-1])
    y = mid[:, :, None] + half[:, :, None] * g[None, None, :]     # (n, S, m0)
    with np.errstate(divide="ignore"):
        logw_panel = np.where(half > 0, np.log(np.maximum(half, 1e-300)), -np.inf)
    logw = logw_panel[:, :, None] + np.log(wg)[None, None, :]
    n = len(X)
    yf = y.reshape(n, -1)
    logr, mask = log_target(yf.reshape(-1, 1))
    logr = np.where(mask, logr, -np.inf).reshape(n, -1)
    W = (yf - mu[:, None]) / sqv
    logphi = -0.5 * W * W - 0.5 * math.log(2.0 * math.pi * v)
    return W[:, :, None], logw.reshape(n, -1) + logr + logphi


def _nodes_gh(density, t, X, spec, log_target, m0=None):
    """Tensor Gauss-Hermite nodes (full-support or ball-supported targets)."""
    d = X.shape[1]
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    sqv = math.sqrt(v)
    m0 = m0 or spec.nodes_per_axis
    h, wh = _gh_nodes(m0)
    grids = np.meshgrid(*([h] * d), indexing="ij")
    H = np.stack([g.ravel() for g in grids], axis=1)      # (m, d)
    logwh = np.add.reduce(np.meshgrid(*([np.log(wh)] * d), indexing="ij")).ravel()
    mu = b * X                                           # (n, d)
    n, m = len(X), len(H)
    Y = mu[:, None, :] + sqv * H[None, :, :]
    logr, mask = log_target(Y.reshape(-1, d))
    logr = np.where(mask, logr, -np.inf).reshape(n, m)
    logw = logwh[None, :] + logr
    if isinstance(density, CompactDensity):
        inside = mask.reshape(n, m).sum(axis=1)
        if np.any(inside < 8):
            if m0 < 4 * spec.nodes_per_axis:
                return _nodes_gh(density, t, X, spec, log_target,
                                 m0=4 * spec.nodes_per_axis)
            worst = int(np.argmin(inside))
            raise QuadratureWindowError(
                f"fewer than 8 quadrature nodes hit the support "
                f"(center {X[worst]}, window half-width "
                f"{spec.truncation_radius * sqv:.3g})",
                window=(mu[worst] - spec.truncation_radius * sqv,
                        mu[worst] + spec.truncation_radius * sqv))
    W = np.broadcast_to(H[None, :, :], (n, m, d))
    return W, logw


def _nodes_box_nd(density, t, X, spec, log_target):
    """Per-axis Gauss-Legendre on support-intersected windows, d in {2, 3}."""
    d = X.shape[1]
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    sqv = math.sqrt(v)
    mu = b * X
    lo = np.asarray(density.support.lo)
    hi = np.asarray(density.support.hi)
    m0 = max(8, spec.nodes_per_axis // 4)
    g, wg = _gl_nodes(m0)
    per_axis_nodes = []
    per_axis_logw = []
    for j in range(d):
        wlo, whi = _axis_window(mu[:, j], lo[j], hi[j], spec.truncation_radius, sqv)
        edges = _segment_edges(wlo, whi, sqv, ())
        mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
        half = 0.5 * (edges[:, 1:] - edges[:, :-1])
        yj = (mid[:, :, None] + half[:, :, None] * g[None, None, :]).reshape(len(X), -1)
        with np.errstate(divide="ignore"):
            lw = (np.where(half > 0, np.log(np.maximum(half, 1e-300)), -np.inf)[:, :, None]
                  + np.log(wg)[None, None, :]).reshape(len(X), -1)
        per_axis_nodes.append(yj)
        per_axis_logw.append(lw)
    # tensorize axes
    maxis = per_axis_nodes[0].shape[1]
    idx = np.meshgrid(*([np.arange(maxis)] * d), indexing="ij")
    idx = [ix.ravel() for ix in idx]
    n = len(X)
    Y = np.stack([per_axis_nodes[j][:, idx[j]] for j in range(d)], axis=2)  # (n,m,d)
    logw = sum(per_axis_logw[j][:, idx[j]] for j in range(d))
    logr, mask = log_target(Y.reshape(-1, d))
    logr = np.where(mask, logr, -np.inf).reshape(n, -1)
    W = (Y - mu[:, None, :]) / sqv
    logphi = -0.5 * np.sum(W * W, axis=2) - 0.5 * d * math.log(2.0 * math.pi * v)
    return W, logw + logr + logphi


def _tilt_nodes(density, t, X, spec, kinks=None, log_target=None):
    """Standardized nodes W (n,m,d) and log unnormalized masses (n,m)."""
    if t <= 0:
        raise DomainError(f"tilted quantities need t > 0, got {t}")
    d = X.shape[1]
    if d > spec.dimension_cap:
        raise UnsupportedError(
            f"quadrature path supports dimension <= {spec.dimension_cap}, got {d}")
    if log_target is None:
        log_target = lambda Y: _log_r_batch(density, Y)
    if kinks is None:
        kinks = tuple(getattr(density, "kinks", ()))
    if d == 1:
        if kinks or isinstance(density, CompactDensity):
            return _nodes_gl_1d(density, t, X, spec, kinks, log_target)
        return _nodes_gh(density, t, X, spec, log_target)
    if isinstance(density, CompactDensity):
        if isinstance(density.support, Box):
            return _nodes_box_nd(density, t, X, spec, log_target)
        return _nodes_gh(density, t, X, spec, log_target)
    return _nodes_gh(density, t, X, spec, log_target)


def _weights_from_log(logw):
    mx = logw.max(axis=1)
    bad = ~np.isfinite(mx)
    if np.any(bad):
        raise QuadratureWindowError(
            "all quadrature nodes carry zero mass (support missed)")
    w = np.exp(logw - mx[:, None])
    tot = w.sum(axis=1)
    return w / tot[:, None], mx + np.log(tot)


_EINSUM_LETTERS = "abcdef"


def _centered_moments_from_nodes(W, pi, order):
    """Mean and centered moment tensors (orders 2..order) in y-coordinates."""
    meanW = np.einsum("nm,nmd->nd", pi, W)
    Wc = W - meanW[:, None, :]
    out = {}
    for k in range(2, order + 1):
        letters = _EINSUM_LETTERS[:k]
        sub = "nm," + ",".join(f"nm{c}" for c in letters) + "->n" + letters
        out[k] = np.einsum(sub, pi, *([Wc] * k))
    return meanW, out


# ---------------------------------------------------------------------------
# Closed-form mixture path
# ---------------------------------------------------------------------------

def posterior_mixture(density: GaussianMixtureDensity, t, x):
    """p^{t,x} as an explicit Gaussian mixture (weights, means, covariances).

    Component i is conditioned against the Gaussian factor
    N(y; x e^{t}, (e^{2t}-1) Id) and reweighted by the marginal responsibility
    w_i N(x; e^{-t} m_i, e^{-2t} S_i + v Id), which is stable at every t.
    """
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    x = np.asarray(x, dtype=float).reshape(-1)
    d = density.dim
    eye = np.eye(d)
    marg_cov = b * b * density.covariances + v * eye[None, :, :]
    diff = x[None, :] - b * density.means
    prec_m = np.linalg.inv(marg_cov)
    quad = np.einsum("ki,kij,kj->k", diff, prec_m, diff)
    logdet = np.linalg.slogdet(marg_cov)[1]
    logw = (np.log(density.weights) - 0.5 * (quad + logdet + d * math.log(2 * math.pi)))
    log_mass_pt = _logsumexp(logw)
    w_post = np.exp(logw - log_mass_pt)

    prec_gauss = (b * b / v) * eye
    post_cov = np.linalg.inv(density._prec + prec_gauss[None, :, :])
    rhs = (np.einsum("kij,kj->ki", density._prec, density.means)
           + (b / v) * x[None, :])
    post_means = np.einsum("kij,kj->ki", post_cov, rhs)
    # log Q_t r(x) = log p_t(x) - log gamma_d(x)
    log_qtr = log_mass_pt + 0.5 * float(x @ x) + 0.5 * d * math.log(2 * math.pi)
    return w_post, post_means, post_cov, log_qtr


def _logsumexp(a):
    m = np.max(a)
    return float(m + np.log(np.sum(np.exp(a - m))))


def _pairings_of(elems):
    if not elems:
        return ((),)
    a, rest = elems[0], elems[1:]
    out = []
    for j in range(len(rest)):
        first = (a, rest[j])
        remaining = rest[:j] + rest[j + 1:]
        for sub in _pairings_of(remaining):
            out.append((first,) + sub)
    return tuple(out)


@lru_cache(maxsize=16)
def _pairings(m):
    """All perfect matchings of range(m) as tuples of index pairs."""
    if m % 2:
        return ()
    return _pairings_of(tuple(range(m)))


def _gaussian_raw_moment(Sigma, m):
    """E[Z^{tensor m}] for Z ~ N(0, Sigma) via Isserlis pairings."""
    d = Sigma.shape[0]
    if m == 0:
        return np.array(1.0)
    out = np.zeros((d,) * m)
    if m % 2:
        return out
    for matching in _pairings(m):
        term = np.array(1.0)
        order = []
        for (a, b) in matching:
            term = np.multiply.outer(term, Sigma)
            order.extend([a, b])
        out += np.transpose(term, np.argsort(order))
    return out


def _shifted_central_moment(delta, Sigma, k):
    """E[(Z + delta)^{tensor k}] for Z ~ N(0, Sigma)."""
    d = len(delta)
    out = np.zeros((d,) * k)
    for mask in range(1 << k):
        z_pos = [i for i in range(k) if (mask >> i) & 1]
        if len(z_pos) % 2:
            continue
        m = len(z_pos)
        raw = _gaussian_raw_moment(Sigma, m)
        term = raw
        for _ in range(k - m):
            term = np.multiply.outer(term, delta)
        d_pos = [i for i in range(k) if not ((mask >> i) & 1)]
        order = z_pos + d_pos
        out += np.transpose(term, np.argsort(order))
    return out


def _mixture_central_moments(weights, means, covs, order):
    mean = np.einsum("k,ki->i", weights, means)
    deltas = means - mean[None, :]
    out = {}
    for k in range(2, order + 1):
        acc = np.zeros((len(mean),) * k)
        for w, delta, S in zip(weights, deltas, covs):
            acc += w * _shifted_central_moment(delta, S, k)
        out[k] = acc
    return mean, out


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def qtr(density, t, x, spec: Optional[QuadratureSpec] = None):
    """log Q_t r(x), up to the density's additive constant (exact for mixtures)."""
    if t <= 0:
        raise DomainError(f"Q_t r needs t > 0, got {t}")
    spec = spec or DEFAULT_SPEC
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if isinstance(density, GaussianMixtureDensity):
        return posterior_mixture(density, t, x[0])[3]
    _, logw = _tilt_nodes(density, t, x, spec)
    _, logmass = _weights_from_log(logw)
    return float(logmass[0])


def tilted_moments(density, base, t, x, order=2,
                   spec: Optional[QuadratureSpec] = None) -> TiltedMeasure:
    """Mean and centered moments (up to ``order``) of p^{t,x} or nu^{t,x}."""
    if order > 6:
        raise UnsupportedError("centered moments supported up to order 6")
    if order < 2:
        raise InputError("order must be >= 2")
    if t <= 0:
        raise DomainError(f"tilted moments need t > 0, got {t}")
    if base not in ("p_tilt", "nu_tilt"):
        raise InputError(f"base must be p_tilt or nu_tilt, got {base!r}")
    spec = spec or DEFAULT_SPEC
    x = np.asarray(x, dtype=float).reshape(-1)

    target = density
    kinks = None
    if base == "nu_tilt":
        if not isinstance(density, PerturbedLogConcaveDensity):
            raise UnsupportedError(
                "nu_tilt requires a density with a declared (u, a) split")
        target = density.with_zero_perturbation()
        kinks = density.kinks   # share panels with the p_tilt path

    if isinstance(target, GaussianMixtureDensity):
        w, m, S, log_mass = posterior_mixture(target, t, x)
        mean, central = _mixture_central_moments(w, m, S, order)
        return TiltedMeasure(base, t, x, mean, central, log_mass, "closed_form")

    W, logw = _tilt_nodes(target, t, x.reshape(1, -1), spec, kinks=kinks)
    pi, logmass = _weights_from_log(logw)
    meanW, cmomW = _centered_moments_from_nodes(W, pi, order)
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    sqv = math.sqrt(v)
    mean = b * x + sqv * meanW[0]
    central = {k: sqv ** k * cmomW[k][0] for k in cmomW}
    return TiltedMeasure(base, t, x, mean, central, float(logmass[0]), "quadrature")


def tilt_mean_cov(density, t, X, spec: Optional[QuadratureSpec] = None,
                  base="p_tilt"):
    """Batched tilted mean/covariance over centers X (n, d) by quadrature.

    Returns (mean (n,d), cov (n,d,d), log_mass (n,)).  The mixture
    closed form is used automatically when available.
    """
    spec = spec or DEFAULT_SPEC
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(density, GaussianMixtureDensity) and base == "p_tilt":
        means = np.empty_like(X)
        covs = np.empty((len(X), X.shape[1], X.shape[1]))
        logm = np.empty(len(X))
        for i, xi in enumerate(X):
            w, m, S, lq = posterior_mixture(density, t, xi)
            mean, central = _mixture_central_moments(w, m, S, 2)
            means[i], covs[i], logm[i] = mean, central[2], lq
        return means, covs, logm
    target = density
    kinks = None
    if base == "nu_tilt":
        if not isinstance(density, PerturbedLogConcaveDensity):
            raise UnsupportedError(
                "nu_tilt requires a density with a declared (u, a) split")
        target = density.with_zero_perturbation()
        kinks = density.kinks
    W, logw = _tilt_nodes(target, t, X, spec, kinks=kinks)
    pi, logmass = _weights_from_log(logw)
    meanW, cmomW = _centered_moments_from_nodes(W, pi, 2)
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    return b * X + math.sqrt(v) * meanW, v * cmomW[2], logmass


def log_concave_counterpart(density):
    """Evaluator handle for q(y) = r(y) e^{-a(y)} = exp(-u(y) + ||y||^2/2)."""
    if not isinstance(density, PerturbedLogConcaveDensity):
        raise UnsupportedError(
            "log-concave counterpart needs a declared (u, a) split")
    return density.with_zero_perturbation()


def covariance_gap(density, t, x, spec: Optional[QuadratureSpec] = None):
    """Cov(p^{t,x}) - Cov(nu^{t,x}), the tilted-vs-log-concave covariance gap."""
    if not isinstance(density, PerturbedLogConcaveDensity):
        raise InputError("covariance_gap requires a perturbed log-concave density")
    spec = spec or DEFAULT_SPEC
    tm_p = tilted_moments(density, "p_tilt", t, x, order=2, spec=spec)
    tm_nu = tilted_moments(density, "nu_tilt", t, x, order=2, spec=spec)
    return tm_p.covariance - tm_nu.covariance
