"""Score s(t,x) = grad log p_t(x), its Jacobian and higher derivatives.

Two independent pipelines:

* closed form -- for Gaussian mixtures the OU marginal is again a mixture,
  so s and grad s come from direct differentiation of its log-density;
* tilted quadrature -- for any density, with b = e^{-t}, v = 1 - e^{-2t},

      s(t,x)      = -x + (b/v) * (mean p^{t,x} - b x)
      grad s(t,x) = -(1 + b^2/v) Id + (b^2/v^2) Cov p^{t,x}.

Higher derivatives use grad^j (s + Id) = grad^{j+1} log Q_t r together with

      grad^l Q_t r / Q_t r = b^l v^{-l/2} E[ He_l(W) ],   W = (Y - b x)/sqrt(v),

where He_l is the tensor Hermite polynomial (coordinate-wise products of
probabilists' Hermite polynomials), and the Faa di Bruno partition sum

      grad^m log Q = sum_{pi in Pi_m} (-1)^{|pi|-1} (|pi|-1)!
                     prod_{B in pi} [grad^{|B|} Q / Q]_{indices of B}.

Partitions are enumerated once per order and cached (Bell(5) = 52).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product as iproduct
from typing import Dict, Optional

import numpy as np

from .densities import GaussianMixtureDensity, PerturbedLogConcaveDensity
from .errors import DomainError, InputError, UnsupportedError
from .forward import marginal_mixture
from .tilted import (DEFAULT_SPEC, QuadratureSpec, TiltedMeasure,
                     tilt_mean_cov, tilted_moments)

__all__ = [
    "ScoreEvaluation",
    "score",
    "score_batch",
    "score_jacobian",
    "score_jacobian_batch",
    "score_higher",
    "log_q_derivatives",
    "score_time_derivative_identity",
    "fd_check",
    "FdReport",
    "make_score_fn",
]


# ---------------------------------------------------------------------------
# Closed-form mixture pipeline
# ---------------------------------------------------------------------------

def _mixture_score_jac(density: GaussianMixtureDensity, t, X, want_jac):
    marg = marginal_mixture(density, t) if t > 0 else density
    X = np.atleast_2d(np.asarray(X, dtype=float))
    comp = marg.component_logpdfs(X) + np.log(marg.weights)[None, :]
    mx = comp.max(axis=1, keepdims=True)
    rho = np.exp(comp - mx)
    rho /= rho.sum(axis=1, keepdims=True)                     # (n, k)
    diff = X[:, None, :] - marg.means[None, :, :]             # (n, k, d)
    g = -np.einsum("kij,nkj->nki", marg._prec, diff)          # per-comp scores
    s = np.einsum("nk,nki->ni", rho, g)
    if not want_jac:
        return s, None
    jac = (np.einsum("nk,nki,nkj->nij", rho, g, g)
           - np.einsum("nk,kij->nij", rho, marg._prec)
           - np.einsum("ni,nj->nij", s, s))
    return s, jac


# ---------------------------------------------------------------------------
# Public evaluators
# ---------------------------------------------------------------------------

def _resolve_method(density, method):
    if method == "auto":
        return "closed_form" if isinstance(density, GaussianMixtureDensity) \
            else "tilted_quadrature"
    if method not in ("closed_form", "tilted_quadrature"):
        raise InputError(f"unknown score method {method!r}")
    if method == "closed_form" and not isinstance(density, GaussianMixtureDensity):
        raise UnsupportedError("closed_form score path requires a Gaussian mixture")
    return method


def score_batch(density, t, X, spec: Optional[QuadratureSpec] = None,
                method="auto"):
    """s(t, x) for a batch of points X (n, d)."""
    method = _resolve_method(density, method)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if method == "closed_form":
        if t < 0:
            raise DomainError(f"score needs t >= 0, got {t}")
        return _mixture_score_jac(density, t, X, False)[0]
    if t <= 0:
        raise DomainError(f"quadrature score needs t > 0, got {t}")
    mean, _, _ = tilt_mean_cov(density, t, X, spec or DEFAULT_SPEC)
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    return -X + (b / v) * (mean - b * X)


def score(density, t, x, spec: Optional[QuadratureSpec] = None, method="auto"):
    return score_batch(density, t, np.asarray(x, dtype=float).reshape(1, -1),
                       spec, method)[0]


def score_jacobian_batch(density, t, X, spec: Optional[QuadratureSpec] = None,
                         method="auto"):
    """grad s(t, x) for a batch of points; each Jacobian is symmetric."""
    method = _resolve_method(density, method)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if method == "closed_form":
        if t < 0:
            raise DomainError(f"score needs t >= 0, got {t}")
        return _mixture_score_jac(density, t, X, True)[1]
    if t <= 0:
        raise DomainError(f"quadrature score needs t > 0, got {t}")
    _, cov, _ = tilt_mean_cov(density, t, X, spec or DEFAULT_SPEC)
    b = math.exp(-t)
    v = -math.expm1(-2.0 * t)
    d = X.shape[1]
    eye = np.eye(d)
    return -(1.0 + b * b / v) * eye[None, :, :] + (b * b / (v * v)) * cov


def score_jacobian(density, t, x, spec: Optional[QuadratureSpec] = None,
                   method="auto"):
    return score_jacobian_batch(density, t,
                                np.asarray(x, dtype=float).reshape(1, -1),
                                spec, method)[0]


# ---------------------------------------------------------------------------
# Hermite tensors and the partition sum
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _he_coeffs(n):
    """Coefficients of probabilists' Hermite He_n, index = power of x."""
    if n == 0:
        return (1.0,)
    if n == 1:
        return (0.0, 1.0)
    prev2 = _he_coeffs(n - 2)
    prev1 = _he_coeffs(n - 1)
    out = [0.0] * (n + 1)
    for k, c in enumerate(prev1):       # x * He_{n-1}
        out[k + 1] += c
    for k, c in enumerate(prev2):       # -(n-1) He_{n-2}
        out[k] -= (n - 1) * c
    return tuple(out)


@lru_cache(maxsize=16)
def _set_partitions(m):
    """All partitions of {0..m-1} as tuples of blocks."""
    if m == 0:
        return ((),)
    out = []
    for sub in _set_partitions(m - 1):
        elem = m - 1
        out.append(sub + ((elem,),))
        for i, block in enumerate(sub):
            out.append(sub[:i] + (block + (elem,),) + sub[i + 1:])
    return tuple(out)


def _raw_w_moments(tm: TiltedMeasure, max_order):
    """Raw moment table E[prod_j W_j^{c_j}] for |c| <= max_order.

    W = (Y - b x)/sqrt(v) = Ytilde/sqrt(v) + delta with Ytilde centered, so
    raw moments follow from the stored centered tensors by a binomial shift.
    """
    b = math.exp(-tm.t)
    v = -math.expm1(-2.0 * tm.t)
    sqv = math.sqrt(v)
    d = len(tm.mean)
    delta = (tm.mean - b * np.asarray(tm.x, dtype=float)) / sqv

    def centered(multi):
        k = sum(multi)
        if k == 0:
            return 1.0
        if k == 1:
            return 0.0
        idx = tuple(i for i, c in enumerate(multi) for _ in range(c))
        return float(tm.centered_moments[k][idx]) / sqv ** k

    table = {}
    for multi in _multi_indices(d, max_order):
        total = 0.0
        ranges = [range(c + 1) for c in multi]
        for a in iproduct(*ranges):
            coef = 1.0
            for cj, aj, dj in zip(multi, a, delta):
                coef *= math.comb(cj, aj) * dj ** (cj - aj)
            if coef != 0.0:
                total += coef * centered(a)
        table[multi] = total
    return table


def _multi_indices(d, max_order):
    for total in range(max_order + 1):
        for c in _compositions(d, total):
            yield c


def _compositions(d, total):
    if d == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(d - 1, total - first):
            yield (first,) + rest


def _hermite_expectation(nu, raw):
    """E[prod_j He_{nu_j}(W_j)] from the raw moment table."""
    coeff_lists = [_he_coeffs(n) for n in nu]
    total = 0.0
    for powers in iproduct(*[range(len(c)) for c in coeff_lists]):
        coef = 1.0
        for cl, p in zip(coeff_lists, powers):
            coef *= cl[p]
        if coef != 0.0:
            total += coef * raw[tuple(powers)]
    return total


def _q_ratio_tensors(tm: TiltedMeasure, max_l):
    """T_l = grad^l Q_t r / Q_t r as symmetric tensors, l = 1..max_l."""
    d = len(tm.mean)
    b = math.exp(-tm.t)
    v = -math.expm1(-2.0 * tm.t)
    raw = _raw_w_moments(tm, max_l)
    tensors = {}
    for l in range(1, max_l + 1):
        T = np.zeros((d,) * l)
        cache = {}
        for idx in np.ndindex(*(d,) * l):
            nu = tuple(np.bincount(idx, minlength=d))
            if nu not in cache:
                cache[nu] = _hermite_expectation(nu, raw)
            T[idx] = cache[nu]
        tensors[l] = (b ** l / v ** (l / 2.0)) * T
    return tensors


def _log_q_tensor(T, m, d):
    """grad^m log Q from the ratio tensors T via the Faa di Bruno sum."""
    out = np.zeros((d,) * m)
    for partition in _set_partitions(m):
        coef = (-1.0) ** (len(partition) - 1) * math.factorial(len(partition) - 1)
        term = np.array(coef)
        order = []
        for block in partition:
            term = np.multiply.outer(term, T[len(block)])
            order.extend(block)
        out += np.transpose(term, np.argsort(order))
    return out


def log_q_derivatives(density, t, x, max_order,
                      spec: Optional[QuadratureSpec] = None):
    """grad^m log Q_t r(x) for m = 1..max_order (max_order <= 5)."""
    if max_order > 5:
        raise UnsupportedError("log Q derivatives supported up to order 5")
    if t <= 0:
        raise DomainError(f"log Q derivatives need t > 0, got {t}")
    if not isinstance(density, GaussianMixtureDensity) and density.dim > 1:
        raise UnsupportedError(
            "higher score derivatives: mixture path or 1-d quadrature only")
    x = np.asarray(x, dtype=float).reshape(-1)
    tm = tilted_moments(density, "p_tilt", t, x, order=min(max_order, 6),
                        spec=spec or DEFAULT_SPEC)
    T = _q_ratio_tensors(tm, max_order)
    d = len(x)
    return {m: _log_q_tensor(T, m, d) for m in range(1, max_order + 1)}


def score_higher(density, t, x, k, spec: Optional[QuadratureSpec] = None):
    """Tensors grad^j (s + Id)(t, x) = grad^{j+1} log Q_t r(x) for j = 1..k."""
    if k > 4:
        raise UnsupportedError("score_higher supports k <= 4")
    if k < 1:
        raise InputError("k must be >= 1")
    grads = log_q_derivatives(density, t, x, k + 1, spec)
    return {j: grads[j + 1] for j in range(1, k + 1)}


def score_time_derivative_identity(density, t, x,
                                   spec: Optional[QuadratureSpec] = None):
    """d/dt s(t,x) via the Fokker-Planck evolution of Q_t r.

    From d/dt Q = Lap Q - <x, grad Q> and G = grad log Q, M = grad^2 log Q,

        d/dt s = trace_jj grad^3 log Q + 2 M G - G - M x.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    grads = log_q_derivatives(density, t, x, 3, spec)
    G, M, T3 = grads[1], grads[2], grads[3]
    lap_grad = np.einsum("ijj->i", T3)
    return lap_grad + 2.0 * M @ G - G - M @ x


# ---------------------------------------------------------------------------
# Finite-difference cross-check and CLI record
# ---------------------------------------------------------------------------

@dataclass
class FdReport:
    h: float
    max_rel_dev: float
    jacobian_fd: np.ndarray
    jacobian: np.ndarray


def default_fd_step(t):
    """Step scaled to the local smoothing length sqrt(1 - e^{-2t})."""
    return max(1e-6, 1e-4 * math.sqrt(-math.expm1(-2.0 * t)))


def fd_check(density, t, x, h=None, spec: Optional[QuadratureSpec] = None,
             method="auto"):
    """Central-difference Jacobian from score values vs score_jacobian."""
    if t <= 0:
        raise DomainError(f"fd_check needs t > 0, got {t}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if h is None:
        h = default_fd_step(t)
    if h <= 0:
        raise InputError(f"fd step must be > 0, got {h}")
    d = len(x)
    pts = np.concatenate([x[None, :] + h * np.eye(d), x[None, :] - h * np.eye(d)])
    vals = score_batch(density, t, pts, spec, method)
    jac_fd = (vals[:d] - vals[d:]).T / (2.0 * h)
    jac = score_jacobian(density, t, x, spec, method)
    scale = max(1.0, float(np.max(np.abs(jac))))
    return FdReport(h=h, max_rel_dev=float(np.max(np.abs(jac_fd - jac)) / scale),
                    jacobian_fd=jac_fd, jacobian=jac)


@dataclass
class ScoreEvaluation:
    t: float
    x: np.ndarray
    value: np.ndarray
    jacobian: np.ndarray
    higher: Optional[Dict[int, np.ndarray]]
    method: str
    err_estimate: float

    def as_dict(self):
        from .spectral import sym_eigs
        eigs = sym_eigs(self.jacobian).spectrum
        rec = {
            "t": self.t,
            "x": np.asarray(self.x).tolist(),
            "value": np.asarray(self.value).tolist(),
            "jacobian": np.asarray(self.jacobian).tolist(),
            "eigenvalues": np.asarray(eigs).tolist(),
            "method": self.method,
            "err_estimate": self.err_estimate,
        }
        if self.higher:
            rec["higher"] = {str(j): T.tolist() for j, T in self.higher.items()}
        return rec


def evaluate(density, t, x, order=None, check_fd=False,
             spec: Optional[QuadratureSpec] = None, method="auto"):
    """Bundle value/jacobian (and optionally higher tensors) for reporting."""
    resolved = _resolve_method(density, method)
    val = score(density, t, x, spec, method)
    jac = score_jacobian(density, t, x, spec, method)
    higher = score_higher(density, t, x, order, spec) if order else None
    err = float("nan")
    if check_fd:
        err = fd_check(density, t, x, spec=spec, method=method).max_rel_dev
    return ScoreEvaluation(t=t, x=np.asarray(x, dtype=float).reshape(-1),
                           value=val, jacobian=jac, higher=higher,
                           method=resolved, err_estimate=err)


def make_score_fn(density, schedule=None, spec: Optional[QuadratureSpec] = None):
    """Vectorized (t, X) -> s*(t, X) in schedule time.

    With (tau, scale) = normalize_time(schedule, t), the general-process
    score is s*(t, x) = scale^{-1} s(tau, x / scale).
    """
    from .forward import ForwardSchedule, normalize_time

    if schedule is None:
        return lambda t, X: score_batch(density, t, X, spec)

    def fn(t, X):
        tau, scale = normalize_time(schedule, t)
        return score_batch(density, tau, np.asarray(X) / scale, spec) / scale

    return fn
