"""Eigenvalue extraction, concentration sets and Jacobian supremum scans.

``sup over R^d`` is operationalized as a supremum over a documented probe
family -- a lattice over the working box, scrambled-Sobol interior points,
dyadic clusters around the density's center and declared kinks, and (for
compact supports) boundary-offset points at distances 2^j sqrt(t) -- with
optional local coordinate ascent from the best probe.  Recorded suprema are
certified lower bounds on the true supremum.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from . import rng as rngmod
from .densities import (Ball, Box, CompactDensity, GaussianMixtureDensity,
                        PerturbedLogConcaveDensity)
from .errors import InputError, UnsupportedError
from .forward import sample_marginal
from .score import score_jacobian_batch
from .tilted import DEFAULT_SPEC, QuadratureSpec

__all__ = [
    "EigResult",
    "sym_eigs",
    "ConcentrationSet",
    "concentration_set",
    "ScanRow",
    "ScanReport",
    "sup_scan",
    "IntegrabilityReport",
    "integrability",
    "log_time_grid",
]


# ---------------------------------------------------------------------------
# Cyclic Jacobi eigenvalues for small dense symmetric matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigResult:
    lmin: float
    lmax: float
    spectrum: np.ndarray


def sym_eigs(M, tol_sym=1e-8) -> EigResult:
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.

    Iterates sweeps until the off-diagonal Frobenius norm falls below
    1e-12 relative to the matrix scale.  Asymmetric input (beyond tol_sym
    relative) is rejected.
    """
    A = np.array(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"sym_eigs needs a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.linalg.norm(A)))
    if float(np.max(np.abs(A - A.T))) > tol_sym * scale:
        raise InputError("matrix is not symmetric within tolerance")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    if n == 1:
        lam = float(A[0, 0])
        return EigResult(lam, lam, np.array([lam]))

    def offnorm(B):
        return math.sqrt(max(0.0, float(np.sum(B * B) - np.sum(np.diag(B) ** 2))))

    tol = 1e-12 * scale
    for _ in range(60):
        if offnorm(A) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= tol / (n * n):
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
                A = 0.5 * (A + A.T)
    spectrum = np.sort(np.diag(A))
    return EigResult(float(spectrum[0]), float(spectrum[-1]), spectrum)


def _lams_batch(J):
    """(lmin, lmax, opnorm) arrays for a batch of symmetric matrices."""
    if J.shape[-1] == 1:
        lam = J[:, 0, 0]
        return lam, lam, np.abs(lam)
    lmins = np.empty(len(J))
    lmaxs = np.empty(len(J))
    for i, M in enumerate(J):
        r = sym_eigs(M)
        lmins[i], lmaxs[i] = r.lmin, r.lmax
    return lmins, lmaxs, np.maximum(np.abs(lmins), np.abs(lmaxs))


# ---------------------------------------------------------------------------
# Concentration sets A_t^eps
# ---------------------------------------------------------------------------

@dataclass
class ConcentrationSet:
    """Convex set carrying >= 1-eps of the p_t mass.

    Small-time regime: a sublevel set {u <= tau_u} calibrated at the
    empirical (1-eps)-quantile of u over p_t samples (inflated 5%); for
    compact targets, the inflated support.  Large-time regime: a ball around
    the potential minimizer with quantile-calibrated radius.  Thresholds
    replace the non-explicit constants of the construction; the testable
    property is the recertified empirical mass.
    """

    epsilon: float
    regime: str                      # "small_time" | "large_time"
    descriptor: dict
    empirical_mass: float
    mass_stderr: float
    bounding_lo: np.ndarray
    bounding_hi: np.ndarray
    center: np.ndarray
    member_fn: Callable = field(repr=False)

    def contains(self, X):
        return self.member_fn(np.atleast_2d(np.asarray(X, dtype=float)))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.bounding_hi - self.bounding_lo))


def _density_center(density, samples):
    """Representative center: argmin u (or mode proxy) of the target."""
    if isinstance(density, PerturbedLogConcaveDensity):
        u, _, _ = density.u_eval(samples)
        x = samples[int(np.argmin(u))]
        # few Newton steps on u with the declared Hessian
        for _ in range(12):
            _, g, h = density.u_eval(x.reshape(1, -1))
            step = np.linalg.solve(h[0], g[0])
            x = x - step
            if np.linalg.norm(step) < 1e-12:
                break
        return x
    if isinstance(density, CompactDensity):
        if isinstance(density.support, Box):
            return 0.5 * (np.asarray(density.support.lo) + np.asarray(density.support.hi))
        return np.asarray(density.support.center)
    logp, _ = density.log_density_batch(samples)
    return samples[int(np.argmax(logp))]


def concentration_set(density, t, epsilon, n_samples=100_000, seed=0,
                      switch_exponent=1.0) -> ConcentrationSet:
    """p_t-high-probability convex set A_t^eps, regime switching once in t."""
    if not (0.0 < epsilon < 0.25):
        raise InputError(f"epsilon must lie in (0, 1/4), got {epsilon}")
    if t < 0:
        raise InputError(f"time must be >= 0, got {t}")
    t_switch = math.log(1.0 / epsilon) ** (-switch_exponent)
    regime = "small_time" if t <= t_switch else "large_time"

    X = sample_marginal(density, t, n_samples, rng=rngmod.spawn(seed, 0xC5, 0))
    center = _density_center(density, X)

    if regime == "large_time" or isinstance(density, GaussianMixtureDensity):
        radii = np.linalg.norm(X - center[None, :], axis=1)
        radius = float(np.quantile(radii, 1.0 - epsilon)) * 1.05
        descriptor = {"kind": "ball", "center": center.tolist(), "radius": radius}
        member = lambda P: np.linalg.norm(P - center[None, :], axis=1) <= radius
        lo, hi = center - radius, center + radius
        if regime == "small_time":
            descriptor["note"] = "mixture: ball stands in for the u-sublevel set"
    elif isinstance(density, CompactDensity):
        supp = density.support.inflate(1.05)
        if isinstance(supp, Box):
            lo, hi = np.asarray(supp.lo), np.asarray(supp.hi)
            descriptor = {"kind": "box", "lo": lo.tolist(), "hi": hi.tolist()}
        else:
            lo = np.asarray(supp.center) - supp.radius
            hi = np.asarray(supp.center) + supp.radius
            descriptor = {"kind": "ball", "center": list(supp.center),
                          "radius": supp.radius}
        member = supp.contains
    else:
        u_vals, _, _ = density.u_eval(X)
        tau_u = float(np.quantile(u_vals, 1.0 - epsilon))
        tau_u = tau_u + 0.05 * (tau_u - float(u_vals.min()))
        descriptor = {"kind": "sublevel", "threshold": tau_u}
        member = lambda P: density.u_eval(P)[0] <= tau_u
        inside = X[member(X)]
        pad = 0.05 * (inside.max(axis=0) - inside.min(axis=0) + 1e-12)
        lo, hi = inside.min(axis=0) - pad, inside.max(axis=0) + pad

    fresh = sample_marginal(density, t, n_samples, rng=rngmod.spawn(seed, 0xC5, 1))
    hits = member(fresh)
    mass = float(np.mean(hits))
    stderr = math.sqrt(max(mass * (1.0 - mass), 1e-12) / n_samples)
    return ConcentrationSet(epsilon=epsilon, regime=regime, descriptor=descriptor,
                            empirical_mass=mass, mass_stderr=stderr,
                            bounding_lo=np.asarray(lo, dtype=float),
                            bounding_hi=np.asarray(hi, dtype=float),
                            center=np.asarray(center, dtype=float),
                            member_fn=member)


# ---------------------------------------------------------------------------
# Supremum scans over space and time
# ---------------------------------------------------------------------------

@dataclass
class ScanRow:
    t: float
    sup_lmax_plus_id: float
    inf_lmin: float
    sup_opnorm: float
    argmax: np.ndarray
    n_probes: int


@dataclass
class ScanReport:
    rows: list
    density_label: str
    set_source: str
    seed: int
    probes_per_time: int
    eps: Optional[float] = None
    set_descriptor: Optional[dict] = None
    metadata: dict = field(default_factory=dict)

    @property
    def ts(self):
        return np.array([r.t for r in self.rows])

    def series(self, quantity):
        key = {"lmax_plus_id": "sup_lmax_plus_id",
               "inf_lmin": "inf_lmin",
               "opnorm": "sup_opnorm"}[quantity]
        return np.array([getattr(r, key) for r in self.rows])


def log_time_grid(t_min, t_max, per_decade=40):
    """Log-spaced time grid, default 40 points per decade."""
    if not (0 < t_min < t_max):
        raise InputError("need 0 < t_min < t_max")
    n = max(2, int(round(per_decade * math.log10(t_max / t_min))) + 1)
    return np.exp(np.linspace(math.log(t_min), math.log(t_max), n))


def _global_box(density):
    if isinstance(density, GaussianMixtureDensity):
        std = math.sqrt(float(np.max(np.linalg.eigvalsh(density.covariances)))) + 1.0
        lo = density.means.min(axis=0) - 4.0 * std
        hi = density.means.max(axis=0) + 4.0 * std
        return lo, hi
    if isinstance(density, CompactDensity):
        if isinstance(density.support, Box):
            lo = np.asarray(density.support.lo)
            hi = np.asarray(density.support.hi)
        else:
            c = np.asarray(density.support.center)
            lo, hi = c - density.support.radius, c + density.support.radius
        pad = 0.75 * (hi - lo)
        return lo - pad, hi + pad
    L = max(3.0, 4.0 / math.sqrt(density.profile.alpha))
    if density.kinks:
        L = max(L, max(abs(k) for k in density.kinks) + 1.0)
    lo = -L * np.ones(density.dim)
    return lo, -lo


def _probe_family(density, t, lo, hi, center, probes_per_time, seed, t_index):
    """Deterministic probe set; every point is recorded in the scan."""
    d = len(lo)
    span = hi - lo
    pts = []
    # lattice (center included via odd count)
    n_side = max(3, int(round((probes_per_time / 2.0) ** (1.0 / d))) | 1)
    axes = [np.linspace(lo[j], hi[j], n_side) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts.append(np.stack([m.ravel() for m in mesh], axis=1))
    # scrambled Sobol interior points (power-of-2 count for balance)
    m_qmc = max(3, int(math.ceil(math.log2(max(8, probes_per_time // 4)))))
    sob = qmc.Sobol(d, scramble=True,
                    seed=int(rngmod.spawn(seed, 0x50B, t_index).integers(2 ** 31)))
    pts.append(lo + sob.random_base2(m_qmc) * span)
    # dyadic clusters around the center and any declared kinks
    scales = 2.0 ** -np.arange(0, 14)
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        offs = np.concatenate([scales, -scales]) * span[j] * 0.5
        pts.append(center[None, :] + offs[:, None] * e[None, :])
    pts.append(center[None, :])
    if getattr(density, "kinks", ()):
        for k in density.kinks:
            base = center.copy()
            base[0] = k
            offs = np.concatenate([[0.0], scales, -scales])
            col = np.tile(base, (len(offs), 1))
            col[:, 0] += offs
            pts.append(col)
    # boundary-offset points for compact supports, distances 2^j sqrt(t)
    if isinstance(density, CompactDensity) and isinstance(density.support, Box):
        sq = math.sqrt(t)
        dist = 2.0 ** np.arange(-8.0, 5.0) * sq
        blo = np.asarray(density.support.lo)
        bhi = np.asarray(density.support.hi)
        for j in range(d):
            mid = 0.5 * (blo + bhi)
            for face, sign in ((blo[j], +1), (bhi[j], -1)):
                for side in (+1.0, -1.0):
                    col = np.tile(mid, (len(dist), 1))
                    col[:, j] = face + side * sign * dist
                    pts.append(col)
    P = np.concatenate(pts, axis=0)
    P = np.unique(np.round(P, 14), axis=0)
    return P


def _ascend(density, t, x0, h0, n_steps, spec, member=None):
    """Local coordinate ascent on lmax(grad s + Id); returns visited points."""
    d = len(x0)
    x = x0.copy()
    h = h0
    visited = [x.copy()]

    def val(p):
        J = score_jacobian_batch(density, t, p.reshape(1, -1), spec)[0]
        return sym_eigs(J).lmax + 1.0

    best = val(x)
    for _ in range(n_steps):
        improved = False
        for j in range(d):
            for sgn in (+1.0, -1.0):
                cand = x.copy()
                cand[j] += sgn * h
                if member is not None and not member(cand.reshape(1, -1))[0]:
                    continue
                v = val(cand)
                visited.append(cand.copy())
                if v > best:
                    best, x, improved = v, cand, True
        if not improved:
            h *= 0.5
            if h < 1e-14:
                break
    return np.array(visited)


def sup_scan(density, time_grid, set_source="global", probes_per_time=128,
             refine=False, seed=0, eps=0.05,
             spec: Optional[QuadratureSpec] = None) -> ScanReport:
    """Per-time suprema of Jacobian spectral quantities over the probe family."""
    time_grid = np.asarray(time_grid, dtype=float)
    if np.any(time_grid <= 0):
        raise InputError("time grid must be strictly positive")
    if set_source not in ("global", "concentration"):
        raise InputError(f"set_source must be global|concentration, got {set_source!r}")
    if probes_per_time < 64:
        warnings.warn("probes_per_time < 64: sparse probe set, suprema may be loose")
    spec = spec or DEFAULT_SPEC

    def one_time(item):
        ti, t = item
        member = None
        descriptor = None
        if set_source == "concentration":
            cs = concentration_set(density, t, eps, n_samples=20_000,
                                   seed=seed + 7 * ti)
            lo, hi, center = cs.bounding_lo, cs.bounding_hi, cs.center
            member, descriptor = cs.member_fn, cs.descriptor
        else:
            lo, hi = _global_box(density)
            center = _density_center(
                density, sample_marginal(density, max(t, 1e-6), 2048,
                                         rng=rngmod.spawn(seed, 0xCE, ti)))
        P = _probe_family(density, t, lo, hi, center, probes_per_time, seed, ti)
        if member is not None:
            keep = member(P)
            if keep.any():
                P = P[keep]
        J = score_jacobian_batch(density, t, P, spec)
        lmins, lmaxs, opn = _lams_batch(J)
        if refine:
            i0 = int(np.argmax(lmaxs))
            h0 = float(np.max(hi - lo)) / max(8, probes_per_time // 4)
            visited = _ascend(density, t, P[i0], h0, 20, spec, member)
            J2 = score_jacobian_batch(density, t, visited, spec)
            l2min, l2max, op2 = _lams_batch(J2)
            P = np.concatenate([P, visited])
            lmins = np.concatenate([lmins, l2min])
            lmaxs = np.concatenate([lmaxs, l2max])
            opn = np.concatenate([opn, op2])
        iarg = int(np.argmax(lmaxs))
        return ScanRow(t=float(t),
                       sup_lmax_plus_id=float(lmaxs[iarg] + 1.0),
                       inf_lmin=float(np.min(lmins)),
                       sup_opnorm=float(np.max(opn)),
                       argmax=P[iarg].copy(),
                       n_probes=len(P)), descriptor

    items = list(enumerate(time_grid))
    workers = int(os.environ.get("SCORELAB_WORKERS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one_time, items))
    else:
        results = [one_time(it) for it in items]
    rows = [r for r, _ in results]
    descriptor = next((dsc for _, dsc in results if dsc is not None), None)
    return ScanReport(rows=rows, density_label=getattr(density, "label", "?"),
                      set_source=set_source, seed=seed,
                      probes_per_time=probes_per_time, eps=eps,
                      set_descriptor=descriptor,
                      metadata={"refine": refine,
                                "quadrature": {"nodes_per_axis": spec.nodes_per_axis,
                                               "truncation_radius": spec.truncation_radius}})


# ---------------------------------------------------------------------------
# Time-integrability functional
# ---------------------------------------------------------------------------

@dataclass
class IntegrabilityReport:
    integral: float
    tail_low: float
    tail_high: float
    quantity: str
    t_lo: float
    t_hi: float

    def __float__(self):
        return self.integral


def integrability(scan: ScanReport, quantity="lmax_plus_id",
                  t_lo=None, t_hi=None) -> IntegrabilityReport:
    """Trapezoid integral of the positive part of a scanned supremum series.

    Requires coverage down to t_lo <= 1e-5 and up to t_hi >= 5; reports
    power-law / exponential tail estimates for the two ends.
    """
    ts = scan.ts
    vals = scan.series(quantity)
    if t_lo is not None or t_hi is not None:
        keep = np.ones(len(ts), dtype=bool)
        if t_lo is not None:
            keep &= ts >= t_lo * (1 - 1e-9)
        if t_hi is not None:
            keep &= ts <= t_hi * (1 + 1e-9)
        ts, vals = ts[keep], vals[keep]
    if len(ts) < 8:
        raise InputError("integrability needs at least 8 grid points")
    if ts[0] > 1e-5 * (1 + 1e-9) or ts[-1] < 5 * (1 - 1e-9):
        raise InputError(
            f"grid covers [{ts[0]:.3g}, {ts[-1]:.3g}]; required range is "
            f"t_lo <= 1e-5 and t_hi >= 5")
    pos = np.maximum(vals, 0.0)
    integral = float(np.trapezoid(pos, ts))

    # small-t tail: power-law extrapolation over the first decade
    head = ts <= ts[0] * 10.0
    tail_low = math.inf
    if np.all(pos[head] > 0) and head.sum() >= 3:
        sl, ic = np.polyfit(np.log(ts[head]), np.log(pos[head]), 1)
        if sl > -1.0:
            tail_low = float(math.exp(ic) * ts[0] ** (sl + 1.0) / (sl + 1.0))
    # large-t tail: exponential-decay extrapolation over the last decade
    tail_cut = ts >= ts[-1] / 10.0
    tail_high = math.inf
    if np.all(pos[tail_cut] > 0) and tail_cut.sum() >= 3:
        c, ic = np.polyfit(ts[tail_cut], np.log(pos[tail_cut]), 1)
        if c < 0:
            tail_high = float(math.exp(ic + c * ts[-1]) / (-c))
    elif np.all(pos[tail_cut] == 0.0):
        tail_high = 0.0
    return IntegrabilityReport(integral=integral, tail_low=tail_low,
                               tail_high=tail_high, quantity=quantity,
                               t_lo=float(ts[0]), t_hi=float(ts[-1]))
