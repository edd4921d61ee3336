"""Closed-form limit constants: duration scale theta, LLN targets, Gaussian
covariance kernels, and CLT variance constants.

theta is the unique positive root of

    f(theta) = sum_i E[L^i] gamma_i (1 - exp(-beta_i theta)) - theta,

which exists iff the mean matrix is supercritical (rho(M) > 1). The limiting
fraction of infected vertices is w_i(theta) = gamma_i (1 - exp(-beta_i theta))
per type, w = sum_i w_i(theta) in total.

The variance constants follow the delta-method chain around theta. With

    D      = 1 - sum_i beta_i gamma_i E[L^i] e^{-beta_i theta}      (= -f'(theta))
    s2N_i  = gamma_i (1 - e^{-beta_i theta}) e^{-beta_i theta}
    V      = sum_i sigma_i^2 gamma_i (1 - e^{-beta_i theta})
             + sum_i E[L^i]^2 s2N_i + theta
             - 2 theta sum_i E[L^i] gamma_i beta_i e^{-beta_i theta}

the continuous-clock duration has variance V / D^2, the discrete duration
V / D^2 - theta, and the infected count

    c_w^2 sum_i sigma_i^2 gamma_i (1 - e^{-beta_i theta})
    + sum_i (1 + c_w E[L^i])^2 s2N_i + c_w^2 theta
    - 2 c_w theta sum_i (1 + c_w E[L^i]) gamma_i beta_i e^{-beta_i theta}

where c_w is selectable between two published variants (see CwVariant); the
"proof" variant c_w = (sum_i beta_i gamma_i e^{-beta_i theta}) / D is the one
consistent with the delta-method derivation and is the default. The Monte
Carlo harness arbitrates empirically (see the variance checks).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import branching
from .errors import DegenerateDenominator, DegenerateVariance, DomainError, Subcritical
from .model import ModelSpec, mean_matrix, spectral_radius

CwVariant = Literal["proof", "display"]

F_TOL = 1e-12


def f_theta(spec: ModelSpec, theta: float, *, derivatives: bool = False):
    """Evaluate f (and optionally f', f'') at theta >= 0."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    f = -theta
    f1 = -1.0
    f2 = 0.0
    for g, b, law in zip(spec.gamma, spec.beta, spec.offspring):
        decay = math.exp(-b * theta)
        f += law.mean * g * (1.0 - decay)
        f1 += law.mean * g * b * decay
        f2 -= law.mean * g * b * b * decay
    if not derivatives:
        return f
    return f, f1, f2


def solve_theta(spec: ModelSpec, *, tol: float = F_TOL) -> float:
    """Unique positive root of f, to |f(theta)| < tol.

    Bisection on a guaranteed bracket (f is concave with f(0)=0, f'(0)=rho-1>0
    and f < 0 at sum_i gamma_i E[L^i]), then Newton polish. Raises Subcritical
    when rho(M) <= 1; f'(0) = rho(M) - 1 exactly, so that is the test used.
    """
    _, slope0, _ = f_theta(spec, 0.0, derivatives=True)
    if slope0 <= 0.0:
        raise Subcritical(f"rho(M) = {slope0 + 1.0:.6g} <= 1; theta does not exist")
    hi = math.fsum(g * law.mean for g, law in zip(spec.gamma, spec.offspring))
    lo = hi
    for _ in range(200):
        lo *= 0.5
        if f_theta(spec, lo) > 0.0:
            break
    else:
        raise Subcritical("could not bracket a positive root; f <= 0 near 0")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f_theta(spec, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    for _ in range(50):
        f, f1, _ = f_theta(spec, theta, derivatives=True)
        if abs(f) < tol:
            break
        if f1 == 0.0:
            break
        theta -= f / f1
    return theta


def lln_targets(spec: ModelSpec) -> tuple[float, np.ndarray, float]:
    """(theta, per-type infected fractions w_i(theta), total w)."""
    theta = solve_theta(spec)
    gamma = np.asarray(spec.gamma)
    beta = np.asarray(spec.beta)
    w_vec = gamma * (1.0 - np.exp(-beta * theta))
    return theta, w_vec, float(w_vec.sum())


def _variance_pieces(spec: ModelSpec, theta: float):
    gamma = np.asarray(spec.gamma)
    beta = np.asarray(spec.beta)
    means = spec.offspring_means
    sig2 = spec.offspring_variances
    decay = np.exp(-beta * theta)
    d = 1.0 - float(np.sum(beta * gamma * means * decay))
    if d <= 0.0:
        raise DegenerateDenominator(
            f"1 - sum beta_i gamma_i E[L^i] e^(-beta_i theta) = {d:.6g} <= 0"
        )
    s2n = gamma * (1.0 - decay) * decay
    v = float(
        np.sum(sig2 * gamma * (1.0 - decay))
        + np.sum(means**2 * s2n)
        + theta
        - 2.0 * theta * np.sum(means * gamma * beta * decay)
    )
    return gamma, beta, means, sig2, decay, d, s2n, v


def c_w_value(spec: ModelSpec, theta: float, variant: CwVariant) -> float:
    """Taylor coefficient tying the infected-count fluctuation to the duration one.

    Two published numerators disagree; both are available:
      proof:   sum_i beta_i gamma_i e^{-beta_i theta}
      display: 1 - sum_i beta_i gamma_i e^{-beta_i theta}
    """
    gamma = np.asarray(spec.gamma)
    beta = np.asarray(spec.beta)
    decay = np.exp(-beta * theta)
    d = 1.0 - float(np.sum(beta * gamma * spec.offspring_means * decay))
    if d <= 0.0:
        raise DegenerateDenominator(f"denominator {d:.6g} <= 0")
    num = float(np.sum(beta * gamma * decay))
    if variant == "proof":
        return num / d
    if variant == "display":
        return (1.0 - num) / d
    raise ValueError(f"unknown c_w variant {variant!r}")


def clt_variances(
    spec: ModelSpec, c_w_variant: CwVariant = "proof", *, theta: float | None = None
) -> tuple[float, float, float]:
    """(var_tau_tilde, var_tau, var_w) for the standardized limits.

    theta defaults to the solved root; passing one explicitly evaluates the
    same expressions at that point (used for negative-control overrides).
    Raises Subcritical, DegenerateDenominator, or DegenerateVariance (a
    negative value is reported, never clamped).
    """
    if theta is None:
        theta = solve_theta(spec)
    gamma, beta, means, sig2, decay, d, s2n, v = _variance_pieces(spec, theta)
    var_tau_tilde = v / d**2
    var_tau = var_tau_tilde - theta
    cw = c_w_value(spec, theta, c_w_variant)
    var_w = float(
        cw**2 * np.sum(sig2 * gamma * (1.0 - decay))
        + np.sum((1.0 + cw * means) ** 2 * s2n)
        + cw**2 * theta
        - 2.0 * cw * theta * np.sum((1.0 + cw * means) * gamma * beta * decay)
    )
    for name, val in (("var_tau_tilde", var_tau_tilde), ("var_tau", var_tau), ("var_w", var_w)):
        if val < 0.0:
            raise DegenerateVariance(f"{name} = {val:.6g} < 0")
    return var_tau_tilde, var_tau, var_w


@dataclass(frozen=True, eq=False)
class Predictions:
    """Every closed-form constant the Monte Carlo harness validates against."""

    theta: float
    w_vector: tuple
    w_total: float
    rho: float
    sigma_mgw: float
    sigma_n: tuple          # per-type variance scale gamma_i (1-e^{-b th}) e^{-b th}
    var_tau_tilde: float
    var_tau: float
    var_w: float            # under the selected c_w variant
    var_w_proof: float
    var_w_display: float
    c_w: float
    c_w_variant: str

    def to_json_dict(self) -> dict:
        return {
            "theta": self.theta,
            "w_vector": list(self.w_vector),
            "w_total": self.w_total,
            "rho": self.rho,
            "sigma_mgw": self.sigma_mgw,
            "sigma_n": list(self.sigma_n),
            "var_tau_tilde": self.var_tau_tilde,
            "var_tau": self.var_tau,
            "var_w": self.var_w,
            "var_w_proof": self.var_w_proof,
            "var_w_display": self.var_w_display,
            "c_w": self.c_w,
            "c_w_variant": self.c_w_variant,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Predictions":
        return cls(
            theta=doc["theta"],
            w_vector=tuple(doc["w_vector"]),
            w_total=doc["w_total"],
            rho=doc["rho"],
            sigma_mgw=doc["sigma_mgw"],
            sigma_n=tuple(doc["sigma_n"]),
            var_tau_tilde=doc["var_tau_tilde"],
            var_tau=doc["var_tau"],
            var_w=doc["var_w"],
            var_w_proof=doc["var_w_proof"],
            var_w_display=doc["var_w_display"],
            c_w=doc["c_w"],
            c_w_variant=doc["c_w_variant"],
        )


def predictions(spec: ModelSpec, c_w_variant: CwVariant = "proof") -> Predictions:
    """Assemble all limit constants for a supercritical spec."""
    theta, w_vec, w_total = lln_targets(spec)
    rho = spectral_radius(mean_matrix(spec))
    sigma_mgw, _ = branching.extinction_probability(spec)
    gamma = np.asarray(spec.gamma)
    beta = np.asarray(spec.beta)
    decay = np.exp(-beta * theta)
    s2n = gamma * (1.0 - decay) * decay
    vtt, vt, _ = clt_variances(spec, c_w_variant)
    _, _, vw_proof = clt_variances(spec, "proof")
    _, _, vw_display = clt_variances(spec, "display")
    cw = c_w_value(spec, theta, c_w_variant)
    return Predictions(
        theta=theta,
        w_vector=tuple(float(x) for x in w_vec),
        w_total=w_total,
        rho=rho,
        sigma_mgw=sigma_mgw,
        sigma_n=tuple(float(x) for x in s2n),
        var_tau_tilde=vtt,
        var_tau=vt,
        var_w=vw_proof if c_w_variant == "proof" else vw_display,
        var_w_proof=vw_proof,
        var_w_display=vw_display,
        c_w=cw,
        c_w_variant=c_w_variant,
    )


@dataclass(frozen=True)
class CovarianceKernel:
    """Covariance kernel of one limiting Gaussian object.

    Kinds (type_index is zero-based where present):
      n_type(i):  Cov of the type-i infected-count limit at times (s, t),
                  normalized per type:  (1 - e^{-beta_i min}) e^{-beta_i max}.
      n_total:    Cov of the total-count limit:
                  sum_i gamma_i (1 - e^{-beta_i min}) e^{-beta_i max}.
      t_type(i):  Cov of the acquisition-time limit at fractions (q, q'):
                  min(q,q') / (beta_i^2 (1 - min(q,q'))), domain [0, 1).
      joint(i):   Cross covariance of the sqrt(n)-scaled type-i count at time s
                  with the attempt-count Brownian term at time t:
                  min(s,t) gamma_i beta_i e^{-beta_i s}  (s is the count time;
                  this kernel is role-ordered, not symmetric in (s, t)).
      poisson:    Cov of the attempt-count Brownian term: min(s, t).
    """

    kind: str
    spec: ModelSpec
    type_index: int | None = None

    @classmethod
    def n_type(cls, spec: ModelSpec, i: int) -> "CovarianceKernel":
        return cls("n_type", spec, i)

    @classmethod
    def n_total(cls, spec: ModelSpec) -> "CovarianceKernel":
        return cls("n_total", spec)

    @classmethod
    def t_type(cls, spec: ModelSpec, i: int) -> "CovarianceKernel":
        return cls("t_type", spec, i)

    @classmethod
    def joint(cls, spec: ModelSpec, i: int) -> "CovarianceKernel":
        return cls("joint", spec, i)

    @classmethod
    def poisson(cls, spec: ModelSpec) -> "CovarianceKernel":
        return cls("poisson", spec)


def covariance(kernel: CovarianceKernel, s: float, t: float) -> float:
    """Evaluate a covariance kernel at the (ordered) pair (s, t)."""
    spec = kernel.spec
    if kernel.kind == "t_type":
        if not (0.0 <= s < 1.0 and 0.0 <= t < 1.0):
            raise DomainError(f"acquisition fractions must lie in [0,1), got ({s}, {t})")
    elif s < 0.0 or t < 0.0:
        raise DomainError(f"times must be >= 0, got ({s}, {t})")
    lo, hi = (s, t) if s <= t else (t, s)
    if kernel.kind == "n_type":
        b = spec.beta[kernel.type_index]
        return (1.0 - math.exp(-b * lo)) * math.exp(-b * hi)
    if kernel.kind == "n_total":
        gamma = np.asarray(spec.gamma)
        beta = np.asarray(spec.beta)
        return float(np.sum(gamma * (1.0 - np.exp(-beta * lo)) * np.exp(-beta * hi)))
    if kernel.kind == "t_type":
        b = spec.beta[kernel.type_index]
        return lo / (b**2 * (1.0 - lo))
    if kernel.kind == "joint":
        i = kernel.type_index
        return lo * spec.gamma[i] * spec.beta[i] * math.exp(-spec.beta[i] * s)
    if kernel.kind == "poisson":
        return lo
    raise ValueError(f"unknown kernel kind {kernel.kind!r}")
