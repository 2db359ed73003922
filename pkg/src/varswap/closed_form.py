"""Analytic oracles: explosion time, measure change, 3/2 transforms and moments.

All functions are pure and work on plain floats.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Optional

from .errors import DomainError, RangeViolation
from .models import (
    CEV,
    CEV_L2_ALPHA,
    BlackScholes,
    JumpDiffusion,
    ModelSpec,
    ThreeHalves,
    VolOfVol,
)
from .special import gamma_fn, kummer_m

__all__ = [
    "ExplosionBranch",
    "ExplosionReport",
    "explosion_time",
    "QTransform",
    "q_transform",
    "laplace_transform_32",
    "dufresne_moment",
    "variance_moment",
    "bs_gap",
    "bs_bound_inputs",
    "theorem3_constant",
    "ConditionReport",
    "check_theorem4_conditions",
    "reciprocal_bessel3_mean",
]


class ExplosionBranch(str, enum.Enum):
    POS_DELTA_POS_CHI = "PosDeltaPosChi"
    NEG_DELTA = "NegDelta"
    INFINITE = "Infinite"


@dataclass(frozen=True)
class ExplosionReport:
    chi: float
    delta: float
    branch: ExplosionBranch
    tstar: float

    def to_dict(self) -> dict[str, Any]:
        return {"chi": self.chi, "delta": self.delta, "branch": self.branch.value, "tstar": self.tstar}


def explosion_time(kappa: float, eta: float, rho: float) -> ExplosionReport:
    """First time at which E(v_t^2) becomes infinite in the vol-of-vol model.

    With chi = 2 rho eta - kappa and Delta = chi^2 - 2 eta^2:

    * Delta >= 0, chi > 0: (1/sqrt(Delta)) ln((chi + sqrt(Delta)) / (chi - sqrt(Delta)))
    * Delta < 0: (2/sqrt(-Delta)) (arctan(sqrt(-Delta)/chi) + pi 1{chi < 0})
    * otherwise: +inf

    The first branch is evaluated as (2/sqrt(Delta)) atanh(sqrt(Delta)/chi),
    and Delta = 0 returns its limit 2/chi.
    """
    if not (kappa > 0 and eta > 0):
        raise RangeViolation(f"kappa, eta > 0 required, got kappa={kappa}, eta={eta}")
    if not -1.0 <= rho <= 1.0:
        raise RangeViolation(f"rho in [-1, 1] required, got {rho}")
    chi = 2.0 * rho * eta - kappa
    delta = chi * chi - 2.0 * eta * eta
    if delta >= 0.0 and chi > 0.0:
        if delta == 0.0:
            tstar = 2.0 / chi
        else:
            root = math.sqrt(delta)
            tstar = 2.0 / root * math.atanh(root / chi)
        return ExplosionReport(chi, delta, ExplosionBranch.POS_DELTA_POS_CHI, tstar)
    if delta < 0.0:
        root = math.sqrt(-delta)
        # atan2(root, chi) == arctan(root/chi) + pi 1{chi<0}, and pi/2 at chi == 0
        tstar = 2.0 / root * math.atan2(root, chi)
        return ExplosionReport(chi, delta, ExplosionBranch.NEG_DELTA, tstar)
    return ExplosionReport(chi, delta, ExplosionBranch.INFINITE, math.inf)


@dataclass(frozen=True)
class QTransform:
    gamma: float
    # max(0, 2 chi / (eta sqrt(1 - rho^2))), the minimum strength for chi_q <= -chi
    gamma_bound: float
    kappa_q: float
    theta_q: float
    chi_q: float
    delta_q: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "gamma_bound": self.gamma_bound,
            "kappa_q": self.kappa_q,
            "theta_q": self.theta_q,
            "chi_q": self.chi_q,
            "delta_q": self.delta_q,
        }


def q_transform(
    kappa: float, theta: float, eta: float, rho: float, gamma: Optional[float] = None
) -> QTransform:
    """Equivalent-measure change that removes the second-moment explosion.

    The density dY = -Y gamma sqrt(w) dW' turns the vol-of-vol dynamics into
    a CIR with kappa_q = kappa + gamma eta sqrt(1 - rho^2) and
    theta_q = kappa theta / kappa_q.

    The default gamma is ``gamma_bound = max(0, 2 chi / (eta sqrt(1 - rho^2)))``,
    which removes the explosion whenever Delta >= 0.  When chi > 0 and
    Delta < 0 that choice leaves T* finite, so gamma is raised to
    (chi + sqrt(2) eta) / (eta sqrt(1 - rho^2)), the smallest value giving
    chi_q <= -sqrt(2) eta.
    """
    if not abs(rho) < 1.0:
        raise DomainError(f"q_transform needs |rho| < 1, got {rho}")
    if not (kappa > 0 and theta > 0 and eta > 0):
        raise RangeViolation("kappa, theta, eta > 0 required")
    chi = 2.0 * rho * eta - kappa
    delta = chi * chi - 2.0 * eta * eta
    scale = eta * math.sqrt(1.0 - rho * rho)
    bound = max(0.0, 2.0 * chi / scale)
    raised = False
    if gamma is None:
        gamma = bound
        if chi > 0.0 and delta < 0.0:
            gamma = (chi + math.sqrt(2.0) * eta) / scale
            raised = True
    elif gamma < 0:
        raise DomainError(f"gamma >= 0 required, got {gamma}")
    while True:
        kappa_q = kappa + gamma * scale
        # same arithmetic as explosion_time on the transformed parameters
        chi_q = 2.0 * rho * eta - kappa_q
        delta_q = chi_q * chi_q - 2.0 * eta * eta
        # the raised strength sits on delta_q = 0; step past rounding
        if not (raised and delta_q < 0.0):
            break
        gamma = math.nextafter(gamma, math.inf)
    theta_q = kappa * theta / kappa_q
    return QTransform(gamma, bound, kappa_q, theta_q, chi_q, delta_q)


def _growth_factor(p: float, T: float) -> float:
    # (e^{pT} - 1) / p, with its p -> 0 limit T
    if p == 0.0:
        return T
    return math.expm1(p * T) / p


def laplace_transform_32(lam: float, spec: ThreeHalves, T: float) -> float:
    """E(exp(-lam * int_0^T v_s ds)) in the 3/2 model.

        Gamma(g - a) / Gamma(g) * (2 / (eps^2 y0))^a * M(a, g, -2 / (eps^2 y0))

    with y0 = v0 (e^{pT} - 1) / p, a = -(1/2 - q/eps^2) + sqrt((1/2 - q/eps^2)^2
    + 2 lam / eps^2) and g = 2 (a + 1 - q/eps^2).
    """
    if not lam >= 0.0:
        raise DomainError(f"lambda >= 0 required, got {lam}")
    if not T > 0:
        raise DomainError(f"T > 0 required, got {T}")
    eps2 = spec.epsilon**2
    half = 0.5 - spec.q / eps2
    a = -half + math.sqrt(half * half + 2.0 * lam / eps2)
    g = 2.0 * (a + 1.0 - spec.q / eps2)
    y0 = spec.v0 * _growth_factor(spec.p, T)
    z = 2.0 / (eps2 * y0)
    if a == 0.0:
        return 1.0
    return gamma_fn(g - a) / gamma_fn(g) * z**a * kummer_m(a, g, -z)


def dufresne_moment(
    order: float, spec: ThreeHalves, t: float, *, variant: str = "corrected"
) -> float:
    """E(R_t^order) for the reciprocal R = 1/v of the 3/2 variance.

    R is a square-root process, dR = (eps^2 - q - p R) dt - eps sqrt(R) dW, so
    R_t is a scaled noncentral chi-square with 2 vbar degrees of freedom,
    vbar = 2 (eps^2 - q) / eps^2.  The moment is infinite iff order <= -vbar.

    ``variant="corrected"`` evaluates

        mu^s e^{-lam} Gamma(vbar + s) / Gamma(vbar) M(vbar + s, vbar, lam)

    with mu = eps^2 (1 - e^{-pt}) / (2p) and lam = 2 p R_0 / (eps^2 (e^{pt} - 1)).
    ``variant="printed"`` keeps the transcription found in the literature:
    second Kummer argument s, lam = 2 p v0 / (eps^2 (e^{-pt} - 1)).  It does
    not reproduce sampled moments and is kept for comparison only.
    """
    if not t > 0:
        raise DomainError(f"t > 0 required, got {t}")
    vbar = spec.vbar
    if order <= -vbar:
        return math.inf
    if order == 0:
        return 1.0
    eps2 = spec.epsilon**2
    p = spec.p
    mu = eps2 / 2.0 * (t if p == 0.0 else -math.expm1(-p * t) / p)
    ratio = gamma_fn(vbar + order) / gamma_fn(vbar)
    if variant == "corrected":
        r0 = 1.0 / spec.v0
        lam = 2.0 * r0 / (eps2 * _growth_factor(p, t))
        # e^{-lam} M(vbar+s, vbar, lam) = M(-s, vbar, -lam)
        return mu**order * ratio * kummer_m(-order, vbar, -lam)
    if variant == "printed":
        denom = -t if p == 0.0 else math.expm1(-p * t) / p
        lam = 2.0 * spec.v0 / (eps2 * denom)
        return mu**order * math.exp(-lam) * ratio * kummer_m(vbar + order, order, lam)
    raise ValueError(f"unknown variant {variant!r}")


def variance_moment(k: float, spec: ThreeHalves, t: float) -> float:
    """E(v_t^k) = E(R_t^-k); infinite iff k >= vbar."""
    return dufresne_moment(-k, spec, t)


def bs_gap(sigma: float, T: float, n: int) -> float:
    """Exact E(P^n(T)) - E(P(T)) = sigma^4 T^2 / (4n) under Black-Scholes."""
    if sigma < 0 or n < 1:
        raise DomainError("sigma >= 0 and n >= 1 required")
    return sigma**4 * T * T / (4.0 * n)


def bs_bound_inputs(sigma: float, T: float) -> tuple[float, float, float]:
    """Exact (E(A_T^2), E<M^c,M^c>_T, E[N,N]_T) for Black-Scholes."""
    a_t = 0.5 * sigma * sigma * T
    return a_t * a_t, sigma * sigma * T, 0.0


def theorem3_constant(ea2: float, eqv_c: float, enn: float) -> float:
    """Uniform-in-n bound C on |E(P(T)) - E(P^n(T))|.

    C = E(A_T^2) + 2 sqrt(E<M^c,M^c>_T) sqrt(E(A_T^2)) + 2 sqrt(E[N,N]_T) sqrt(E(A_T^2))
    """
    for name, value in (("E(A_T^2)", ea2), ("E<M^c,M^c>_T", eqv_c), ("E[N,N]_T", enn)):
        if not (value >= 0 and math.isfinite(value)):
            raise DomainError(f"{name} must be finite and >= 0, got {value}")
    root_a = math.sqrt(ea2)
    return ea2 + 2.0 * math.sqrt(eqv_c) * root_a + 2.0 * math.sqrt(enn) * root_a


@dataclass(frozen=True)
class ConditionReport:
    sigma4_condition: bool
    jump_condition: bool
    satisfied: bool
    note: str = ""
    sigma4_integral: Optional[float] = None
    jump_integral: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "sigma4_condition": self.sigma4_condition,
            "jump_condition": self.jump_condition,
            "satisfied": self.satisfied,
            "note": self.note,
            "sigma4_integral": self.sigma4_integral,
            "jump_integral": self.jump_integral,
        }


def _report(s4: bool, jump: bool, note: str, **kw) -> ConditionReport:
    return ConditionReport(s4, jump, s4 and jump, note, **kw)


def check_theorem4_conditions(spec: ModelSpec, T: float) -> ConditionReport:
    """Moment conditions that guarantee |E(P) - E(P^n)| <= C/n + D/sqrt(n).

    Needs E(int_0^T sigma^4 ds) < inf and, for the jump part with p = 0 (finite
    activity), E(int int psi^2 + ln(1 + psi)^2 F(dz) ds) < inf.
    """
    if not T > 0:
        raise DomainError(f"T > 0 required, got {T}")
    if isinstance(spec, (BlackScholes, JumpDiffusion)):
        s4 = spec.sigma**4 * T
        if isinstance(spec, JumpDiffusion):
            m, d = spec.m, spec.delta
            # E(e^J - 1)^2 and E(J^2) for J ~ N(m, d^2)
            e_psi2 = math.exp(2 * m + 2 * d * d) - 2 * math.exp(m + 0.5 * d * d) + 1.0
            e_log2 = m * m + d * d
            jump = spec.lam * T * (e_psi2 + e_log2)
        else:
            jump = 0.0
        return _report(
            math.isfinite(s4), math.isfinite(jump),
            "constant volatility, finite-activity lognormal jumps (p = 0)",
            sigma4_integral=s4, jump_integral=jump,
        )
    if isinstance(spec, ThreeHalves):
        ok = spec.q < 0
        note = (
            f"E(v_t^2) finite iff vbar = {spec.vbar!r} > 2, i.e. q < 0"
            + ("" if ok else "; convergence is an open question here")
        )
        return _report(ok, True, note, jump_integral=0.0)
    if isinstance(spec, VolOfVol):
        tstar = explosion_time(spec.kappa, spec.eta, spec.rho).tstar
        ok = T < tstar
        return _report(
            ok, True,
            f"E(int v^2) finite iff T < T* = {tstar!r}",
            jump_integral=0.0,
        )
    if isinstance(spec, CEV):
        ok = spec.alpha <= CEV_L2_ALPHA
        note = (
            "E(int S^{4(alpha-1)}) <= T s0^{4(alpha-1)} by Jensen"
            if ok else "alpha > 1.25: sigma^4 integrability not established"
        )
        return _report(ok, True, note, jump_integral=0.0)
    raise TypeError(f"not a model spec: {spec!r}")


def reciprocal_bessel3_mean(x0: float, t: float) -> float:
    """E(X_t) for X = 1/|x0 e + W| with W a 3-d Brownian motion: erf(x0/sqrt(2t))/x0."""
    if t == 0:
        return 1.0 / x0
    return math.erf(x0 / math.sqrt(2.0 * t)) / x0
