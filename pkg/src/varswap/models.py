"""Model families and their analytic classification.

Five families are supported.  Every parameter is in year units: variances
are per year, volatilities per square-root year, intensities per year.

==============  =====================================================
family          parameters
==============  =====================================================
BlackScholes    s0, sigma
CEV             s0, alpha, sigma (scale, default 1: dS = sigma S^alpha dB)
VolOfVol        s0, v0, w0, kappa, theta, eta, rho, rho_bw (default 0)
ThreeHalves     s0, v0, p, q, epsilon, rho_bw (default 0)
JumpDiffusion   s0, sigma, lam, m, delta
==============  =====================================================

``rho`` is the correlation of the variance driver W with the
vol-of-vol driver Z; ``rho_bw`` is the correlation of the price driver B
with W.  Jumps are lognormal: ln(1 + x) ~ Normal(m, delta^2).
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, ClassVar, Mapping, Optional, Union

from .errors import MissingParameter, RangeViolation

__all__ = [
    "BlackScholes",
    "CEV",
    "VolOfVol",
    "ThreeHalves",
    "JumpDiffusion",
    "ModelSpec",
    "FAMILIES",
    "Finiteness",
    "FinitenessVerdict",
    "build_model",
    "cev_is_true_martingale",
    "classify_finiteness",
    "spec_hash",
]

# Largest CEV elasticity for which the quadratic variation is known to be in L2.
CEV_L2_ALPHA = 1.25
# Largest CEV elasticity for which the quadratic variation is known to be in L1.
CEV_L1_ALPHA = 1.5


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise RangeViolation(f"{name} > 0 required, got {value}")


def _nonnegative(name: str, value: float) -> None:
    if not (value >= 0 and math.isfinite(value)):
        raise RangeViolation(f"{name} >= 0 required, got {value}")


def _finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise RangeViolation(f"{name} must be finite, got {value}")


def _correlation(name: str, value: float) -> None:
    if not -1.0 <= value <= 1.0:
        raise RangeViolation(f"{name} in [-1, 1] required, got {value}")


class _Spec:
    family: ClassVar[str]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"family": self.family}
        out.update(dataclasses.asdict(self))
        return out

    @property
    def hash(self) -> str:
        return spec_hash(self)


@dataclass(frozen=True)
class BlackScholes(_Spec):
    family: ClassVar[str] = "BlackScholes"
    s0: float
    sigma: float

    def __post_init__(self):
        _positive("s0", self.s0)
        _nonnegative("sigma", self.sigma)


@dataclass(frozen=True)
class CEV(_Spec):
    family: ClassVar[str] = "CEV"
    s0: float
    alpha: float
    sigma: float = 1.0

    def __post_init__(self):
        _positive("s0", self.s0)
        _finite("alpha", self.alpha)
        if self.alpha < 1.0:
            raise RangeViolation(f"alpha >= 1 required, got {self.alpha}")
        _positive("sigma", self.sigma)


@dataclass(frozen=True)
class VolOfVol(_Spec):
    family: ClassVar[str] = "VolOfVol"
    s0: float
    v0: float
    w0: float
    kappa: float
    theta: float
    eta: float
    rho: float
    rho_bw: float = 0.0

    def __post_init__(self):
        for name in ("s0", "v0", "w0", "kappa", "theta", "eta"):
            _positive(name, getattr(self, name))
        _correlation("rho", self.rho)
        _correlation("rho_bw", self.rho_bw)

    @property
    def chi(self) -> float:
        return 2.0 * self.rho * self.eta - self.kappa

    @property
    def delta(self) -> float:
        return self.chi**2 - 2.0 * self.eta**2


@dataclass(frozen=True)
class ThreeHalves(_Spec):
    family: ClassVar[str] = "ThreeHalves"
    s0: float
    v0: float
    p: float
    q: float
    epsilon: float
    rho_bw: float = 0.0

    def __post_init__(self):
        _positive("s0", self.s0)
        _positive("v0", self.v0)
        _finite("p", self.p)
        _finite("q", self.q)
        _positive("epsilon", self.epsilon)
        if not self.q < self.epsilon**2 / 2.0:
            raise RangeViolation(
                f"q < epsilon^2/2 required (q < ε²/2), got q={self.q}, "
                f"epsilon^2/2={self.epsilon**2 / 2.0}"
            )
        _correlation("rho_bw", self.rho_bw)

    @property
    def vbar(self) -> float:
        """Critical negative-moment order of the reciprocal process 1/v."""
        return 2.0 * (self.epsilon**2 - self.q) / self.epsilon**2


@dataclass(frozen=True)
class JumpDiffusion(_Spec):
    family: ClassVar[str] = "JumpDiffusion"
    s0: float
    sigma: float
    lam: float
    m: float
    delta: float

    def __post_init__(self):
        _positive("s0", self.s0)
        _nonnegative("sigma", self.sigma)
        _nonnegative("lam", self.lam)
        _finite("m", self.m)
        _nonnegative("delta", self.delta)

    @property
    def mean_jump(self) -> float:
        """E(x) for x = exp(J) - 1, the compensator rate per unit intensity."""
        return math.expm1(self.m + 0.5 * self.delta**2)


ModelSpec = Union[BlackScholes, CEV, VolOfVol, ThreeHalves, JumpDiffusion]

FAMILIES: dict[str, type] = {
    cls.family: cls for cls in (BlackScholes, CEV, VolOfVol, ThreeHalves, JumpDiffusion)
}
_FAMILY_ALIASES = {name.lower(): name for name in FAMILIES}


def spec_hash(spec: ModelSpec) -> str:
    payload = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_model(raw: Mapping[str, Any]) -> ModelSpec:
    """Build a validated model spec from a flat parameter mapping.

    The mapping holds a ``family`` tag plus that family's parameters.

    >>> build_model({"family": "BlackScholes", "s0": 100, "sigma": 0.2})
    BlackScholes(s0=100.0, sigma=0.2)
    """
    if "family" not in raw:
        raise MissingParameter("missing parameter 'family'")
    tag = str(raw["family"])
    name = _FAMILY_ALIASES.get(tag.lower())
    if name is None:
        raise RangeViolation(
            f"unknown family {tag!r}; expected one of {sorted(FAMILIES)}"
        )
    cls = FAMILIES[name]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields) - {"family"})
    if unknown:
        raise RangeViolation(f"unknown parameter {unknown[0]!r} for family {name}")
    kwargs = {}
    for fname, f in fields.items():
        if fname in raw:
            value = raw[fname]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise RangeViolation(f"parameter {fname!r} must be a number, got {value!r}")
            kwargs[fname] = float(value)
        elif f.default is dataclasses.MISSING:
            raise MissingParameter(f"missing parameter {fname!r} for family {name}")
    return cls(**kwargs)


def cev_is_true_martingale(alpha: float) -> bool:
    """Whether dS = S^alpha dB is a true martingale.

    Applies the integral test: S is a martingale iff the integral of
    x / sigma(x)^2 = x^(1 - 2 alpha) diverges at infinity, which happens
    iff the exponent is at least -1.
    """
    if not alpha >= 1.0:
        raise RangeViolation(f"alpha >= 1 required, got {alpha}")
    return 1.0 - 2.0 * alpha >= -1.0


class Finiteness(str, enum.Enum):
    FINITE = "Finite"
    INFINITE = "Infinite"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class FinitenessVerdict:
    """Finiteness of E(P(T)) (continuous) and E(P^n(T)) (discrete)."""

    ep_continuous: Finiteness
    ep_discrete: Finiteness
    rationale: str
    tstar: Optional[float] = None

    def __post_init__(self):
        if self.ep_continuous is Finiteness.INFINITE and self.ep_discrete is Finiteness.FINITE:
            raise ValueError("E(P) infinite is incompatible with E(P^n) finite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "ep_continuous": self.ep_continuous.value,
            "ep_discrete": self.ep_discrete.value,
            "rationale": self.rationale,
            "tstar": self.tstar,
        }


# Relative band around T* inside which the discrete verdict stays Unknown.
TSTAR_REL_TOL = 1e-12


def classify_finiteness(spec: ModelSpec, T: float, n: int = 1) -> FinitenessVerdict:
    """Case analysis of E(P(T)) and E(P^n(T)) for each family.

    Finiteness of E(P^n(T)) does not depend on n once n >= 1; the argument
    is validated and otherwise unused.
    """
    _positive("T", T)
    if int(n) != n or n < 1:
        raise RangeViolation(f"n must be a positive integer, got {n}")
    F, I, U = Finiteness.FINITE, Finiteness.INFINITE, Finiteness.UNKNOWN

    if isinstance(spec, (BlackScholes, JumpDiffusion)):
        return FinitenessVerdict(
            F, F,
            "constant diffusion coefficient and finite-activity lognormal jumps: "
            "sigma^4 and jump integrability conditions hold, both payoffs integrable",
        )
    if isinstance(spec, ThreeHalves):
        return FinitenessVerdict(
            F, F,
            "3/2 model: the Laplace transform of the integrated variance exists near "
            "zero, so all its moments are finite and P(T) is in L2",
        )
    if isinstance(spec, CEV):
        if spec.alpha <= CEV_L2_ALPHA:
            return FinitenessVerdict(
                F, F,
                "CEV with alpha = 1 + eps/4, eps in [0, 1]: quadratic variation in L2 "
                "by Jensen since S is a positive supermartingale",
            )
        if spec.alpha <= CEV_L1_ALPHA:
            return FinitenessVerdict(
                F, U,
                "CEV with 1.25 < alpha <= 1.5: quadratic variation in L1 by Jensen; "
                "L2 membership not established",
            )
        return FinitenessVerdict(U, U, "CEV with alpha > 1.5: no finiteness result applies")
    if isinstance(spec, VolOfVol):
        from .closed_form import explosion_time

        report = explosion_time(spec.kappa, spec.eta, spec.rho)
        tstar = report.tstar
        base = f"vol-of-vol: E(P(T)) <= v0 T; second-moment explosion time T* = {tstar!r}"
        if math.isinf(tstar) or T < tstar * (1.0 - TSTAR_REL_TOL):
            return FinitenessVerdict(F, F, base + "; T < T* so P(T) is in L2", tstar)
        if T > tstar * (1.0 + TSTAR_REL_TOL):
            return FinitenessVerdict(
                F, I, base + "; T > T* so P(T) is not in L2 and E(P^n(T)) is infinite", tstar
            )
        return FinitenessVerdict(F, U, base + "; T = T*, behaviour at the boundary is open", tstar)
    raise TypeError(f"not a model spec: {spec!r}")
