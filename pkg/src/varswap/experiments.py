"""Convergence studies, rate fits, tail diagnostics and the measure-change rescue."""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .closed_form import (
    QTransform,
    ConditionReport,
    check_theorem4_conditions,
    explosion_time,
    q_transform,
    theorem3_constant,
)
from .errors import ConditionsFailed, DomainError, GridMismatch, InsufficientSamples, InsufficientSignal
from .models import JumpDiffusion, ModelSpec, ThreeHalves, VolOfVol
from .payoffs import (
    McEstimate,
    compensator_increments,
    control_variate_gap,
    discrete_payoffs,
    has_exact_control_variate,
    mc_estimate,
    pairwise_sum,
    qv_payoffs,
)
from .sde_sim import Scheme, TimeGrid, iter_path_blocks

__all__ = [
    "ConvergenceRow",
    "ConvergenceTable",
    "RateFit",
    "TailVerdict",
    "TailReport",
    "QRescueResult",
    "BoundStudy",
    "DEFAULT_N_LIST",
    "convergence_study",
    "rate_fit",
    "hill_estimate",
    "tail_diagnostic",
    "integrated_variance_samples",
    "laplace_transform_mc",
    "q_rescue_experiment",
    "bound_study",
]

DEFAULT_N_LIST = (4, 16, 64, 256)
CSV_COLUMNS = (
    "n", "ep_n", "se_n", "ep_qv", "se_qv", "gap", "gap_se",
    "gap_cv", "gap_cv_se", "ev_n", "se_ev_n", "ev_qv", "se_ev_qv",
)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    ep_n: float
    se_n: float
    ep_qv: float
    se_qv: float
    gap: float
    gap_se: float
    # martingale control-variate estimate of the same gap (nan when unavailable)
    gap_cv: float
    gap_cv_se: float
    # volatility swap, informational only
    ev_n: float
    se_ev_n: float
    ev_qv: float
    se_ev_qv: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    metadata: dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_dict(self) -> dict[str, Any]:
        return {
            "columns": list(CSV_COLUMNS),
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "metadata": self.metadata,
        }


@dataclass
class _Collected:
    n_list: tuple[int, ...]
    pn: dict[int, np.ndarray]
    cv: dict[int, np.ndarray]
    p_qv: np.ndarray
    a_t: np.ndarray
    qv_c: np.ndarray
    nn: np.ndarray
    cv_exact: bool


def _common_grid(T: float, n_list: Sequence[int], substeps: Optional[int]) -> TimeGrid:
    for n in n_list:
        if int(n) != n or n < 1:
            raise GridMismatch(f"every n must be a positive integer, got {n}")
    base = reduce(math.lcm, (int(n) for n in n_list))
    return TimeGrid(T, base, substeps)


def _collect(
    spec: ModelSpec,
    grid: TimeGrid,
    n_list: Sequence[int],
    n_paths: int,
    seed: int,
    scheme: Scheme,
    workers: int,
) -> _Collected:
    pn = {n: [] for n in n_list}
    cv = {n: [] for n in n_list}
    p_qv, a_t, qv_c, nn = [], [], [], []
    cv_exact = True
    for batch in iter_path_blocks(spec, grid, n_paths, seed, scheme, workers=workers):
        cv_exact = cv_exact and has_exact_control_variate(batch)
        p, _ = qv_payoffs(batch)
        p_qv.append(p)
        jumps = np.bincount(batch.jump_path, weights=batch.jump_log**2, minlength=batch.n_paths) \
            if batch.jump_log.size else np.zeros(batch.n_paths)
        nn.append(jumps)
        qv_c.append(p - jumps)
        a_t.append(compensator_increments(batch, 1)[:, 0])
        for n in n_list:
            pn[n].append(discrete_payoffs(batch, n)[0])
            cv[n].append(control_variate_gap(batch, n))
    cat = np.concatenate
    return _Collected(
        tuple(n_list),
        {n: cat(pn[n]) for n in n_list},
        {n: cat(cv[n]) for n in n_list},
        cat(p_qv), cat(a_t), cat(qv_c), cat(nn), cv_exact,
    )


def _rows(data: _Collected, seed: int) -> list[ConvergenceRow]:
    est_p = mc_estimate(data.p_qv, "P", seed)
    est_v = mc_estimate(np.sqrt(data.p_qv), "V", seed)
    rows = []
    for n in sorted(data.n_list):
        pn = data.pn[n]
        est_pn = mc_estimate(pn, f"P^{n}", seed)
        est_vn = mc_estimate(np.sqrt(pn), f"V^{n}", seed)
        paired = mc_estimate(pn - data.p_qv, f"gap^{n}", seed)
        if data.cv_exact:
            est_cv = mc_estimate(data.cv[n], f"gap_cv^{n}", seed)
            gap_cv, gap_cv_se = est_cv.mean, est_cv.stderr
        else:
            gap_cv = gap_cv_se = math.nan
        rows.append(
            ConvergenceRow(
                n=n,
                ep_n=est_pn.mean,
                se_n=est_pn.stderr,
                ep_qv=est_p.mean,
                se_qv=est_p.stderr,
                # difference of the marginal means; its error bar comes from paired differences
                gap=est_pn.mean - est_p.mean,
                gap_se=paired.stderr,
                gap_cv=gap_cv,
                gap_cv_se=gap_cv_se,
                ev_n=est_vn.mean,
                se_ev_n=est_vn.stderr,
                ev_qv=est_v.mean,
                se_ev_qv=est_v.stderr,
            )
        )
    return rows


def convergence_study(
    spec: ModelSpec,
    T: float,
    n_list: Sequence[int] = DEFAULT_N_LIST,
    n_paths: int = 100_000,
    seed: int = 0,
    *,
    scheme: Scheme | str = Scheme.EXACT,
    substeps: Optional[int] = None,
    override: bool = False,
    workers: int = 1,
) -> ConvergenceTable:
    """Estimate E(P^n), E(P) and their gap for every n on common paths.

    The simulation grid has ``lcm(n_list) * substeps`` steps so every payoff
    grid is nested in it.  Raises :class:`ConditionsFailed` when the moment
    conditions for convergence fail, unless ``override`` is set; such runs are
    labelled exploratory.
    """
    scheme = Scheme.parse(scheme)
    conditions = check_theorem4_conditions(spec, T)
    if not conditions.satisfied and not override:
        raise ConditionsFailed(
            f"convergence conditions fail for {spec.family}: {conditions.note}"
        )
    grid = _common_grid(T, n_list, substeps).resolved(scheme)
    data = _collect(spec, grid, sorted(set(int(n) for n in n_list)), n_paths, seed, scheme, workers)
    meta = {
        "spec": spec.to_dict(),
        "spec_hash": spec.hash,
        "T": T,
        "n_list": sorted(set(int(n) for n in n_list)),
        "n_paths": n_paths,
        "seed": seed,
        "scheme": scheme.value,
        "substeps": grid.k,
        "grid_steps": grid.steps,
        "conditions": conditions.to_dict(),
        "exploratory": not conditions.satisfied,
        "control_variate": data.cv_exact,
    }
    return ConvergenceTable(_rows(data, seed), meta)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    column: str
    n_used: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "column": self.column,
            "n_used": list(self.n_used),
        }


SIGNAL_RATIO = 3.0


def rate_fit(table: ConvergenceTable, column: str = "auto") -> RateFit:
    """Least-squares fit of log|gap| against log n.

    ``column`` is ``"gap"``, ``"gap_cv"`` or ``"auto"`` (the control-variate
    column when it is populated).  Only rows whose gap exceeds three standard
    errors enter the fit; at least three are required.
    """
    if column == "auto":
        column = "gap_cv" if np.isfinite(table.column("gap_cv")).all() else "gap"
    if column not in ("gap", "gap_cv"):
        raise ValueError(f"unknown column {column!r}")
    ns = table.column("n")
    gaps = table.column(column)
    ses = table.column(f"{column}_se" if column == "gap_cv" else "gap_se")
    keep = np.isfinite(gaps) & (np.abs(gaps) > SIGNAL_RATIO * ses) & (gaps != 0)
    if keep.sum() < 3:
        raise InsufficientSignal(
            f"only {int(keep.sum())} rows have |{column}| > {SIGNAL_RATIO:g} stderr; need 3"
        )
    x = np.log(ns[keep])
    y = np.log(np.abs(gaps[keep]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, column, tuple(int(n) for n in ns[keep]))


class TailVerdict(str, enum.Enum):
    # the names refer to E(P^n): finite iff the integrated variance has a finite second moment
    MEAN_LIKELY_FINITE = "MeanLikelyFinite"
    SECOND_MOMENT_LIKELY_INFINITE = "SecondMomentLikelyInfinite"
    INCONCLUSIVE = "Inconclusive"


# Tail index below this means the sampled quantity has no second moment.
CRITICAL_INDEX = 2.0
DEFAULT_FRACTION = 0.05
DEFAULT_SWEEP = (0.025, 0.05, 0.10)
MIN_TAIL_SAMPLES = 10_000


@dataclass(frozen=True)
class HillEstimate:
    fraction: float
    k: int
    index: float
    stderr: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.index - 1.96 * self.stderr, self.index + 1.96 * self.stderr

    def to_dict(self) -> dict[str, Any]:
        lo, hi = self.ci
        return {"fraction": self.fraction, "k": self.k, "index": self.index,
                "stderr": self.stderr, "ci_low": lo, "ci_high": hi}


@dataclass(frozen=True)
class TailReport:
    """Hill tail index at the primary fraction, a sensitivity sweep and a verdict.

    Verdict rule: the 95% CI lies entirely below 2 -> SecondMomentLikelyInfinite;
    entirely above 2 -> MeanLikelyFinite; otherwise Inconclusive.
    """

    estimate: HillEstimate
    sweep: tuple[HillEstimate, ...]
    verdict: TailVerdict
    n_samples: int

    @property
    def index(self) -> float:
        return self.estimate.index

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate.ci

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "estimate": self.estimate.to_dict(),
            "sweep": [h.to_dict() for h in self.sweep],
            "n_samples": self.n_samples,
            "critical_index": CRITICAL_INDEX,
        }


def hill_estimate(samples: np.ndarray, fraction: float) -> HillEstimate:
    """Hill estimator on the largest ``fraction`` of the samples."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    k = int(fraction * x.size)
    if k < 2:
        raise InsufficientSamples(f"fraction {fraction} keeps only {k} order statistics")
    if not x[k] > 0:
        raise DomainError("Hill estimator needs positive upper order statistics")
    xi = pairwise_sum(np.log(x[:k])) / k - math.log(x[k])
    index = 1.0 / xi
    return HillEstimate(fraction, k, index, index / math.sqrt(k))


def tail_diagnostic(
    samples: Iterable[float] | np.ndarray,
    fraction: float = DEFAULT_FRACTION,
    sweep: Sequence[float] = DEFAULT_SWEEP,
) -> TailReport:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_TAIL_SAMPLES:
        raise InsufficientSamples(f"at least {MIN_TAIL_SAMPLES} samples required, got {x.size}")
    for f in (fraction, *sweep):
        if not 0 < f <= 0.2:
            raise DomainError(f"fraction must lie in (0, 0.2], got {f}")
    main = hill_estimate(x, fraction)
    lo, hi = main.ci
    if hi < CRITICAL_INDEX:
        verdict = TailVerdict.SECOND_MOMENT_LIKELY_INFINITE
    elif lo > CRITICAL_INDEX:
        verdict = TailVerdict.MEAN_LIKELY_FINITE
    else:
        verdict = TailVerdict.INCONCLUSIVE
    return TailReport(main, tuple(hill_estimate(x, f) for f in sweep), verdict, x.size)


def integrated_variance_samples(
    spec: ModelSpec,
    T: float,
    n_paths: int,
    seed: int,
    *,
    steps: int = 200,
    scheme: Scheme | str = Scheme.EXACT,
    workers: int = 1,
) -> np.ndarray:
    """Per-path quadratic variation P(T) (the integrated variance for continuous models)."""
    grid = TimeGrid(T, steps, 1)
    return np.concatenate(
        [qv_payoffs(b)[0] for b in iter_path_blocks(spec, grid, n_paths, seed, scheme, workers=workers)]
    )


def laplace_transform_mc(
    spec: ThreeHalves,
    T: float,
    lambdas: Sequence[float],
    n_paths: int,
    seed: int,
    *,
    steps: int = 250,
    workers: int = 1,
) -> list[McEstimate]:
    """Monte Carlo E(exp(-lambda int v ds)) from exact-transition 3/2 paths."""
    iv = integrated_variance_samples(spec, T, n_paths, seed, steps=steps, workers=workers)
    return [mc_estimate(np.exp(-lam * iv), f"laplace({lam:g})", seed) for lam in lambdas]


@dataclass
class QRescueResult:
    before: TailReport
    transform: QTransform
    spec_q: VolOfVol
    tstar_before: float
    tstar_after: float
    after: ConvergenceTable

    def to_dict(self) -> dict[str, Any]:
        return {
            "before": self.before.to_dict(),
            "transform": self.transform.to_dict(),
            "spec_q": self.spec_q.to_dict(),
            "tstar_before": self.tstar_before,
            "tstar_after": self.tstar_after,
            "after": self.after.to_dict(),
        }


def q_rescue_experiment(
    spec: VolOfVol,
    T: float,
    n_list: Sequence[int] = (4, 16, 64),
    n_paths: int = 100_000,
    seed: int = 0,
    *,
    gamma: Optional[float] = None,
    fraction: float = DEFAULT_FRACTION,
    tail_steps: int = 200,
    scheme: Scheme | str = Scheme.EXACT,
    substeps: Optional[int] = None,
    workers: int = 1,
) -> QRescueResult:
    """Heavy-tail diagnosis under P, then a convergence study under Q.

    Under Q the vol-of-vol process is a CIR with (kappa_q, theta_q) from
    :func:`q_transform`; the other drivers keep their law.
    """
    if not isinstance(spec, VolOfVol):
        raise TypeError("q_rescue_experiment needs a VolOfVol spec")
    if not abs(spec.rho) < 1:
        raise DomainError(f"|rho| < 1 required, got {spec.rho}")
    if not spec.chi > 0:
        raise DomainError(f"chi = 2 rho eta - kappa > 0 required, got {spec.chi}")
    tstar = explosion_time(spec.kappa, spec.eta, spec.rho).tstar
    if not T > tstar:
        raise DomainError(f"T > T* = {tstar!r} required, got T={T}")
    iv = integrated_variance_samples(
        spec, T, n_paths, seed, steps=tail_steps, scheme=scheme, workers=workers
    )
    before = tail_diagnostic(iv, fraction)
    qt = q_transform(spec.kappa, spec.theta, spec.eta, spec.rho, gamma)
    spec_q = dataclasses.replace(spec, kappa=qt.kappa_q, theta=qt.theta_q)
    tstar_q = explosion_time(spec_q.kappa, spec_q.eta, spec_q.rho).tstar
    after = convergence_study(
        spec_q, T, n_list, n_paths, seed + 1,
        scheme=scheme, substeps=substeps, workers=workers,
    )
    return QRescueResult(before, qt, spec_q, tstar, tstar_q, after)


@dataclass
class BoundStudy:
    ea2: McEstimate
    eqv_c: McEstimate
    enn: McEstimate
    constant: float
    table: ConvergenceTable

    @property
    def max_abs_gap(self) -> float:
        return float(np.max(np.abs(self.table.column("gap"))))

    def to_dict(self) -> dict[str, Any]:
        return {
            "E(A_T^2)": self.ea2.to_dict(),
            "E<M^c,M^c>_T": self.eqv_c.to_dict(),
            "E[N,N]_T": self.enn.to_dict(),
            "constant": self.constant,
            "table": self.table.to_dict(),
        }


def bound_study(
    spec: ModelSpec,
    T: float,
    n_list: Sequence[int] = (1, 4, 16, 64, 256),
    n_paths: int = 100_000,
    seed: int = 0,
    *,
    scheme: Scheme | str = Scheme.EXACT,
    substeps: Optional[int] = None,
    workers: int = 1,
) -> BoundStudy:
    """Monte Carlo inputs to the uniform bound C together with measured gaps."""
    scheme = Scheme.parse(scheme)
    grid = _common_grid(T, n_list, substeps).resolved(scheme)
    ns = sorted(set(int(n) for n in n_list))
    data = _collect(spec, grid, ns, n_paths, seed, scheme, workers)
    ea2 = mc_estimate(data.a_t**2, "E(A_T^2)", seed)
    eqv = mc_estimate(data.qv_c, "E<M^c,M^c>_T", seed)
    enn = mc_estimate(data.nn, "E[N,N]_T", seed)
    const = theorem3_constant(ea2.mean, eqv.mean, enn.mean)
    meta = {"spec": spec.to_dict(), "T": T, "n_list": ns, "n_paths": n_paths,
            "seed": seed, "scheme": scheme.value, "substeps": grid.k}
    return BoundStudy(ea2, eqv, enn, const, ConvergenceTable(_rows(data, seed), meta))
