"""Per-path swap payoffs and Monte Carlo aggregation.

Library quantities are unannualized.  The 252/n convention is applied by the
command-line reporting layer only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .errors import InsufficientSamples, NonFiniteSample
from .models import BlackScholes, JumpDiffusion, ThreeHalves, VolOfVol
from .sde_sim import PathBatch

__all__ = [
    "SwapSample",
    "McEstimate",
    "discrete_payoffs",
    "qv_payoffs",
    "swap_samples",
    "compensator_increments",
    "control_variate_gap",
    "has_exact_control_variate",
    "mc_estimate",
    "pairwise_sum",
]

Z_95 = 1.96


@dataclass
class SwapSample:
    """Per-path (P^n, V^n, P, V) for one batch."""

    pn: np.ndarray
    vn: np.ndarray
    p_qv: np.ndarray
    v_qv: np.ndarray


def discrete_payoffs(batch: PathBatch, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Realized variance P^n = sum_i (delta_i ln S)^2 and V^n = sqrt(P^n).

    The log-price is read every ``k*n_grid/n`` substeps, so jumps enter
    automatically through the log-price path.
    """
    stride = batch.grid.stride(n)
    returns = np.diff(batch.log_price[:, ::stride], axis=1)
    pn = np.sum(returns * returns, axis=1)
    return pn, np.sqrt(pn)


def _jump_qv(batch: PathBatch) -> np.ndarray:
    if batch.jump_log.size == 0:
        return np.zeros(batch.n_paths)
    return np.bincount(batch.jump_path, weights=batch.jump_log**2, minlength=batch.n_paths)


def _constant_variance(batch: PathBatch) -> Optional[float]:
    if isinstance(batch.spec, (BlackScholes, JumpDiffusion)):
        return batch.spec.sigma ** 2
    return None


def qv_payoffs(batch: PathBatch) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic variation P = int_0^T v ds + sum (ln(1+x))^2 and V = sqrt(P).

    Constant-volatility families use sigma^2 T exactly; otherwise the variance
    path is integrated with the trapezoid rule at substep resolution.
    """
    const = _constant_variance(batch)
    if const is not None:
        p = np.full(batch.n_paths, const * batch.grid.T)
    else:
        v = batch.v
        p = np.sum(0.5 * (v[:, :-1] + v[:, 1:]), axis=1) * batch.grid.dt
    p = p + _jump_qv(batch)
    return p, np.sqrt(p)


def swap_samples(batch: PathBatch, n: int) -> SwapSample:
    pn, vn = discrete_payoffs(batch, n)
    p, v = qv_payoffs(batch)
    return SwapSample(pn, vn, p, v)


def compensator_increments(batch: PathBatch, n: int) -> np.ndarray:
    """Increments over each payoff interval of the finite-variation part A.

    ln S - ln S_0 = M^c + N - A with A = <M^c>/2 + (x - ln(1+x)) * nu.  For
    lognormal jumps the second term grows at rate lam (E(x) - m).
    Returns an array of shape ``(n_paths, n)``.
    """
    stride = batch.grid.stride(n)
    spec = batch.spec
    const = _constant_variance(batch)
    if const is not None:
        rate = 0.5 * const
        if isinstance(spec, JumpDiffusion):
            rate += spec.lam * (spec.mean_jump - spec.m)
        return np.full((batch.n_paths, n), rate * batch.grid.T / n)
    v = batch.v
    iv = 0.5 * (v[:, :-1] + v[:, 1:]) * batch.grid.dt
    return 0.5 * iv.reshape(batch.n_paths, n, stride).sum(axis=2)


def has_exact_control_variate(batch: PathBatch) -> bool:
    """Whether the martingale control variate has exactly zero mean for this batch.

    True for families whose log-price increments are drawn exactly given the
    variance record and are driven by a Brownian motion independent of it.
    """
    spec = batch.spec
    if isinstance(spec, (BlackScholes, JumpDiffusion)):
        return True
    if isinstance(spec, (VolOfVol, ThreeHalves)):
        return spec.rho_bw == 0.0
    return False


def control_variate_gap(batch: PathBatch, n: int) -> np.ndarray:
    """Per-path P^n - P with the zero-mean martingale term removed.

    P^n - P = sum_i [(delta_i A)^2 - 2 delta_i A delta_i M]
              + sum_i [(delta_i M)^2 - delta_i [ln S, ln S]]
    where M = M^c + N.  The second sum has mean zero, so dropping it leaves an
    unbiased, far less noisy estimate of E(P^n) - E(P).  Equivalently each
    path contributes sum_i delta_i A (-2 delta_i ln S - delta_i A).
    """
    stride = batch.grid.stride(n)
    d_log = np.diff(batch.log_price[:, ::stride], axis=1)
    d_a = compensator_increments(batch, n)
    return np.sum(d_a * (-2.0 * d_log - d_a), axis=1)


def pairwise_sum(x: np.ndarray) -> float:
    """Sum of a 1-d float array in numpy's fixed pairwise order."""
    return float(np.add.reduce(np.ascontiguousarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    n_paths: int
    seed: Optional[int]
    label: str

    @property
    def half_width(self) -> float:
        return Z_95 * self.stderr

    def scaled(self, factor: float, label: Optional[str] = None) -> "McEstimate":
        mean, se = self.mean * factor, self.stderr * abs(factor)
        return McEstimate(mean, se, mean - Z_95 * se, mean + Z_95 * se,
                          self.n_paths, self.seed, label or self.label)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "mean": self.mean,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


def mc_estimate(samples: Sequence[float] | np.ndarray, label: str = "", seed: Optional[int] = None) -> McEstimate:
    """Sample mean with standard error stdev/sqrt(N) and a 95% normal CI."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise InsufficientSamples(f"at least 2 samples required, got {x.size}")
    if not np.isfinite(x).all():
        raise NonFiniteSample(f"non-finite sample in {label or 'estimate'}")
    n = x.size
    # shifting by the first sample keeps constant inputs exact
    x0 = float(x[0])
    shifted = x - x0
    offset = pairwise_sum(shifted) / n
    mean = x0 + offset
    dev = shifted - offset
    var = pairwise_sum(dev * dev) / (n - 1)
    se = math.sqrt(var / n)
    return McEstimate(mean, se, mean - Z_95 * se, mean + Z_95 * se, n, seed, label)
