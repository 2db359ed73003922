import math

import numpy as np
import pytest

from varswap.closed_form import bs_gap
from varswap.errors import (
    ConditionsFailed,
    DomainError,
    GridMismatch,
    InsufficientSamples,
    InsufficientSignal,
)
from varswap.experiments import (
    ConvergenceRow,
    ConvergenceTable,
    TailVerdict,
    convergence_study,
    hill_estimate,
    q_rescue_experiment,
    rate_fit,
    tail_diagnostic,
    bound_study,
)
from varswap.models import BlackScholes, CEV, JumpDiffusion, ThreeHalves, VolOfVol

NAN = math.nan


def synthetic(ns, gaps, se=0.0):
    rows = [ConvergenceRow(n, 0, 0, 0, 0, g, se, NAN, NAN, 0, 0, 0, 0) for n, g in zip(ns, gaps)]
    return ConvergenceTable(rows)


def test_black_scholes_gaps():
    table = convergence_study(BlackScholes(100, 0.2), 1.0, (4, 16, 64, 256), 50_000, 31)
    assert [r.n for r in table.rows] == [4, 16, 64, 256]
    for r in table.rows:
        exact = bs_gap(0.2, 1.0, r.n)
        assert abs(r.gap - exact) < 3 * r.gap_se
        assert abs(r.gap_cv - exact) < 3 * r.gap_cv_se
        # paired differences: variance reduction over the marginal standard errors
        assert r.gap_se <= r.se_n + r.se_qv
    assert -1.15 <= rate_fit(table).slope <= -0.85


def test_paired_gap_is_difference_of_marginals():
    table = convergence_study(ThreeHalves(100, 0.04, 0.1, -1, 1), 1.0, (2, 8), 3000, 32)
    for r in table.rows:
        assert r.gap == r.ep_n - r.ep_qv


def test_zero_volatility_gaps_are_zero():
    table = convergence_study(BlackScholes(100, 0.0), 1.0, (4, 16), 2000, 33)
    for r in table.rows:
        assert r.gap == 0.0 and r.gap_cv == 0.0 and r.ep_n == 0.0


def test_three_halves_gaps_decrease():
    table = convergence_study(ThreeHalves(100, 0.04, 0.1, -1, 1), 1.0, (4, 16, 64), 20_000, 34)
    gaps = table.column("gap_cv")
    ses = table.column("gap_cv_se")
    assert all(g > 0 for g in gaps)
    for (g1, s1), (g2, s2) in zip(zip(gaps, ses), zip(gaps[1:], ses[1:])):
        assert g2 < g1 + s1 + s2


def test_conditions_gate_and_exploratory_label():
    spec = ThreeHalves(100, 0.04, 0.1, 0.3, 1.0)
    with pytest.raises(ConditionsFailed):
        convergence_study(spec, 1.0, (4, 8), 1000, 1)
    table = convergence_study(spec, 1.0, (4, 8), 1000, 1, override=True)
    assert table.metadata["exploratory"] is True


def test_grid_mismatch_and_substeps():
    with pytest.raises(GridMismatch):
        convergence_study(BlackScholes(100, 0.2), 1.0, (4, 0), 100, 1)
    table = convergence_study(BlackScholes(100, 0.2), 1.0, (3, 4), 100, 1)
    assert table.metadata["grid_steps"] == 12


def test_control_variate_unavailable_for_cev():
    table = convergence_study(CEV(1.0, 1.1, 0.2), 1.0, (4, 8), 2000, 35, override=True)
    assert np.isnan(table.column("gap_cv")).all()


def test_study_is_deterministic():
    spec = JumpDiffusion(100, 0.2, 5.0, -0.05, 0.1)
    a = convergence_study(spec, 1.0, (4, 16), 3000, 36, workers=1)
    b = convergence_study(spec, 1.0, (4, 16), 3000, 36, workers=3)
    assert a.rows == b.rows


def test_rate_fit_synthetic():
    ns = [4, 16, 64, 256]
    fit = rate_fit(synthetic(ns, [0.37 / n for n in ns]))
    assert abs(fit.slope + 1.0) < 1e-12
    assert fit.column == "gap"
    mixed = rate_fit(synthetic(ns, [1 / n + 1 / math.sqrt(n) for n in ns]))
    assert -1.0 < mixed.slope < -0.5


def test_rate_fit_needs_signal():
    with pytest.raises(InsufficientSignal):
        rate_fit(synthetic([4, 16, 64, 256], [1e-3, 1e-4, 1e-6, 1e-7], se=1e-5))


def test_hill_recovers_pareto_index():
    x = np.random.default_rng(5).pareto(1.5, 100_000) + 1.0
    report = tail_diagnostic(x)
    assert abs(report.index - 1.5) < 0.1
    assert report.verdict is TailVerdict.SECOND_MOMENT_LIKELY_INFINITE
    assert [h.fraction for h in report.sweep] == [0.025, 0.05, 0.1]


def test_hill_lognormal_is_finite():
    x = np.random.default_rng(6).lognormal(0.0, 0.5, 100_000)
    assert tail_diagnostic(x).verdict is TailVerdict.MEAN_LIKELY_FINITE


def test_hill_inconclusive_near_two():
    x = np.random.default_rng(7).pareto(2.0, 10_000) + 1.0
    assert tail_diagnostic(x, fraction=0.02).verdict is TailVerdict.INCONCLUSIVE


def test_tail_diagnostic_errors():
    with pytest.raises(InsufficientSamples):
        tail_diagnostic(np.ones(9_999))
    with pytest.raises(DomainError):
        tail_diagnostic(np.arange(1.0, 20_001.0), fraction=0.3)
    assert hill_estimate(np.arange(1.0, 101.0), 0.1).k == 10


def test_q_rescue_preconditions():
    with pytest.raises(DomainError):
        q_rescue_experiment(VolOfVol(100, 0.04, 1, 0.5, 1, 1, 1.0), 2.0)
    with pytest.raises(DomainError):
        q_rescue_experiment(VolOfVol(100, 0.04, 1, 2.0, 1, 0.5, 0.2), 2.0)  # chi < 0
    with pytest.raises(DomainError):
        q_rescue_experiment(VolOfVol(100, 0.04, 1, 0.5, 1, 1, 0.99), 1.0)  # T < T*


def test_bound_study_black_scholes():
    study = bound_study(BlackScholes(100, 0.2), 1.0, (1, 4, 16), 5000, 37)
    assert study.constant == pytest.approx(0.0084, rel=1e-12)
    assert study.enn.mean == 0.0
    assert study.max_abs_gap <= study.constant


def test_bound_study_jumps_have_jump_input():
    study = bound_study(JumpDiffusion(100, 0.2, 5.0, -0.05, 0.1), 1.0, (1, 4), 20_000, 38)
    expected_nn = 5.0 * (0.05**2 + 0.1**2)
    assert abs(study.enn.mean - expected_nn) < 4 * study.enn.stderr
    assert study.max_abs_gap <= study.constant
