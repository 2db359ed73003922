"""Discrete variance swaps versus their quadratic-variation approximation.

Model catalog, path simulation, payoffs, analytic oracles and experiments
for checking when E(P^n(T)) is finite and how fast it approaches E(P(T)).
"""
from ._version import __version__
from .closed_form import (
    ExplosionBranch,
    ExplosionReport,
    QTransform,
    ConditionReport,
    bs_gap,
    check_theorem4_conditions,
    dufresne_moment,
    explosion_time,
    laplace_transform_32,
    q_transform,
    theorem3_constant,
    variance_moment,
)
from .errors import *  # noqa: F401,F403
from .experiments import (
    ConvergenceTable,
    RateFit,
    TailReport,
    TailVerdict,
    convergence_study,
    q_rescue_experiment,
    rate_fit,
    tail_diagnostic,
    bound_study,
)
from .models import (
    CEV,
    BlackScholes,
    Finiteness,
    FinitenessVerdict,
    JumpDiffusion,
    ThreeHalves,
    VolOfVol,
    build_model,
    cev_is_true_martingale,
    classify_finiteness,
)
from .payoffs import McEstimate, SwapSample, discrete_payoffs, mc_estimate, qv_payoffs
from .sde_sim import PathBatch, Scheme, TimeGrid, simulate_paths, simulate_reciprocal_bessel3
from .special import gamma_fn, kummer_m
