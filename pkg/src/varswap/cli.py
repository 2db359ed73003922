"""Command-line front end.

Every subcommand takes an optional config file (TOML, or JSON by suffix)
and flag overrides, writes deterministic CSV/JSON files to the output
directory and prints a short summary.

Exit codes: 0 success, 1 configuration error, 2 refusal because an
expectation is infinite (or convergence conditions fail), 3 numerical
breakdown.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ._version import __version__
from .closed_form import dufresne_moment, explosion_time, laplace_transform_32, q_transform
from .config import RunConfig, parse_config, read_raw
from .errors import (
    ConditionsFailed,
    ConfigError,
    DomainError,
    GridMismatch,
    InsufficientSamples,
    InsufficientSignal,
    MissingParameter,
    NumericalBreakdown,
    RangeViolation,
    ResourceLimit,
)
from .experiments import (
    CSV_COLUMNS,
    DEFAULT_FRACTION,
    DEFAULT_N_LIST,
    DEFAULT_SWEEP,
    convergence_study,
    integrated_variance_samples,
    rate_fit,
    tail_diagnostic,
)
from .models import Finiteness, ThreeHalves, VolOfVol, build_model, classify_finiteness
from .payoffs import McEstimate, discrete_payoffs, mc_estimate, qv_payoffs
from .report import csv_header, write_csv, write_json, write_path_dump
from .sde_sim import TimeGrid, iter_path_blocks, simulate_paths

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_REFUSED = 2
EXIT_BREAKDOWN = 3

OUT_ENV = "VARSWAP_OUT"
DEFAULT_OUT = "varswap-out"
TRADING_DAYS = 252
DEFAULT_LAMBDAS = (0.0, 0.5, 1.0, 2.0)
DEFAULT_ORDERS = (1.0, 2.0, -1.0, -2.0)
DEFAULT_TAIL_STEPS = 200

ESTIMATE_COLUMNS = ("estimand", "mean", "stderr", "ci_low", "ci_high", "n_paths", "seed")


class Refusal(Exception):
    """Raised by a command that declines to report a headline number."""


class _Run:
    """Shared state for one command invocation."""

    def __init__(self, name: str, cfg: RunConfig, out: Path, force: bool):
        self.name = name
        self.cfg = cfg
        self.out = out
        self.force = force
        self.stamp = (
            datetime.now(timezone.utc).isoformat(timespec="seconds")
            if cfg.output.timestamps else None
        )

    def payload(self, **body: Any) -> dict[str, Any]:
        doc = {
            "command": self.name,
            "library_version": __version__,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash,
        }
        if self.stamp:
            doc["generated_at"] = self.stamp
        doc.update(body)
        return doc

    def header(self, schema: str, **extra: Any) -> dict[str, Any]:
        if self.stamp:
            extra["generated_at"] = self.stamp
        return csv_header(schema, self.cfg.hash, extra)

    def emit(self, payload: dict[str, Any], columns=None, rows=None, schema: str = "") -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        if "json" in self.cfg.output.formats:
            write_json(self.out / f"{self.name}.json", payload)
        if columns is not None and "csv" in self.cfg.output.formats:
            write_csv(self.out / f"{self.name}.csv", columns, rows, self.header(schema))

    def dump_paths(self, spec, grid: TimeGrid) -> None:
        count = min(self.cfg.output.dump_paths, self.cfg.mc.n_paths)
        if count:
            self.out.mkdir(parents=True, exist_ok=True)
            batch = simulate_paths(spec, grid, count, self.cfg.mc.seed, self.cfg.mc.scheme)
            write_path_dump(self.out, batch, self.cfg.hash)


def _need(value: Any, key: str) -> Any:
    if value is None:
        raise ConfigError(f"missing key '{key}'")
    return value


def _estimate_row(e: McEstimate) -> tuple:
    return (e.label, e.mean, e.stderr, e.ci_low, e.ci_high, e.n_paths, e.seed)


def cmd_price(run: _Run) -> int:
    cfg = run.cfg
    spec = build_model(cfg.model)
    T = _need(cfg.grid.T, "grid.T")
    if cfg.grid.n is None and cfg.grid.n_list:
        raise ConfigError("price needs a single 'grid.n', not 'grid.n_list'")
    n = _need(cfg.grid.n, "grid.n")
    verdict = classify_finiteness(spec, T, n)
    if Finiteness.INFINITE in (verdict.ep_continuous, verdict.ep_discrete) and not run.force:
        run.emit(run.payload(verdict=verdict, refused=True))
        tstar = "" if verdict.tstar is None else f" (T* = {verdict.tstar:.10g}, T = {T:g})"
        raise Refusal(
            f"E(P^n) is {verdict.ep_discrete.value}{tstar}: {verdict.rationale}. "
            "No price reported; pass --force to simulate anyway."
        )
    grid = TimeGrid(T, n, cfg.grid.substeps).resolved(cfg.mc.scheme)
    pn, p = [], []
    for batch in iter_path_blocks(spec, grid, cfg.mc.n_paths, cfg.mc.seed, cfg.mc.scheme,
                                  workers=cfg.mc.workers):
        pn.append(discrete_payoffs(batch, n)[0])
        p.append(qv_payoffs(batch)[0])
    pn, p = np.concatenate(pn), np.concatenate(p)
    seed = cfg.mc.seed
    estimates = [
        mc_estimate(pn, "P^n", seed),
        mc_estimate(np.sqrt(pn), "V^n", seed),
        mc_estimate(p, "P", seed),
        mc_estimate(np.sqrt(p), "V", seed),
    ]
    if cfg.options.get("annualize"):
        factor = TRADING_DAYS / n
        scale = {"P^n": factor, "P": factor, "V^n": math.sqrt(factor), "V": math.sqrt(factor)}
        estimates += [e.scaled(scale[e.label], f"{e.label} annualized") for e in estimates[:4]]
    run.emit(
        run.payload(verdict=verdict, refused=False, forced=run.force, spec=spec,
                    estimates=estimates, T=T, n=n, substeps=grid.k),
        ESTIMATE_COLUMNS, [_estimate_row(e) for e in estimates], "varswap.price/1",
    )
    run.dump_paths(spec, grid)
    for e in estimates:
        print(f"{e.label:>14}  {e.mean:.10g} +/- {e.half_width:.3g}")
    print(f"finiteness: E(P)={verdict.ep_continuous.value} E(P^n)={verdict.ep_discrete.value}")
    return EXIT_OK


def cmd_converge(run: _Run) -> int:
    cfg = run.cfg
    spec = build_model(cfg.model)
    T = _need(cfg.grid.T, "grid.T")
    n_list = cfg.grid.n_list or ((cfg.grid.n,) if cfg.grid.n else DEFAULT_N_LIST)
    override = run.force or bool(cfg.options.get("override", False))
    try:
        table = convergence_study(
            spec, T, n_list, cfg.mc.n_paths, cfg.mc.seed,
            scheme=cfg.mc.scheme, substeps=cfg.grid.substeps,
            override=override, workers=cfg.mc.workers,
        )
    except ConditionsFailed as exc:
        run.emit(run.payload(refused=True, reason=str(exc)))
        raise Refusal(f"{exc}; pass --force to run an exploratory study") from None
    try:
        fit: Any = rate_fit(table, cfg.options.get("rate_column", "auto"))
        fit_note = None
    except InsufficientSignal as exc:
        fit, fit_note = None, str(exc)
    verdict = classify_finiteness(spec, T, max(n_list))
    run.emit(
        run.payload(spec=spec, table=table, rate_fit=fit, rate_fit_note=fit_note,
                    verdict=verdict, exploratory=table.metadata["exploratory"]),
        CSV_COLUMNS, [r.as_tuple() for r in table.rows], "varswap.convergence/1",
    )
    run.dump_paths(spec, TimeGrid(T, max(n_list), cfg.grid.substeps))
    if table.metadata["exploratory"]:
        print("exploratory: convergence conditions do not hold for this model")
    print(f"{'n':>6} {'gap':>14} {'gap_se':>10} {'gap_cv':>14} {'gap_cv_se':>10}")
    for r in table.rows:
        print(f"{r.n:>6} {r.gap:>14.6g} {r.gap_se:>10.3g} {r.gap_cv:>14.6g} {r.gap_cv_se:>10.3g}")
    if fit is None:
        print(f"rate fit: {fit_note}")
    else:
        print(f"rate fit ({fit.column}): slope {fit.slope:.4f}, r2 {fit.r2:.4f}")
    return EXIT_OK


def cmd_explode(run: _Run) -> int:
    cfg = run.cfg
    m = cfg.model
    kappa, eta, rho = (_need(m.get(k), f"model.{k}") for k in ("kappa", "eta", "rho"))
    report = explosion_time(kappa, eta, rho)
    body: dict[str, Any] = {"explosion": report}
    full = set(m) - {"family"} >= {"s0", "v0", "w0", "kappa", "theta", "eta", "rho"}
    if full and cfg.grid.T is not None:
        body["verdict"] = classify_finiteness(build_model({**m, "family": "VolOfVol"}), cfg.grid.T)
    if "theta" in m and abs(rho) < 1:
        qt = q_transform(kappa, m["theta"], eta, rho, cfg.options.get("gamma"))
        body["q_transform"] = qt
        body["tstar_q"] = explosion_time(qt.kappa_q, eta, rho).tstar
    row = (kappa, eta, rho, report.chi, report.delta, report.branch.value, report.tstar)
    run.emit(run.payload(**body), ("kappa", "eta", "rho", "chi", "delta", "branch", "tstar"),
             [row], "varswap.explosion/1")
    print(f"chi={report.chi:.10g} delta={report.delta:.10g} branch={report.branch.value} "
          f"T*={report.tstar:.10g}")
    if "q_transform" in body:
        qt = body["q_transform"]
        print(f"Q: gamma={qt.gamma:.6g} kappa_q={qt.kappa_q:.6g} theta_q={qt.theta_q:.6g} "
              f"T*_Q={body['tstar_q']:.6g}")
    return EXIT_OK


def _three_halves(cfg: RunConfig) -> ThreeHalves:
    spec = build_model({"family": "ThreeHalves", **cfg.model})
    if not isinstance(spec, ThreeHalves):
        raise ConfigError("model.family: this command needs ThreeHalves")
    return spec


def cmd_laplace(run: _Run) -> int:
    cfg = run.cfg
    spec = _three_halves(cfg)
    T = _need(cfg.grid.T, "grid.T")
    lambdas = cfg.options.get("lambdas", list(DEFAULT_LAMBDAS))
    values = [laplace_transform_32(lam, spec, T) for lam in lambdas]
    run.emit(run.payload(spec=spec, T=T, values=[{"lambda": l, "value": v} for l, v in zip(lambdas, values)]),
             ("lambda", "value"), list(zip(lambdas, values)), "varswap.laplace/1")
    for lam, v in zip(lambdas, values):
        print(f"E(exp(-{lam:g} * int v)) = {v:.12g}")
    return EXIT_OK


def cmd_moments(run: _Run) -> int:
    cfg = run.cfg
    spec = _three_halves(cfg)
    t = cfg.options.get("t", cfg.grid.T)
    t = _need(t, "options.t")
    variant = cfg.options.get("variant", "corrected")
    orders = cfg.options.get("orders", list(DEFAULT_ORDERS))
    rows = []
    for s in orders:
        try:
            value, note = dufresne_moment(s, spec, t, variant=variant), ""
        except DomainError as exc:
            value, note = math.nan, str(exc)
        rows.append((s, value, math.isfinite(value), note))
    run.emit(
        run.payload(spec=spec, t=t, variant=variant, vbar=spec.vbar,
                    moments=[{"order": s, "value": v, "finite": f, "note": nt} for s, v, f, nt in rows]),
        ("order", "value", "finite", "note"), rows, "varswap.moments/1",
    )
    print(f"vbar = {spec.vbar:.10g}  (E(R_t^s) infinite iff s <= -vbar)")
    for s, v, _, note in rows:
        print(f"E(R_t^{s:g}) = {v:.12g}" + (f"  [{note}]" if note else ""))
    return EXIT_OK


def cmd_tail(run: _Run) -> int:
    cfg = run.cfg
    spec = build_model(cfg.model)
    T = _need(cfg.grid.T, "grid.T")
    opts = cfg.options
    quantity = opts.get("quantity", "integrated_variance")
    if quantity == "pn":
        n = _need(cfg.grid.n, "grid.n")
        grid = TimeGrid(T, n, cfg.grid.substeps).resolved(cfg.mc.scheme)
        samples = np.concatenate([
            discrete_payoffs(b, n)[0]
            for b in iter_path_blocks(spec, grid, cfg.mc.n_paths, cfg.mc.seed, cfg.mc.scheme,
                                      workers=cfg.mc.workers)
        ])
    else:
        steps = opts.get("steps", DEFAULT_TAIL_STEPS)
        grid = TimeGrid(T, steps, 1)
        samples = integrated_variance_samples(
            spec, T, cfg.mc.n_paths, cfg.mc.seed, steps=steps,
            scheme=cfg.mc.scheme, workers=cfg.mc.workers,
        )
    report = tail_diagnostic(samples, opts.get("fraction", DEFAULT_FRACTION), opts.get("sweep", DEFAULT_SWEEP))
    rows = [(True, *_hill_row(report.estimate))] + [(False, *_hill_row(h)) for h in report.sweep]
    run.emit(
        run.payload(spec=spec, T=T, quantity=quantity, tail=report,
                    verdict=classify_finiteness(spec, T)),
        ("primary", "fraction", "k", "index", "stderr", "ci_low", "ci_high"), rows, "varswap.tail/1",
    )
    run.dump_paths(spec, grid)
    lo, hi = report.ci
    print(f"Hill index {report.index:.4f}  95% CI [{lo:.4f}, {hi:.4f}]  verdict {report.verdict.value}")
    return EXIT_OK


def _hill_row(h) -> tuple:
    lo, hi = h.ci
    return (h.fraction, h.k, h.index, h.stderr, lo, hi)


COMMANDS: dict[str, tuple[Callable[[_Run], int], str]] = {
    "price": (cmd_price, "Monte Carlo prices of P^n, V^n, P and V with a finiteness verdict"),
    "converge": (cmd_converge, "gap E(P^n) - E(P) over a list of n, with a rate fit"),
    "explode": (cmd_explode, "moment explosion time T* and the measure-change transform"),
    "laplace": (cmd_laplace, "closed-form Laplace transform of the 3/2 integrated variance"),
    "moments": (cmd_moments, "moments of the 3/2 reciprocal variance (square-root process)"),
    "tail": (cmd_tail, "Hill tail diagnostic on simulated integrated variance or P^n"),
}


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not refusals
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"comma-separated integers expected, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("config", nargs="?", help="TOML or JSON config file")
    common.add_argument("--param", "-p", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config value; bare keys go to the model block, "
                             "dotted keys (grid.T, options.lambdas) to other blocks")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--n", type=_int_list, help="payoff sampling count(s), comma separated")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--format", help="comma-separated subset of csv,json")
    common.add_argument("--workers", type=int, help="simulation threads; results do not depend on it")
    common.add_argument("--force", action="store_true",
                        help="compute even when an expectation is infinite or conditions fail")
    common.add_argument("--annualize", action="store_true", help="also report 252/n annualized prices")
    common.add_argument("--timestamps", action="store_true", help="stamp outputs with the UTC time")
    common.add_argument("--dump-paths", type=int, metavar="N", help="write the first N raw paths")

    parser = _Parser(prog="varswap", description="Discrete variance swap laboratory.")
    parser.add_argument("--version", action="version", version=f"varswap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        return text


def _set(raw: dict, dotted: str, value: Any) -> None:
    block, _, key = dotted.rpartition(".")
    raw.setdefault(block or "model", {})
    if not isinstance(raw[block or "model"], dict):
        raise ConfigError(f"{block}: table expected")
    raw[block or "model"][key] = value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw: dict[str, Any] = read_raw(args.config) if args.config else {}
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        _set(raw, key.strip(), _parse_value(value.strip()))
    if args.seed is not None:
        _set(raw, "mc.seed", args.seed)
    if args.paths is not None:
        _set(raw, "mc.n_paths", args.paths)
    if args.workers is not None:
        _set(raw, "mc.workers", args.workers)
    if args.n:
        if args.command == "converge":
            _set(raw, "grid.n_list", args.n)
            raw["grid"].pop("n", None)
        else:
            if len(args.n) != 1:
                raise ConfigError("--n: a single value expected for this command")
            _set(raw, "grid.n", args.n[0])
    if args.format:
        _set(raw, "output.formats", [f.strip() for f in args.format.split(",")])
    if args.timestamps:
        _set(raw, "output.timestamps", True)
    if args.dump_paths is not None:
        _set(raw, "output.dump_paths", args.dump_paths)
    if args.annualize:
        _set(raw, "options.annualize", True)
    return parse_config(raw)


def output_dir(args: argparse.Namespace, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output.directory or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        cfg = resolve_config(args)
        return handler(_Run(args.command, cfg, output_dir(args, cfg), args.force))
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except NumericalBreakdown as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except (ConfigError, MissingParameter, RangeViolation, DomainError, GridMismatch,
            ResourceLimit, InsufficientSamples) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
