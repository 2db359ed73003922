"""Path simulation for every model family.

Paths are produced block by block (see :mod:`varswap.rng`).  Arrays in a
:class:`PathBatch` are path-major: row ``i`` holds path ``start + i`` at the
``k*n + 1`` simulation times.

Log-price construction
----------------------
Black-Scholes and jump-diffusion log-prices use exact Gaussian increments.
For the stochastic-volatility families the variance path is simulated first
and, while the price driver B is independent of the variance drivers (the
default, ``rho_bw = 0``), each log-price increment over a substep is drawn
exactly from its conditional law N(-IV/2, IV), where IV is the trapezoid
integral of the variance over that substep.  This is the same quantity the
continuous payoff integrates, so discrete and continuous payoffs are built
from one consistent variance record.  With ``rho_bw != 0`` the correlated
part of the increment uses the left-point approximation sqrt(v) dW.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional

import numpy as np

from .errors import GridMismatch, NumericalBreakdown, RangeViolation, ResourceLimit
from .models import CEV, BlackScholes, JumpDiffusion, ModelSpec, ThreeHalves, VolOfVol
from .rng import BLOCK_SIZE, RngStream, block_range

__all__ = [
    "Scheme",
    "TimeGrid",
    "PathBatch",
    "simulate_paths",
    "iter_path_blocks",
    "simulate_reciprocal_bessel3",
    "DEFAULT_MEMORY_BUDGET",
]

DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes of path storage per request


class Scheme(str, enum.Enum):
    EULER = "EulerFullTruncation"
    EXACT = "ExactWhereAvailable"

    @classmethod
    def parse(cls, value: "Scheme | str") -> "Scheme":
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name, member.name.lower()):
                return member
        raise RangeViolation(f"unknown scheme {value!r}; expected one of {[m.value for m in cls]}")


DEFAULT_SUBSTEPS = {Scheme.EULER: 8, Scheme.EXACT: 1}


@dataclass(frozen=True)
class TimeGrid:
    """Payoff sampling at t_i = i T / n, simulated with ``substeps`` per interval."""

    T: float
    n: int
    substeps: Optional[int] = None

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise RangeViolation(f"T > 0 required, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise RangeViolation(f"n must be a positive integer, got {self.n}")
        if self.substeps is not None and (int(self.substeps) != self.substeps or self.substeps < 1):
            raise RangeViolation(f"substeps must be a positive integer, got {self.substeps}")

    def resolved(self, scheme: Scheme | str) -> "TimeGrid":
        if self.substeps is not None:
            return self
        return TimeGrid(self.T, self.n, DEFAULT_SUBSTEPS[Scheme.parse(scheme)])

    @property
    def k(self) -> int:
        return 1 if self.substeps is None else int(self.substeps)

    @property
    def steps(self) -> int:
        return int(self.n) * self.k

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * (self.T / self.steps)

    def stride(self, n: int) -> int:
        """Number of substeps per payoff interval when sampling ``n`` times."""
        if int(n) != n or n < 1 or self.steps % n:
            raise GridMismatch(f"n={n} does not divide the {self.steps}-step simulation grid")
        return self.steps // int(n)


@dataclass
class PathBatch:
    grid: TimeGrid
    log_price: np.ndarray
    v: np.ndarray
    w: Optional[np.ndarray]
    jump_path: np.ndarray
    jump_index: np.ndarray
    jump_log: np.ndarray
    seed: int
    scheme: Scheme
    spec: Optional[ModelSpec]
    spec_hash: str
    start: int = 0
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.log_price.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times()

    @property
    def jump_size(self) -> np.ndarray:
        """Relative jump sizes x = exp(J) - 1 > -1."""
        return np.expm1(self.jump_log)

    def jumps(self, path: int) -> list[tuple[int, float]]:
        """(time index, relative size) of each jump on local path ``path``."""
        sel = self.jump_path == path
        return list(zip(self.jump_index[sel].tolist(), self.jump_size[sel].tolist()))

    def metadata(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "scheme": self.scheme.value,
            "spec_hash": self.spec_hash,
            "spec": None if self.spec is None else self.spec.to_dict(),
            "T": self.grid.T,
            "n": self.grid.n,
            "substeps": self.grid.k,
            "start": self.start,
            "n_paths": self.n_paths,
            "block_size": BLOCK_SIZE,
        }


@dataclass
class _Block:
    log_price: np.ndarray  # time-major (K+1, B)
    v: np.ndarray
    w: Optional[np.ndarray] = None
    jump_lane: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    jump_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    jump_log: np.ndarray = field(default_factory=lambda: np.zeros(0))
    aux: dict[str, np.ndarray] = field(default_factory=dict)


def _cumulate(log0: float, inc: np.ndarray) -> np.ndarray:
    out = np.empty((inc.shape[0] + 1,) + inc.shape[1:])
    out[0] = log0
    np.cumsum(inc, axis=0, out=out[1:])
    out[1:] += log0
    return out


def _block_gbm_jumps(spec, grid: TimeGrid, scheme: Scheme, gen: np.random.Generator) -> _Block:
    K, dt, B = grid.steps, grid.dt, BLOCK_SIZE
    sigma = spec.sigma
    lam = spec.lam if isinstance(spec, JumpDiffusion) else 0.0
    kbar = spec.mean_jump if isinstance(spec, JumpDiffusion) else 0.0
    z = gen.standard_normal((K, B))
    inc = sigma * math.sqrt(dt) * z - (0.5 * sigma * sigma + lam * kbar) * dt
    blk = _Block(log_price=None, v=np.full((K + 1, B), sigma * sigma))  # type: ignore[arg-type]
    if lam > 0.0:
        counts = gen.poisson(lam * grid.T, B)
        total = int(counts.sum())
        taus = gen.uniform(0.0, grid.T, total)
        logs = gen.normal(spec.m, spec.delta, total)
        lanes = np.repeat(np.arange(B), counts)
        # snap to the nearest substep boundary; t = 0 is excluded
        idx = np.clip(np.rint(taus / dt).astype(np.int64), 1, K)
        np.add.at(inc, (idx - 1, lanes), logs)
        order = np.lexsort((idx, lanes))
        blk.jump_lane, blk.jump_index, blk.jump_log = lanes[order], idx[order], logs[order]
    blk.log_price = _cumulate(math.log(spec.s0), inc)
    return blk


def _price_from_variance(
    spec, v: np.ndarray, w_incr: Optional[np.ndarray], dt: float, gen: np.random.Generator
) -> np.ndarray:
    iv = 0.5 * (v[:-1] + v[1:]) * dt
    xi = gen.standard_normal(iv.shape)
    rho_bw = spec.rho_bw
    # infinite variance is reported by _check_finite, not as a warning
    with np.errstate(invalid="ignore", over="ignore"):
        if rho_bw == 0.0:
            inc = np.sqrt(iv) * xi - 0.5 * iv
        else:
            inc = (
                rho_bw * np.sqrt(v[:-1]) * w_incr
                + math.sqrt(1.0 - rho_bw * rho_bw) * np.sqrt(iv) * xi
                - 0.5 * iv
            )
        return _cumulate(math.log(spec.s0), inc)


def _cir_exact_consts(a: float, sigma: float, dt: float) -> tuple[float, float]:
    # R_{t+dt} = c * chi'^2(d, R_t e^{-a dt} / c); returns (c, e^{-a dt})
    if a == 0.0:
        return sigma * sigma * dt / 4.0, 1.0
    return sigma * sigma * (-math.expm1(-a * dt)) / (4.0 * a), math.exp(-a * dt)


def _block_volofvol(spec: VolOfVol, grid: TimeGrid, scheme: Scheme, gen: np.random.Generator) -> _Block:
    K, dt, B = grid.steps, grid.dt, BLOCK_SIZE
    sq_dt = math.sqrt(dt)
    kappa, theta, eta, rho = spec.kappa, spec.theta, spec.eta, spec.rho
    rho_perp = math.sqrt(max(0.0, 1.0 - rho * rho))
    lv = np.empty((K + 1, B))
    w_out = np.empty((K + 1, B))
    w_incr = np.empty((K, B)) if spec.rho_bw != 0.0 else None
    lv[0] = math.log(spec.v0)
    w = np.full(B, spec.w0)
    w_out[0] = w
    if scheme is Scheme.EXACT:
        c, decay = _cir_exact_consts(kappa, eta, dt)
        dof = 4.0 * kappa * theta / (eta * eta)
    for j in range(K):
        z1 = gen.standard_normal(B)
        if scheme is Scheme.EULER:
            z2 = gen.standard_normal(B)
            wp = np.maximum(w, 0.0)
            dw = sq_dt * z1
            dz = rho * dw + rho_perp * sq_dt * z2
            lv[j + 1] = lv[j] + np.sqrt(wp) * dw - 0.5 * wp * dt
            w = w + kappa * (theta - wp) * dt + eta * np.sqrt(wp) * dz
            gw = dw
        else:
            w_new = c * gen.noncentral_chisquare(dof, w * (decay / c))
            iw = 0.5 * (w + w_new) * dt
            # int sqrt(w) dZ recovered from the CIR transition
            iz = (w_new - w - kappa * theta * dt + kappa * iw) / eta
            mart = rho * iz + rho_perp * np.sqrt(iw) * z1
            lv[j + 1] = lv[j] - 0.5 * iw + mart
            w = w_new
            if w_incr is not None:
                with np.errstate(divide="ignore", invalid="ignore"):
                    gw = np.where(iw > 0, mart / np.sqrt(iw / dt), sq_dt * z1)
        if w_incr is not None:
            w_incr[j] = gw
        w_out[j + 1] = np.maximum(w, 0.0)
    v = np.exp(lv)
    log_price = _price_from_variance(spec, v, w_incr, dt, gen)
    return _Block(log_price=log_price, v=v, w=w_out)


def _block_three_halves(spec: ThreeHalves, grid: TimeGrid, scheme: Scheme, gen: np.random.Generator) -> _Block:
    # R = 1/v solves dR = (eps^2 - q - p R) dt - eps sqrt(R) dW
    K, dt, B = grid.steps, grid.dt, BLOCK_SIZE
    sq_dt = math.sqrt(dt)
    eps, p, q = spec.epsilon, spec.p, spec.q
    level = eps * eps - q
    r_out = np.empty((K + 1, B))
    w_incr = np.empty((K, B)) if spec.rho_bw != 0.0 else None
    r = np.full(B, 1.0 / spec.v0)
    r_out[0] = r
    if scheme is Scheme.EXACT:
        c, decay = _cir_exact_consts(p, eps, dt)
        dof = 4.0 * level / (eps * eps)
    for j in range(K):
        if scheme is Scheme.EULER:
            z = gen.standard_normal(B)
            rp = np.maximum(r, 0.0)
            dw = sq_dt * z
            r = r + (level - p * rp) * dt - eps * np.sqrt(rp) * dw
            gw = dw
        else:
            r_new = c * gen.noncentral_chisquare(dof, r * (decay / c))
            if w_incr is not None:
                ir = 0.5 * (r + r_new) * dt
                mart = -(r_new - r - level * dt + p * ir) / eps
                with np.errstate(divide="ignore", invalid="ignore"):
                    gw = np.where(ir > 0, mart / np.sqrt(ir / dt), 0.0)
            r = r_new
        if w_incr is not None:
            w_incr[j] = gw
        r_out[j + 1] = np.maximum(r, 0.0)
    with np.errstate(divide="ignore"):
        v = 1.0 / r_out
    log_price = _price_from_variance(spec, v, w_incr, dt, gen)
    return _Block(log_price=log_price, v=v)


def _block_cev(spec: CEV, grid: TimeGrid, scheme: Scheme, gen: np.random.Generator) -> _Block:
    # no exact scheme: log-Euler for both scheme tags
    K, dt, B = grid.steps, grid.dt, BLOCK_SIZE
    sq_dt = math.sqrt(dt)
    power = 2.0 * (spec.alpha - 1.0)
    s2 = spec.sigma * spec.sigma
    xi = gen.standard_normal((K, B))
    ls = np.empty((K + 1, B))
    ls[0] = math.log(spec.s0)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(K):
            vj = s2 * np.exp(power * ls[j])
            ls[j + 1] = ls[j] + np.sqrt(vj) * sq_dt * xi[j] - 0.5 * vj * dt
        v = s2 * np.exp(power * ls)
    return _Block(log_price=ls, v=v)


_BLOCK_SIMULATORS: dict[type, Callable[..., _Block]] = {
    BlackScholes: _block_gbm_jumps,
    JumpDiffusion: _block_gbm_jumps,
    VolOfVol: _block_volofvol,
    ThreeHalves: _block_three_halves,
    CEV: _block_cev,
}


def _check_finite(blk: _Block, where: str) -> None:
    arrays = [blk.log_price, blk.v] + ([blk.w] if blk.w is not None else [])
    for arr in arrays:
        if not np.isfinite(arr).all():
            raise NumericalBreakdown(f"non-finite values in {where}")


def _slice_block(
    blk: _Block, block: int, lo: int, hi: int, grid, seed, scheme, spec, tag: str
) -> PathBatch:
    first = block * BLOCK_SIZE
    a, b = lo - first, hi - first
    sel = (blk.jump_lane >= a) & (blk.jump_lane < b)
    return PathBatch(
        grid=grid,
        log_price=np.ascontiguousarray(blk.log_price[:, a:b].T),
        v=np.ascontiguousarray(blk.v[:, a:b].T),
        w=None if blk.w is None else np.ascontiguousarray(blk.w[:, a:b].T),
        jump_path=blk.jump_lane[sel] - a,
        jump_index=blk.jump_index[sel],
        jump_log=blk.jump_log[sel],
        seed=seed,
        scheme=scheme,
        spec=spec,
        spec_hash=tag,
        start=lo,
        aux={key: np.ascontiguousarray(val[:, a:b].T) for key, val in blk.aux.items()},
    )


def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= seed < 1 << 64:
        raise RangeViolation(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return int(seed)


def _iter_blocks(
    make: Callable[[int], _Block],
    finish: Callable[[_Block, int, int, int], PathBatch],
    start: int,
    stop: int,
    workers: int,
) -> Iterator[PathBatch]:
    blocks = list(block_range(start, stop))

    def run(block: int) -> PathBatch:
        lo = max(start, block * BLOCK_SIZE)
        hi = min(stop, (block + 1) * BLOCK_SIZE)
        return finish(make(block), block, lo, hi)

    if workers <= 1:
        for block in blocks:
            yield run(block)
        return
    window = 2 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for i in range(0, len(blocks), window):
            yield from pool.map(run, blocks[i : i + window])


def _block_bytes(grid: TimeGrid, arrays: int) -> int:
    return BLOCK_SIZE * (grid.steps + 1) * 8 * arrays


def iter_path_blocks(
    spec: ModelSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    scheme: Scheme | str = Scheme.EXACT,
    *,
    start: int = 0,
    workers: int = 1,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> Iterator[PathBatch]:
    """Yield the paths ``[start, start + n_paths)`` as consecutive block batches.

    Batches come out in path order whatever the worker count; the values of a
    path depend only on ``(spec, grid, seed, scheme, path index)``.
    """
    scheme = Scheme.parse(scheme)
    grid = grid.resolved(scheme)
    seed = _check_seed(seed)
    if n_paths < 1:
        raise RangeViolation(f"n_paths >= 1 required, got {n_paths}")
    simulate = _BLOCK_SIMULATORS.get(type(spec))
    if simulate is None:
        raise TypeError(f"not a model spec: {spec!r}")
    if _block_bytes(grid, 6) * max(1, workers) > memory_budget:
        raise ResourceLimit(
            f"a {grid.steps}-step block of {BLOCK_SIZE} paths exceeds the memory budget"
        )
    tag = spec.hash

    def make(block: int) -> _Block:
        blk = simulate(spec, grid, scheme, RngStream(seed, block).generator())
        _check_finite(blk, f"block {block}")
        return blk

    def finish(blk: _Block, block: int, lo: int, hi: int) -> PathBatch:
        return _slice_block(blk, block, lo, hi, grid, seed, scheme, spec, tag)

    yield from _iter_blocks(make, finish, start, start + n_paths, workers)


def concat_batches(parts: list[PathBatch]) -> PathBatch:
    first = parts[0]
    if len(parts) == 1:
        return first
    offsets = np.cumsum([0] + [b.n_paths for b in parts[:-1]])
    return PathBatch(
        grid=first.grid,
        log_price=np.concatenate([b.log_price for b in parts]),
        v=np.concatenate([b.v for b in parts]),
        w=None if first.w is None else np.concatenate([b.w for b in parts]),
        jump_path=np.concatenate([b.jump_path + off for b, off in zip(parts, offsets)]),
        jump_index=np.concatenate([b.jump_index for b in parts]),
        jump_log=np.concatenate([b.jump_log for b in parts]),
        seed=first.seed,
        scheme=first.scheme,
        spec=first.spec,
        spec_hash=first.spec_hash,
        start=first.start,
        aux={key: np.concatenate([b.aux[key] for b in parts]) for key in first.aux},
    )


def _check_budget(n_paths: int, grid: TimeGrid, arrays: int, budget: int) -> None:
    need = n_paths * (grid.steps + 1) * 8 * arrays
    if need > budget:
        raise ResourceLimit(
            f"{n_paths} paths x {grid.steps + 1} points needs {need} bytes, "
            f"budget is {budget}; stream with iter_path_blocks instead"
        )


def simulate_paths(
    spec: ModelSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    scheme: Scheme | str = Scheme.EXACT,
    *,
    start: int = 0,
    workers: int = 1,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> PathBatch:
    """Simulate ``n_paths`` paths of (log S, v, w, jumps) on ``grid``.

    Raises
    ------
    ResourceLimit
        If the materialised batch would exceed ``memory_budget`` bytes.
    NumericalBreakdown
        If any step produces a non-finite value; the whole batch is aborted.
    """
    scheme = Scheme.parse(scheme)
    grid = grid.resolved(scheme)
    arrays = 3 if isinstance(spec, VolOfVol) else 2
    _check_budget(n_paths, grid, arrays, memory_budget)
    parts = list(
        iter_path_blocks(
            spec, grid, n_paths, seed, scheme,
            start=start, workers=workers, memory_budget=memory_budget,
        )
    )
    return concat_batches(parts)


def simulate_reciprocal_bessel3(
    x0: float,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    workers: int = 1,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> PathBatch:
    """Exact paths of X = 1/|x0 e + W|, W a 3-d Brownian motion.

    ``aux["x"]`` holds X (so M = -X), ``aux["qv"]`` the trapezoid quadrature of
    <X,X> = int X^4 ds, ``v`` the spot variance X^4 and ``log_price`` the log
    of S = exp(-X - <X,X>/2) <= 1.
    """
    if not (x0 > 0 and math.isfinite(x0)):
        raise RangeViolation(f"x0 > 0 required, got {x0}")
    seed = _check_seed(seed)
    grid = grid.resolved(Scheme.EXACT)
    _check_budget(n_paths, grid, 4, memory_budget)
    K, dt = grid.steps, grid.dt
    tag = f"ReciprocalBessel3(x0={x0!r})"

    def make(block: int) -> _Block:
        gen = RngStream(seed, block).generator()
        inc = gen.standard_normal((K, BLOCK_SIZE, 3)) * math.sqrt(dt)
        pos = np.empty((K + 1, BLOCK_SIZE, 3))
        pos[0] = 0.0
        np.cumsum(inc, axis=0, out=pos[1:])
        pos[:, :, 0] += x0
        x = 1.0 / np.sqrt(np.einsum("kbi,kbi->kb", pos, pos))
        x[0] = 1.0 / x0
        x4 = x**4
        qv = np.zeros_like(x)
        np.cumsum(0.5 * (x4[:-1] + x4[1:]) * dt, axis=0, out=qv[1:])
        blk = _Block(log_price=-x - 0.5 * qv, v=x4, aux={"x": x, "qv": qv})
        _check_finite(blk, f"block {block}")
        return blk

    def finish(blk: _Block, block: int, lo: int, hi: int) -> PathBatch:
        return _slice_block(blk, block, lo, hi, grid, seed, Scheme.EXACT, None, tag)

    return concat_batches(list(_iter_blocks(make, finish, 0, n_paths, workers)))
