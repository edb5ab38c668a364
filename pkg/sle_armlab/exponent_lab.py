"""
Arm exponent formulas and the Monte Carlo experiments that test them
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .constants import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_C_BALL,
    HORIZON_FACTOR,
    KOEBE_LOWER,
    MIN_FIT_POINTS,
    SAFE_STOP_FACTOR,
)
from .crossing_events import (
    HORIZON,
    EventSpec,
    Variant,
    detect_crossings_batch,
    detect_Hpi,
    detect_trace_crossings,
)
from .exceptions import DomainError, FitError, RegimeError
from .loewner_core import (
    FlowState,
    StepPolicy,
    map_derivative,
    map_points,
    trace_polyline,
)
from .sle_driver import (
    DriverConfig,
    DrivingProcess,
    MartingaleSpec,
    avoids_force_side,
    block_rng,
    capacity_grid,
    martingale_value,
    run_flow,
    sample_on_grid,
    swallows_force_point,
)
from .utils import _assert, resolve_threads

logger = logging.getLogger(__name__)

ALPHA_PLUS_LT8 = "alpha_plus_lt8"
ALPHA_PLUS_GE8 = "alpha_plus_ge8"
ALPHA_HAT = "alpha_hat"
EXPONENT_KINDS = (ALPHA_PLUS_LT8, ALPHA_PLUS_GE8, ALPHA_HAT)

GRID_EPS = "eps"
GRID_RATIO = "ratio"
MODE_THRESHOLD = "threshold"
MODE_TRACE = "trace"

MOMENT_KINDS = ("lemma24", "lemma25", "prop31", "prop42")


###
# Exponent formulas
###
def _check_kind(kind, kappa):
    _assert(kind in EXPONENT_KINDS, f"Unknown exponent kind {kind!r}", DomainError)
    _assert(kappa > 0, "kappa must be >0", DomainError)
    if kind == ALPHA_PLUS_LT8:
        _assert(kappa < 8, "alpha_plus_lt8 needs kappa < 8", DomainError)
    elif kind == ALPHA_PLUS_GE8:
        _assert(kappa >= 8, "alpha_plus_ge8 needs kappa >= 8", DomainError)
    else:
        _assert(4 < kappa < 8, "alpha_hat needs kappa in (4, 8)", DomainError)


def predicted_exponent(kind, kappa, j):
    """alpha_j^+ (lt8 or ge8 branch) or hat-alpha_j^+; both vanish at j = 0"""
    _check_kind(kind, kappa)
    _assert(int(j) == j and j >= 0, "j must be a nonnegative integer", DomainError)
    if j == 0:
        return 0.0
    odd = j % 2 == 1
    n = (j + 1) // 2 if odd else j // 2
    if kind == ALPHA_PLUS_LT8:
        return n * (4 * n + (4 if odd else 8) - kappa) / kappa
    if kind == ALPHA_PLUS_GE8:
        if odd:
            return (n - 1) * (4 * n + kappa - 8) / kappa
        return n * (4 * n + kappa - 8) / kappa
    return n * (4 * n + kappa - (8 if odd else 4)) / kappa


@dataclass(frozen=True)
class ExponentTable:
    kind: str
    kappa: float
    values: Tuple[float, ...]

    def __getitem__(self, j):
        return self.values[j]


def exponent_table(kind, kappa, j_max):
    return ExponentTable(
        kind, kappa, tuple(predicted_exponent(kind, kappa, j) for j in range(j_max + 1))
    )


def plus_kind(kappa):
    return ALPHA_PLUS_LT8 if kappa < 8 else ALPHA_PLUS_GE8


def _root(kappa, lam, shift):
    radicand = 4 * kappa * lam + shift * shift
    _assert(radicand >= 0, "lambda below the root's domain", DomainError)
    return (shift + math.sqrt(radicand)) / kappa


def u1(kappa, lam):
    """Positive root of kappa u^2 - (8 - kappa) u - 4 lambda = 0"""
    return _root(kappa, lam, 4 - kappa / 2)


def u2(kappa, lam):
    """Positive root of kappa u^2 - (kappa - 4) u - 4 lambda = 0"""
    return _root(kappa, lam, kappa / 2 - 2)


@dataclass(frozen=True)
class RecursionReport:
    kappa: float
    n_max: int
    residuals: dict

    @property
    def max_residual(self):
        return max(self.residuals.values()) if self.residuals else 0.0


def check_recursions(kappa, n_max):
    """
    Residuals of the step identities linking consecutive exponents:
    alpha_{2n+1} = u1(alpha_{2n}) + alpha_{2n} and
    alpha_{2n} = u2(alpha_{2n-1}) + alpha_{2n-1}, and for kappa in (4, 8) the hat
    sequence with u1 and u2 swapped
    """
    residuals = {}
    alpha = exponent_table(plus_kind(kappa), kappa, 2 * n_max + 1)
    for n in range(0, n_max + 1):
        residuals[f"plus_u1_{n}"] = abs(
            u1(kappa, alpha[2 * n]) + alpha[2 * n] - alpha[2 * n + 1]
        )
        if n >= 1:
            residuals[f"plus_u2_{n}"] = abs(
                u2(kappa, alpha[2 * n - 1]) - (alpha[2 * n] - alpha[2 * n - 1])
            )
    if 4 < kappa < 8:
        hat = exponent_table(ALPHA_HAT, kappa, 2 * n_max + 1)
        for n in range(0, n_max + 1):
            residuals[f"hat_u2_{n}"] = abs(
                u2(kappa, hat[2 * n]) + hat[2 * n] - hat[2 * n + 1]
            )
            if n >= 1:
                residuals[f"hat_u1_{n}"] = abs(
                    u1(kappa, hat[2 * n - 1]) + hat[2 * n - 1] - hat[2 * n]
                )
    report = RecursionReport(kappa, n_max, residuals)
    logger.info(
        "check_recursions: kappa=%g max residual %.3g", kappa, report.max_residual
    )
    return report


def predicted_slope(variant, n, kappa, grid_variable=GRID_EPS, tied=False):
    """
    Predicted log-log slope of the event probability

    P[event] behaves like (x/(x-y))^{a1} (eps/x)^{a2}; an eps grid at fixed x
    sees a2, a ratio grid or an eps grid with x tied to eps sees a1.
    """
    variant = Variant(variant)
    if variant in (Variant.HHAT_ODD, Variant.HHAT_EVEN):
        table = exponent_table(ALPHA_HAT, kappa, 2 * n)
        if variant == Variant.HHAT_ODD:
            first, second = table[2 * n - 1], table[2 * n - 2]
        else:
            first, second = table[2 * n - 1], table[2 * n]
    else:
        table = exponent_table(plus_kind(kappa), kappa, 2 * n)
        if variant in (Variant.H_ODD, Variant.HPI_ODD):
            first, second = table[2 * n - 2], table[2 * n - 1]
        else:
            first, second = table[2 * n], table[2 * n - 1]
    if grid_variable == GRID_RATIO or tied:
        return first
    return second


###
# Fitting
###
@dataclass(frozen=True)
class GridPoint:
    grid_value: float
    trials: int
    hits: int
    p_hat: float
    stderr: float
    horizon_failures: int = 0

    @property
    def var_log(self):
        """Delta-method variance of log p_hat"""
        if self.p_hat <= 0:
            return math.inf
        return max((self.stderr / self.p_hat) ** 2, 1.0 / self.trials**2)

    def to_row(self):
        return (
            self.grid_value,
            self.trials,
            self.hits,
            self.p_hat,
            self.stderr,
            self.horizon_failures,
        )


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    stderr_slope: float
    r_squared: float
    predicted: Optional[float]
    points: Tuple[GridPoint, ...] = ()
    excluded: Tuple[float, ...] = ()

    @property
    def z_score(self):
        if self.predicted is None or self.stderr_slope == 0:
            return None
        return (self.slope - self.predicted) / self.stderr_slope

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr_slope": self.stderr_slope,
            "r_squared": self.r_squared,
            "predicted": self.predicted,
            "z_score": self.z_score,
            "excluded": list(self.excluded),
        }


def fit_power_law(grid, values, var_log, predicted=None, points=(), excluded=()):
    """
    Weighted least squares of log(values) on log(grid) with known variances

    :raises FitError: with fewer than 3 usable points
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    var_log = np.asarray(var_log, dtype=float)
    usable = (values > 0) & np.isfinite(var_log) & (grid > 0)
    if np.count_nonzero(usable) < MIN_FIT_POINTS:
        raise FitError(
            f"Need {MIN_FIT_POINTS} usable grid points, got {np.count_nonzero(usable)}"
        )
    x = np.log(grid[usable])
    y = np.log(values[usable])
    sigma = np.sqrt(var_log[usable])
    coef, cov = np.polyfit(x, y, 1, w=1.0 / sigma, cov="unscaled")
    slope, intercept = float(coef[0]), float(coef[1])
    weights = 1.0 / sigma**2
    mean = np.sum(weights * y) / np.sum(weights)
    residual = np.sum(weights * (y - (slope * x + intercept)) ** 2)
    total = np.sum(weights * (y - mean) ** 2)
    r_squared = 1.0 - residual / total if total > 0 else 1.0
    return ExponentFit(
        slope=slope,
        intercept=intercept,
        stderr_slope=float(math.sqrt(cov[0, 0])),
        r_squared=float(r_squared),
        predicted=predicted,
        points=tuple(points),
        excluded=tuple(excluded),
    )


def fit_grid_points(points, predicted=None):
    usable = [p for p in points if p.p_hat > 0]
    excluded = [p.grid_value for p in points if p.p_hat <= 0]
    for value in excluded:
        logger.warning("fit: grid point %g has no hits and is excluded", value)
    return fit_power_law(
        [p.grid_value for p in usable],
        [p.p_hat for p in usable],
        [p.var_log for p in usable],
        predicted=predicted,
        points=points,
        excluded=excluded,
    )


###
# Probability estimation
###
@dataclass(frozen=True)
class EstimateConfig:
    """
    :param spec: (EventSpec) template event; the grid overrides eps or y
    :param grid: (tuple) strictly monotone grid values
    :param grid_variable: (str) 'eps' or 'ratio' (x/(x-y) at fixed x)
    :param paths: (int) paths per grid point
    :param x_over_eps: (float) optional: tie x to eps on an eps grid
    :param coupled: (bool) reuse the driving noise across grid points
    :param importance: (bool) sample SLE_kappa(nu) with force point x and reweight
    :param block_size: (int) paths per random stream; fixes results independently
        of the number of threads
    """

    spec: EventSpec
    grid: Tuple[float, ...]
    grid_variable: str = GRID_EPS
    paths: int = 1000
    seed: int = 0
    policy: StepPolicy = field(default_factory=StepPolicy)
    horizon: Optional[float] = None
    mode: Optional[str] = None
    coupled: bool = False
    importance: bool = False
    importance_nu: Optional[float] = None
    block_size: int = DEFAULT_BLOCK_SIZE
    threads: Optional[int] = None
    x_over_eps: Optional[float] = None
    k_skip: int = 1
    c_ball: float = DEFAULT_C_BALL
    line_height: Optional[float] = None
    trace_growth: float = 0.005

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        if self.mode is None:
            mode = MODE_TRACE if self.spec.variant.is_trace else MODE_THRESHOLD
            object.__setattr__(self, "mode", mode)
        _assert(len(self.grid) >= 1, "Empty grid", DomainError)
        steps = np.diff(self.grid)
        _assert(
            bool(np.all(steps > 0) or np.all(steps < 0)),
            "Grid must be strictly monotone",
            DomainError,
        )
        _assert(all(v > 0 for v in self.grid), "Grid values must be >0", DomainError)
        _assert(self.grid_variable in (GRID_EPS, GRID_RATIO), "Unknown grid variable")
        _assert(self.paths >= 1, "paths must be >=1")
        _assert(self.block_size >= 1, "block_size must be >=1")
        _assert(
            self.mode in (MODE_THRESHOLD, MODE_TRACE), f"Unknown mode {self.mode!r}"
        )
        if self.spec.variant.is_trace:
            _assert(self.mode == MODE_TRACE, "H^pi events are trace based", RegimeError)
        if self.mode == MODE_TRACE:
            _assert(
                not self.importance,
                "Importance sampling is threshold only",
                RegimeError,
            )
        if self.grid_variable == GRID_RATIO:
            _assert(max(self.grid) <= 1, "Ratios x/(x-y) must be <=1", DomainError)
        if self.x_over_eps is not None:
            _assert(self.x_over_eps >= 1, "x_over_eps must be >=1", DomainError)
        # raises for the first invalid grid point
        for index in range(len(self.grid)):
            self.point_spec(index)

    def point_spec(self, index):
        value = self.grid[index]
        spec = self.spec
        if self.grid_variable == GRID_RATIO:
            return EventSpec(
                spec.variant,
                spec.n,
                spec.epsilon,
                spec.x,
                spec.x - spec.x / value,
                spec.kappa,
                spec.renewal,
            )
        x = spec.x if self.x_over_eps is None else self.x_over_eps * value
        return spec.with_epsilon(value, x)

    def point_horizon(self, index):
        if self.horizon is not None:
            return self.horizon
        return self.point_spec(index).default_horizon

    def predicted(self):
        return predicted_slope(
            self.spec.variant,
            self.spec.n,
            self.spec.kappa,
            self.grid_variable,
            tied=self.x_over_eps is not None,
        )

    def nu(self):
        if self.importance_nu is not None:
            return self.importance_nu
        return -self.spec.kappa * u1(self.spec.kappa, 0.0)

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "grid": list(self.grid),
            "grid_variable": self.grid_variable,
            "paths": self.paths,
            "seed": self.seed,
            "policy": self.policy.to_dict(),
            "horizon": self.horizon,
            "mode": self.mode,
            "coupled": self.coupled,
            "importance": self.importance,
            "importance_nu": self.importance_nu,
            "block_size": self.block_size,
            "x_over_eps": self.x_over_eps,
            "k_skip": self.k_skip,
            "c_ball": self.c_ball,
            "line_height": self.line_height,
            "trace_growth": self.trace_growth,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["spec"] = EventSpec(**data["spec"])
        data["policy"] = StepPolicy(**data.get("policy", {}))
        data["grid"] = tuple(data["grid"])
        data.pop("threads", None)
        return cls(**data)


@dataclass(frozen=True)
class BlockTally:
    trials: int
    hits: int
    weight_sum: float
    weight_sq_sum: float
    horizon_failures: int


@dataclass(frozen=True)
class EstimateResult:
    points: Tuple[GridPoint, ...]
    fit: Optional[ExponentFit]
    predicted: float
    config: dict
    fit_error: Optional[str] = None

    def to_dict(self):
        return {
            "config": self.config,
            "predicted": self.predicted,
            "fit": self.fit.to_dict() if self.fit is not None else None,
            "fit_error": self.fit_error,
            "points": [dict(zip(_POINT_KEYS, p.to_row())) for p in self.points],
        }


_POINT_KEYS = ("grid_value", "trials", "hits", "p_hat", "stderr", "horizon_failures")


def _block_sizes(paths, block_size):
    full, rest = divmod(paths, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _block_stream(config, index):
    return 0 if config.coupled else index + 1


def _threshold_block(config, index, block, size):
    spec = config.point_spec(index)
    rng = block_rng(config.seed, block, _block_stream(config, index))
    martingale = None
    if config.importance:
        martingale = MartingaleSpec(spec.kappa, rho_right=config.nu(), x_right=spec.x)
        driver = martingale.driver_config(config.seed, config.policy)
    else:
        driver = DriverConfig(spec.kappa, seed=config.seed, dt_policy=config.policy)
    process = DrivingProcess(driver, size, rng, config.point_horizon(index))
    batch = detect_crossings_batch(
        process, spec, config.policy, c_ball=config.c_ball, martingale=martingale
    )
    weights = batch.weighted_hits()
    return BlockTally(
        trials=size,
        hits=batch.hits,
        weight_sum=float(np.sum(weights)),
        weight_sq_sum=float(np.sum(weights * weights)),
        horizon_failures=batch.horizon_failures,
    )


def trace_time_grid(spec, policy, horizon, growth):
    dt_min = min(policy.dt_max, policy.c_step * spec.epsilon**2 / spec.kappa)
    return capacity_grid(horizon, dt_min, horizon, growth)


def _trace_block(config, index, block, size):
    spec = config.point_spec(index)
    rng = block_rng(config.seed, block, _block_stream(config, index))
    times = trace_time_grid(
        spec, config.policy, config.point_horizon(index), config.trace_growth
    )
    driver = DriverConfig(spec.kappa, seed=config.seed, dt_policy=config.policy)
    hits = 0
    horizon = 0
    for _ in range(size):
        chain = sample_on_grid(driver, times, rng).chain()
        if spec.variant.is_trace:
            record = detect_Hpi(
                chain, spec, config.k_skip, hit_fraction=config.policy.hit_fraction
            )
        else:
            record = detect_trace_crossings(
                chain,
                spec,
                config.line_height,
                config.k_skip,
                config.policy.hit_fraction,
            )
        hits += record.success
        horizon += record.terminal == HORIZON and not record.success
    return BlockTally(size, hits, float(hits), float(hits), horizon)


def _reduce(config, index, tallies):
    trials = sum(t.trials for t in tallies)
    hits = sum(t.hits for t in tallies)
    weight_sum = sum(t.weight_sum for t in tallies)
    weight_sq_sum = sum(t.weight_sq_sum for t in tallies)
    p_hat = weight_sum / trials
    if config.importance:
        variance = max(weight_sq_sum / trials - p_hat * p_hat, 0.0)
        stderr = math.sqrt(variance / trials)
    else:
        stderr = math.sqrt(p_hat * (1 - p_hat) / trials)
    return GridPoint(
        grid_value=config.grid[index],
        trials=trials,
        hits=hits,
        p_hat=p_hat,
        stderr=stderr,
        horizon_failures=sum(t.horizon_failures for t in tallies),
    )


def estimate_probability(config, threads=None):
    """
    Event probability at every grid point and the weighted log-log fit

    Work is cut into blocks of config.block_size paths, each with its own random
    stream, and reduced in block order: output is identical for any thread count.
    """
    workers = resolve_threads(threads if threads is not None else config.threads)
    run_block = _trace_block if config.mode == MODE_TRACE else _threshold_block
    sizes = _block_sizes(config.paths, config.block_size)
    tasks = [
        (index, block, size)
        for index in range(len(config.grid))
        for block, size in enumerate(sizes)
    ]
    logger.info(
        "estimate_probability: %d grid points x %d blocks on %d threads",
        len(config.grid),
        len(sizes),
        workers,
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        tallies = list(pool.map(lambda task: run_block(config, *task), tasks))

    points = []
    for index in range(len(config.grid)):
        chunk = tallies[index * len(sizes) : (index + 1) * len(sizes)]
        point = _reduce(config, index, chunk)
        logger.info(
            "grid %g: %d/%d hits, p=%.4g",
            point.grid_value,
            point.hits,
            point.trials,
            point.p_hat,
        )
        if point.horizon_failures:
            logger.warning(
                "grid %g: %d horizon failures", point.grid_value, point.horizon_failures
            )
        points.append(point)

    predicted = config.predicted()
    fit = None
    fit_error = None
    try:
        fit = fit_grid_points(points, predicted)
    except FitError as err:
        logger.warning("estimate_probability: %s", err)
        fit_error = str(err)
    return EstimateResult(
        points=tuple(points),
        fit=fit,
        predicted=predicted,
        config=config.to_dict(),
        fit_error=fit_error,
    )


def importance_check(config, index=0, threads=None):
    """
    Importance-sampled against direct estimate at one grid point

    :return: (GirsanovResult)
    """
    single = replace(config, grid=(config.grid[index],))
    direct = estimate_probability(replace(single, importance=False), threads).points[0]
    weighted = estimate_probability(replace(single, importance=True), threads).points[0]
    return _comparison(direct.p_hat, direct.stderr, weighted.p_hat, weighted.stderr)


@dataclass(frozen=True)
class RobustnessResult:
    base: ExponentFit
    refined: ExponentFit

    @property
    def shift(self):
        return abs(self.refined.slope - self.base.slope)

    @property
    def stable(self):
        return self.shift < max(self.base.stderr_slope, self.refined.stderr_slope)


def dt_robustness(config, threads=None):
    """Refit with c_step halved"""
    base = estimate_probability(config, threads).fit
    policy = replace(config.policy, c_step=config.policy.c_step / 2)
    refined = estimate_probability(replace(config, policy=policy), threads).fit
    _assert(
        base is not None and refined is not None, "Both fits must succeed", FitError
    )
    return RobustnessResult(base, refined)


###
# Martingale and Girsanov checks
###
@dataclass(frozen=True)
class DriftTestResult:
    z: float
    mean: float
    stderr: float
    m0: float
    paths: int
    frozen: int

    def to_dict(self):
        return {
            "z": self.z,
            "mean": self.mean,
            "stderr": self.stderr,
            "m0": self.m0,
            "paths": self.paths,
            "frozen": self.frozen,
        }


def _live_martingale(spec, state, mask):
    """M on the paths in mask whose force points are not swallowed"""
    indices = [state.mark_index(x) for x in spec.marks]
    ok = mask & ~np.any(state.swallowed[:, indices], axis=1)
    values = np.full(state.paths, np.nan)
    if np.any(ok):
        values[ok] = np.atleast_1d(martingale_value(spec, state.select(ok)))
    return values, ok


def martingale_drift_test(spec, paths, horizon, seed=0, policy=None, delta=None):
    """
    Sample plain SLE_kappa, freeze M at min(horizon, first time a force point gap
    falls below SAFE_STOP_FACTOR * delta) and compare its mean with M_0

    :return: (DriftTestResult) z = (mean/M_0 - 1)/stderr
    """
    policy = policy or StepPolicy()
    if delta is None:
        delta = 1e-3 * min(abs(x) for x in spec.marks)
    stop_gap = SAFE_STOP_FACTOR * delta
    driver = DriverConfig(spec.kappa, seed=seed, dt_policy=policy)
    process = DrivingProcess(driver, paths, block_rng(seed, 0, 0), horizon)
    state = spec.initial_state(paths, hit_fraction=policy.hit_fraction)
    indices = [state.mark_index(x) for x in spec.marks]
    m0 = spec.initial_value()
    values = np.full(paths, m0)
    frozen = np.zeros(paths, dtype=bool)

    def freeze(current, _process):
        live = ~frozen
        latest, ok = _live_martingale(spec, current, live)
        values[ok] = latest[ok]
        gaps = np.abs(current.image[:, indices] - current.w[:, None]).min(axis=1)
        frozen[live & ((gaps < stop_gap) | ~ok)] = True
        return frozen.copy()

    run_flow(process, state, spec.kappa, policy, on_step=freeze)
    ratio = values / m0
    mean = float(np.mean(ratio))
    stderr = float(np.std(ratio, ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    if stderr == 0:
        z = 0.0 if mean == 1.0 else math.inf
    else:
        z = (mean - 1.0) / stderr
    logger.info("martingale_drift_test: mean %.5f stderr %.5f z %.3f", mean, stderr, z)
    frozen_count = int(np.count_nonzero(frozen))
    return DriftTestResult(z, mean * m0, stderr * m0, m0, paths, frozen_count)


@dataclass(frozen=True)
class GirsanovResult:
    direct: float
    direct_stderr: float
    reweighted: float
    reweighted_stderr: float

    @property
    def z(self):
        spread = math.hypot(self.direct_stderr, self.reweighted_stderr)
        if spread == 0:
            return 0.0 if self.direct == self.reweighted else math.inf
        return (self.direct - self.reweighted) / spread

    def to_dict(self):
        return {
            "direct": self.direct,
            "direct_stderr": self.direct_stderr,
            "reweighted": self.reweighted,
            "reweighted_stderr": self.reweighted_stderr,
            "z": self.z,
        }


def _comparison(a, a_err, b, b_err):
    return GirsanovResult(a, a_err, b, b_err)


def _mean_stderr(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def girsanov_check(kappa, rho, x, paths, horizon, threshold=0.3, seed=0, policy=None):
    """
    P[Upsilon reaches threshold * x before the horizon] under SLE_kappa(rho), sampled
    directly and as a plain SLE_kappa expectation weighted by M/M_0
    """
    policy = policy or StepPolicy()
    spec = MartingaleSpec(kappa, rho_right=rho, x_right=x)
    target = threshold * x

    def close(current):
        alive = ~current.swallowed[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            upsilon = (current.image[:, 0] - current.o_right) / current.deriv[:, 0]
        return ~alive | (upsilon <= target)

    # direct
    process = DrivingProcess(
        spec.driver_config(seed, policy), paths, block_rng(seed, 0, 1), horizon
    )
    state = FlowState.initial([x], paths=paths, hit_fraction=policy.hit_fraction)
    state, _ = run_flow(
        process, state, kappa, policy, on_step=lambda s, p: close(s) | p.terminated
    )
    direct = close(state) | process.terminated

    # reweighted
    m0 = spec.initial_value()
    weights = np.ones(paths)
    stopped = np.zeros(paths, dtype=bool)

    def record(current, _process):
        latest, ok = _live_martingale(spec, current, ~stopped)
        weights[ok] = latest[ok] / m0
        stopped[close(current)] = True
        return stopped.copy()

    plain = DrivingProcess(
        DriverConfig(kappa, seed=seed, dt_policy=policy),
        paths,
        block_rng(seed, 0, 2),
        horizon,
    )
    state = FlowState.initial([x], paths=paths, hit_fraction=policy.hit_fraction)
    state, _ = run_flow(plain, state, kappa, policy, on_step=record)
    reweighted = np.where(close(state), weights, 0.0)

    d_mean, d_err = _mean_stderr(direct.astype(float))
    r_mean, r_err = _mean_stderr(reweighted)
    result = _comparison(d_mean, d_err, r_mean, r_err)
    logger.info(
        "girsanov_check: direct %.4f reweighted %.4f z %.2f", d_mean, r_mean, result.z
    )
    return result


###
# Invariant density
###
@dataclass(frozen=True)
class DensityTestResult:
    ks: float
    pvalue: float
    mean: float
    mean_stderr: float
    expected_mean: float
    a: float
    b: float

    def to_dict(self):
        return {
            "ks": self.ks,
            "pvalue": self.pvalue,
            "mean": self.mean,
            "mean_stderr": self.mean_stderr,
            "expected_mean": self.expected_mean,
            "a": self.a,
            "b": self.b,
        }


def stationary_beta(kappa, nu):
    """
    Beta(2 - (8 + 2 nu)/kappa, 4/kappa), the law with density proportional to
    y^{1-(8+2nu)/kappa} (1-y)^{4/kappa-1}
    """
    _assert(8 + 2 * nu < 2 * kappa, "Need 8 + 2 nu < 2 kappa", RegimeError)
    return stats.beta(2 - (8 + 2 * nu) / kappa, 4 / kappa)


def invariant_density_test(kappa, nu, samples=10000, burn_in=10.0, ds=5e-4, seed=0):
    """
    Simulate dJ = (kappa - nu - 4 - (kappa - nu - 2) J) ds + sqrt(kappa J (1 - J)) dB
    from J = 1 for `samples` independent chains, reflecting at 0 and 1, and compare
    the values after burn_in with the stationary Beta law
    """
    law = stationary_beta(kappa, nu)
    rng = block_rng(seed, 0, 0)
    j = np.ones(samples)
    drift_a = kappa - nu - 4
    drift_b = kappa - nu - 2
    root = math.sqrt(ds)
    for _ in range(int(math.ceil(burn_in / ds))):
        noise = rng.standard_normal(samples)
        diffusion = np.sqrt(np.clip(kappa * j * (1 - j), 0.0, None))
        j = j + (drift_a - drift_b * j) * ds + diffusion * root * noise
        j = np.abs(j)
        j = 1.0 - np.abs(1.0 - j)
    ks = stats.kstest(j, law.cdf)
    mean, mean_stderr = _mean_stderr(j)
    a, b = law.args
    result = DensityTestResult(
        ks=float(ks.statistic),
        pvalue=float(ks.pvalue),
        mean=mean,
        mean_stderr=mean_stderr,
        expected_mean=float(law.mean()),
        a=float(a),
        b=float(b),
    )
    logger.info("invariant_density_test: KS %.4f mean %.4f", result.ks, mean)
    return result


###
# Moment scaling
###
def check_moment_regime(kind, kappa, params):
    _assert(kind in MOMENT_KINDS, f"Unknown moment kind {kind!r}", DomainError)
    lam = params.get("lambda", 0.0)
    if kind == "lemma24":
        _assert(
            swallows_force_point(kappa, params["nu"]),
            "Need nu <= kappa/2 - 4",
            RegimeError,
        )
        _assert(lam <= 0, "Need lambda <= 0", RegimeError)
    elif kind == "lemma25":
        _assert(kappa > 4, "Need kappa > 4", RegimeError)
        _assert(
            avoids_force_side(kappa, params["nu"]),
            "Need nu >= kappa/2 - 2",
            RegimeError,
        )
    else:
        b = params["b"]
        _assert(lam >= 0, "Need lambda >= 0", RegimeError)
        if kind == "prop31":
            _assert(kappa > 4, "Need kappa > 4", RegimeError)
            root = u1(kappa, lam)
            low = kappa * lam - kappa * root + 8 - 2 * kappa
            high = kappa * lam + kappa * root
            _assert(
                low < kappa * b <= high, "b outside the admissible window", RegimeError
            )
        else:
            _assert(kappa <= 4, "Need kappa <= 4", RegimeError)
            _assert(
                4 * b >= (lam - b) * (kappa * lam - kappa * b + 4 - kappa),
                "b violates 4b >= (lambda - b)(kappa lambda - kappa b + 4 - kappa)",
                RegimeError,
            )


def moment_target_slope(kind, kappa, params):
    lam = params.get("lambda", 0.0)
    if kind in ("lemma24", "lemma25"):
        return lam
    return u1(kappa, lam) + lam - params["b"]


def _swallow_spread_samples(kappa, params, gap, paths, seed, policy, stream):
    x = params.get("x", 1.0)
    y = x - gap
    driver = DriverConfig(
        kappa, rho_right=params["nu"], x_right=x, seed=seed, dt_policy=policy
    )
    rng = block_rng(seed, 0, stream)
    process = DrivingProcess(driver, paths, rng, HORIZON_FACTOR * gap**2)
    state = FlowState.initial([x], y=y, paths=paths, hit_fraction=policy.hit_fraction)
    state, _ = run_flow(process, state, kappa, policy)
    if not np.all(process.terminated):
        logger.warning(
            "swallow moment: %d paths evaluated at the horizon",
            np.count_nonzero(~process.terminated),
        )
    spread = process.v_right - state.y_left
    return spread ** params.get("lambda", 0.0)


def _avoid_radius_samples(kappa, params, gap, paths, seed, policy, stream):
    x = params.get("x", 1.0)
    y = x - gap
    c = params.get("c", KOEBE_LOWER)
    driver = DriverConfig(
        kappa, rho_right=params["nu"], x_right=x, seed=seed, dt_policy=policy
    )
    rng = block_rng(seed, 0, stream)
    process = DrivingProcess(driver, paths, rng, HORIZON_FACTOR * gap**2)
    state = FlowState.initial([x], y=y, paths=paths, hit_fraction=policy.hit_fraction)
    threshold = policy.hit_fraction * (abs(y) if y < 0 else x)

    def line(current, _process):
        return current.w - current.y_left <= threshold

    hit = line(state, None)
    state, _ = run_flow(process, state, kappa, policy, on_step=line, done=hit)
    hit = line(state, None)
    spread = process.v_right - state.w
    _assert(
        bool(np.all(spread[hit] >= gap * (1 - 1e-6))),
        "g(x) - g(y) fell below x - y",
        DomainError,
    )
    upsilon = (state.image[:, 0] - state.o_right) / state.deriv[:, 0]
    good = hit & (upsilon >= c * x)
    return np.where(good, spread ** params.get("lambda", 0.0), 0.0)


def _dense_derivative_samples(kappa, params, eps, paths, seed, policy, stream):
    x = params.get("x", 1.0)
    lam, b = params["lambda"], params["b"]
    driver = DriverConfig(kappa, seed=seed, dt_policy=policy)
    rng = block_rng(seed, 0, stream)
    process = DrivingProcess(driver, paths, rng, HORIZON_FACTOR * x**2)
    state = FlowState.initial([x], paths=paths, hit_fraction=policy.hit_fraction)
    values = np.zeros(paths)
    stopped = np.zeros(paths, dtype=bool)

    def reach(current, _process):
        swallowed = current.swallowed[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            upsilon = (current.image[:, 0] - current.o_right) / current.deriv[:, 0]
        now = ~stopped & ~swallowed & (upsilon <= eps)
        gap = current.image[now, 0] - current.w[now]
        values[now] = gap ** (lam - b) * current.deriv[now, 0] ** b
        stopped[now | swallowed] = True
        return stopped.copy()

    reach(state, None)
    run_flow(process, state, kappa, policy, on_step=reach, done=stopped.copy())
    return values


def _simple_derivative_samples(kappa, params, eps, paths, seed, policy, stream):
    x = params.get("x", 1.0)
    lam, b = params["lambda"], params["b"]
    horizon = params.get("horizon", 4.0 * x**2)
    driver = DriverConfig(kappa, seed=seed, dt_policy=policy)
    rng = block_rng(seed, 0, stream)
    dt = min(policy.dt_max, policy.c_step * eps**2 / kappa)
    times = capacity_grid(horizon, dt, horizon, 0.005)
    values = np.zeros(paths)
    for i in range(paths):
        chain = sample_on_grid(driver, times, rng).chain()
        steps, points = trace_polyline(chain)
        close = np.flatnonzero(np.abs(points - x) <= eps)
        if close.size == 0:
            continue
        head = chain.head(int(steps[close[0]]))
        image = complex(map_points(head, x + 0j)).real
        deriv = abs(complex(map_derivative(head, x + 0j)))
        w = head.w_end[-1] if len(head) else 0.0
        values[i] = (image - w) ** (lam - b) * deriv**b
    return values


_MOMENT_SAMPLERS = {
    "lemma24": _swallow_spread_samples,
    "lemma25": _avoid_radius_samples,
    "prop31": _dense_derivative_samples,
    "prop42": _simple_derivative_samples,
}


def moment_scaling_test(kind, kappa, params, grid, paths, seed=0, policy=None):
    """
    Estimate the expectation named by `kind` along the grid (x - y for the
    spread and radius kinds, eps for the derivative kinds) and fit its scaling
    exponent

    :param params: (dict) 'nu', 'lambda', 'b', 'x', 'c' as the kind requires
    :return: (ExponentFit) with the target slope as prediction
    """
    check_moment_regime(kind, kappa, params)
    policy = policy or StepPolicy()
    sampler = _MOMENT_SAMPLERS[kind]
    points = []
    for index, value in enumerate(grid):
        samples = sampler(kappa, params, value, paths, seed, policy, index + 1)
        mean, stderr = _mean_stderr(samples)
        points.append(
            GridPoint(
                grid_value=float(value),
                trials=paths,
                hits=int(np.count_nonzero(samples)),
                p_hat=mean,
                stderr=stderr,
            )
        )
        logger.info("%s: grid %g mean %.5g +- %.2g", kind, value, mean, stderr)
    return fit_grid_points(points, moment_target_slope(kind, kappa, params))
