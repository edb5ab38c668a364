"""
Driving processes: W = sqrt(kappa) B for SLE_kappa and the coupled force-point
system for SLE_kappa(rho_L; rho_R)

    dW   = sqrt(kappa) dB + rho_L dt/(W - V_L) + rho_R dt/(W - V_R)
    dV_j = 2 dt/(V_j - W)
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .constants import MAX_STEP_HALVINGS
from .exceptions import DomainError, StepSizeError, SwallowedMarkError
from .loewner_core import (
    DiscretizedChain,
    FlowState,
    StepPolicy,
    adaptive_dt,
    advance_flow,
    conformal_radius_proxy,
)
from .utils import _assert

logger = logging.getLogger(__name__)

HORIZON_REACHED = "horizon_reached"
FORCE_POINT_HIT = "force_point_hit"


###
# Random streams
###
def path_rng(seed, index):
    """Philox stream of one path, keyed by (seed, path index)"""
    _assert(seed >= 0 and index >= 0, "Seeds and indices must be >=0")
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(sequence))


def block_rng(seed, block, stream=0):
    """
    Philox stream of a fixed-size block of paths, keyed by (seed, stream, block)

    Blocks are fixed by configuration, never by the number of threads.
    """
    _assert(seed >= 0 and block >= 0 and stream >= 0, "Seeds and indices must be >=0")
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(sequence))


###
# Configuration
###
def swallows_force_point(kappa, rho):
    """rho <= kappa/2 - 4: the curve accumulates at the force point in finite time"""
    return rho <= kappa / 2 - 4


def avoids_force_side(kappa, rho):
    """rho >= kappa/2 - 2: the curve never hits the boundary beyond the force point"""
    return rho >= kappa / 2 - 2


@dataclass(frozen=True)
class DriverConfig:
    """
    :param kappa: (float) SLE parameter, >0
    :param rho_left: (float|None) weight of the left force point
    :param rho_right: (float|None) weight of the right force point
    :param x_left: (float) left force point, <0 when rho_left is set
    :param x_right: (float) right force point, >0 when rho_right is set
    :param seed: (int) 64-bit seed
    :param dt_policy: (StepPolicy) step contract
    """

    kappa: float
    rho_left: Optional[float] = None
    rho_right: Optional[float] = None
    x_left: float = 0.0
    x_right: float = 0.0
    seed: int = 0
    dt_policy: StepPolicy = field(default_factory=StepPolicy)

    def __post_init__(self):
        _assert(self.kappa > 0, "kappa must be >0", DomainError)
        _assert(self.x_left <= 0 <= self.x_right, "Force points on the wrong side")
        if self.rho_left is not None:
            _assert(self.x_left < 0, "rho_left needs a force point x_left < 0")
        if self.rho_right is not None:
            _assert(self.x_right > 0, "rho_right needs a force point x_right > 0")
        _assert(
            isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64,
            "seed must be a 64-bit unsigned integer",
        )

    @property
    def has_force_points(self):
        return self.rho_left is not None or self.rho_right is not None


@dataclass(frozen=True)
class DriverPath:
    """
    A sampled driving path

    :param times: (array) step times starting at 0
    :param w: (array) driving values at those times
    :param v_left: (array|None) left force point image
    :param v_right: (array|None) right force point image
    :param termination: (str) 'horizon_reached' or 'force_point_hit'
    :param hit_side: (str|None) 'left' or 'right' for a force point hit
    :param hit_time: (float|None) time of the force point hit
    """

    times: np.ndarray
    w: np.ndarray
    v_left: Optional[np.ndarray] = None
    v_right: Optional[np.ndarray] = None
    termination: str = HORIZON_REACHED
    hit_side: Optional[str] = None
    hit_time: Optional[float] = None

    @property
    def increments(self):
        return list(zip(np.diff(self.times), np.diff(self.w)))

    def chain(self):
        return DiscretizedChain.from_driving(self.times, self.w)


###
# Streaming processes
###
class DrivingProcess:
    """
    Batch of B driving paths advanced with caller-chosen dt

    One standard normal is drawn per path per step, for every path of the batch,
    so the noise of a path does not depend on when other paths stop.
    """

    def __init__(self, config, paths, rng, horizon, record=False):
        self.config = config
        self.paths = paths
        self.rng = rng
        self.horizon = float(horizon)
        self.record = record
        self.t = np.zeros(paths)
        self.w = np.zeros(paths)
        self.v_left = (
            np.full(paths, config.x_left) if config.rho_left is not None else None
        )
        self.v_right = (
            np.full(paths, config.x_right) if config.rho_right is not None else None
        )
        self.terminated = np.zeros(paths, dtype=bool)
        self.termination_time = np.full(paths, np.nan)
        self.termination_side = np.zeros(paths, dtype=np.int8)
        self._history = [self._snapshot()] if record else None

    def _snapshot(self):
        return (
            self.t.copy(),
            self.w.copy(),
            None if self.v_left is None else self.v_left.copy(),
            None if self.v_right is None else self.v_right.copy(),
        )

    @property
    def finished(self):
        return self.terminated | (self.t >= self.horizon * (1 - 1e-12))

    def force_gaps(self):
        """Gaps to force points with nonzero weight, for the step policy"""
        gaps = np.full(self.paths, np.inf)
        if self.v_left is not None and self.config.rho_left:
            gaps = np.minimum(gaps, self.w - self.v_left)
        if self.v_right is not None and self.config.rho_right:
            gaps = np.minimum(gaps, self.v_right - self.w)
        return gaps

    def propose(self, dt):
        """Clip proposed steps to the horizon and zero them on finished paths"""
        dt = np.minimum(np.asarray(dt, dtype=float), self.horizon - self.t)
        return np.where(self.finished, 0.0, np.maximum(dt, 0.0))

    def _drift(self, w):
        drift = np.zeros_like(w)
        if self.v_left is not None and self.config.rho_left:
            drift += self.config.rho_left / (w - self.v_left)
        if self.v_right is not None and self.config.rho_right:
            drift += self.config.rho_right / (w - self.v_right)
        return drift

    def _trial(self, dt, noise):
        kappa = self.config.kappa
        with np.errstate(divide="ignore", invalid="ignore"):
            diffusion = math.sqrt(kappa) * np.sqrt(dt) * noise
            w_new = self.w + diffusion + self._drift(self.w) * dt
            v_left = None
            v_right = None
            if self.v_left is not None:
                v_left = np.where(
                    dt > 0,
                    self.v_left + 2.0 * dt / (self.v_left - self.w),
                    self.v_left,
                )
            if self.v_right is not None:
                v_right = np.where(
                    dt > 0,
                    self.v_right + 2.0 * dt / (self.v_right - self.w),
                    self.v_right,
                )
        return w_new, v_left, v_right

    def _closing(self, w_new, v_left, v_right):
        """Per side, the paths whose force gap reached the hit threshold"""
        hit = self.config.dt_policy.hit_fraction
        left = np.zeros(self.paths, dtype=bool)
        right = np.zeros(self.paths, dtype=bool)
        if v_left is not None and self.config.rho_left:
            left = w_new - v_left <= hit * abs(self.config.x_left)
        if v_right is not None and self.config.rho_right:
            right = v_right - w_new <= hit * self.config.x_right
        return left, right

    def _repelled(self, rho):
        return rho is not None and rho != 0 and rho >= self.config.kappa / 2 - 2

    def step(self, dt):
        """
        Advance every path with dt > 0

        Gaps of repelling force points that would close are retried on a shortened
        step, taking the first half of a Brownian bridge over the original step.

        :return: (w_new, dt_used) arrays
        """
        dt = np.asarray(dt, dtype=float).copy()
        moving = dt > 0
        noise = self.rng.standard_normal(self.paths)
        w_new, v_left, v_right = self._trial(dt, noise)

        repel_left = self._repelled(self.config.rho_left)
        repel_right = self._repelled(self.config.rho_right)
        for _ in range(MAX_STEP_HALVINGS):
            left, right = self._closing(w_new, v_left, v_right)
            retry = moving & ((left & repel_left) | (right & repel_right))
            if not np.any(retry):
                break
            bridge = self.rng.standard_normal(self.paths)
            noise = np.where(retry, (noise + bridge) / math.sqrt(2.0), noise)
            dt = np.where(retry, dt / 2.0, dt)
            w_new, v_left, v_right = self._trial(dt, noise)
        else:
            logger.warning("DrivingProcess: repelled gap still closing, clamping")

        left, right = self._closing(w_new, v_left, v_right)
        hit = self.config.dt_policy.hit_fraction
        if repel_right and np.any(right & moving):
            w_new = np.where(right & moving, v_right - hit * self.config.x_right, w_new)
        if repel_left and np.any(left & moving):
            w_left = v_left + hit * abs(self.config.x_left)
            w_new = np.where(left & moving, w_left, w_new)

        # passive force points (rho = 0) follow W once their gap closes
        if v_right is not None and not self.config.rho_right:
            v_right = np.maximum(v_right, w_new)
        if v_left is not None and not self.config.rho_left:
            v_left = np.minimum(v_left, w_new)

        w_new = np.where(moving, w_new, self.w)
        if not np.all(np.isfinite(w_new)):
            raise StepSizeError("Non-finite driving value, refine dt")

        t_new = self.t + dt
        if not repel_right:
            hits = right & moving & ~self.terminated
            self._terminate(hits, t_new, 1)
        if not repel_left:
            hits = left & moving & ~self.terminated
            self._terminate(hits, t_new, -1)

        self.t = np.where(moving, t_new, self.t)
        self.w = w_new
        if v_left is not None:
            self.v_left = v_left
        if v_right is not None:
            self.v_right = v_right
        if self.record:
            self._history.append(self._snapshot())
        return w_new, np.where(moving, dt, 0.0)

    def _terminate(self, hits, times, side):
        if np.any(hits):
            self.terminated |= hits
            self.termination_time = np.where(hits, times, self.termination_time)
            self.termination_side = np.where(hits, side, self.termination_side).astype(
                np.int8
            )

    def to_path(self, index=0):
        """Recorded history of one path as a DriverPath"""
        _assert(self.record, "Process was not recording")
        times = np.array([snap[0][index] for snap in self._history])
        keep = np.concatenate([[True], np.diff(times) > 0])
        w = np.array([snap[1][index] for snap in self._history])[keep]
        v_left = v_right = None
        if self.v_left is not None:
            v_left = np.array([snap[2][index] for snap in self._history])[keep]
        if self.v_right is not None:
            v_right = np.array([snap[3][index] for snap in self._history])[keep]
        side = int(self.termination_side[index])
        terminated = bool(self.terminated[index])
        return DriverPath(
            times=times[keep],
            w=w,
            v_left=v_left,
            v_right=v_right,
            termination=FORCE_POINT_HIT if terminated else HORIZON_REACHED,
            hit_side={1: "right", -1: "left"}.get(side) if terminated else None,
            hit_time=float(self.termination_time[index]) if terminated else None,
        )


class ReplayProcess:
    """Single-path process that replays the increments of a sampled DriverPath"""

    def __init__(self, path):
        self.path = path
        self.paths = 1
        self.config = None
        self.index = 0
        self.t = np.zeros(1)
        self.w = np.array([path.w[0]], dtype=float)

    @property
    def finished(self):
        return np.array([self.index >= len(self.path.times) - 1])

    def force_gaps(self):
        return np.full(1, np.inf)

    def propose(self, dt):
        if self.finished[0]:
            return np.zeros(1)
        return np.array([self.path.times[self.index + 1] - self.path.times[self.index]])

    def step(self, dt):
        if not dt[0] > 0:
            return self.w.copy(), np.zeros(1)
        self.index += 1
        self.t = np.array([self.path.times[self.index]])
        self.w = np.array([self.path.w[self.index]], dtype=float)
        return self.w.copy(), np.asarray(dt, dtype=float)


def run_flow(process, state, kappa, policy, on_step=None, extra_gaps=None, done=None):
    """
    Step a driving process and a FlowState together until every path is done

    :param on_step: (callable) optional: on_step(state, process) -> bool array of
        paths to stop after this step
    :param extra_gaps: (callable) optional: extra_gaps(state) -> per-path gaps that
        also bound the step
    :param done: (array bool) optional: paths already stopped by the caller
    :return: (FlowState, done mask)
    """
    done = process.finished.copy() if done is None else done | process.finished
    while not np.all(done):
        gaps = process.force_gaps()
        if extra_gaps is not None:
            gaps = np.minimum(gaps, extra_gaps(state))
        dt = adaptive_dt(state, kappa, policy, extra_gaps=gaps)
        dt = process.propose(np.where(done, 0.0, dt))
        if not np.any(dt > 0):
            break
        w_new, dt_used = process.step(dt)
        state = advance_flow(state, w_new, dt_used)
        if on_step is not None:
            done |= on_step(state, process)
        done |= process.finished
    return state, done


###
# Sampling
###
def sample_sle_rho(config, horizon, path_index=0):
    """
    Euler-Maruyama sample of SLE_kappa(rho_L; rho_R) driving with the adaptive step
    policy; stops at the horizon or when an absorbing force gap closes
    """
    _assert(horizon > 0, "horizon must be >0")
    process = DrivingProcess(
        config, 1, path_rng(config.seed, path_index), horizon, record=True
    )
    policy = config.dt_policy
    while not process.finished[0]:
        gaps = process.force_gaps()
        dt = np.minimum(policy.dt_max, policy.c_step * gaps**2 / config.kappa)
        process.step(process.propose(dt))
    path = process.to_path(0)
    if path.termination == FORCE_POINT_HIT:
        logger.debug("sample_sle_rho: force point hit at t=%.6g", path.hit_time)
    return path


def sample_sle(config, horizon, path_index=0):
    """
    Discretized sqrt(kappa) Brownian motion on steps of dt_max; the last step
    lands on the horizon
    """
    _assert(not config.has_force_points, "sample_sle takes no force points")
    return sample_sle_rho(config, horizon, path_index)


def sample_sle_batch(config, horizon, paths, block=0, stream=0):
    """
    `paths` plain SLE driving paths on the uniform grid of step dt_max

    :return: (times, w) with w of shape (paths, steps + 1)
    """
    _assert(not config.has_force_points, "sample_sle_batch takes no force points")
    steps = max(1, int(math.ceil(horizon / config.dt_policy.dt_max - 1e-9)))
    times = np.minimum(np.arange(steps + 1) * config.dt_policy.dt_max, horizon)
    rng = block_rng(config.seed, block, stream)
    noise = rng.standard_normal((steps, paths))
    increments = np.sqrt(config.kappa * np.diff(times))[:, None] * noise
    w = np.vstack([np.zeros((1, paths)), np.cumsum(increments, axis=0)]).T
    return times, w


def capacity_grid(horizon, dt_min, dt_max, growth=0.02):
    """Time grid with steps max(dt_min, growth * t) capped at dt_max"""
    _assert(0 < dt_min <= dt_max, "Need 0 < dt_min <= dt_max")
    times = [0.0]
    while times[-1] < horizon:
        step = min(dt_max, max(dt_min, growth * times[-1]))
        times.append(min(horizon, times[-1] + step))
    return np.asarray(times)


def sample_on_grid(config, times, rng):
    """One plain SLE driving path on a prescribed time grid"""
    noise = rng.standard_normal(len(times) - 1)
    increments = np.sqrt(config.kappa * np.diff(times)) * noise
    w = np.concatenate([[0.0], np.cumsum(increments)])
    return DriverPath(times=np.asarray(times, dtype=float), w=w)


###
# Martingale observables
###
@dataclass(frozen=True)
class MartingaleSpec:
    """
    M_t = g'(xL)^{aL} (W - g(xL))^{bL} g'(xR)^{aR} (g(xR) - W)^{bR} (g(xR) - g(xL))^{c}

    with a = rho(rho + 4 - kappa)/(4 kappa), b = rho/kappa, c = rhoL rhoR/(2 kappa).
    """

    kappa: float
    rho_left: float = 0.0
    rho_right: float = 0.0
    x_left: Optional[float] = None
    x_right: Optional[float] = None

    def __post_init__(self):
        _assert(self.kappa > 0, "kappa must be >0", DomainError)
        _assert(
            self.x_left is not None or self.x_right is not None,
            "MartingaleSpec needs a force point",
        )
        if self.x_left is not None:
            _assert(self.x_left < 0, "x_left must be <0")
        if self.x_right is not None:
            _assert(self.x_right > 0, "x_right must be >0")

    def derivative_exponent(self, rho):
        return rho * (rho + 4 - self.kappa) / (4 * self.kappa)

    def distance_exponent(self, rho):
        return rho / self.kappa

    @property
    def cross_exponent(self):
        if self.x_left is None or self.x_right is None:
            return 0.0
        return self.rho_left * self.rho_right / (2 * self.kappa)

    @property
    def marks(self):
        return [x for x in (self.x_left, self.x_right) if x is not None]

    def initial_value(self):
        value = 1.0
        if self.x_left is not None:
            value *= abs(self.x_left) ** self.distance_exponent(self.rho_left)
        if self.x_right is not None:
            value *= self.x_right ** self.distance_exponent(self.rho_right)
        if self.x_left is not None and self.x_right is not None:
            value *= (self.x_right - self.x_left) ** self.cross_exponent
        return value

    def initial_state(self, paths=1, hit_fraction=None):
        y = self.x_left if self.x_left is not None else 0.0
        kwargs = {} if hit_fraction is None else {"hit_fraction": hit_fraction}
        return FlowState.initial(self.marks, y=y, paths=paths, **kwargs)

    def driver_config(self, seed=0, dt_policy=None):
        """DriverConfig of SLE_kappa(rho) weighted by this martingale"""
        kwargs = {} if dt_policy is None else {"dt_policy": dt_policy}
        return DriverConfig(
            kappa=self.kappa,
            rho_left=self.rho_left if self.x_left is not None else None,
            rho_right=self.rho_right if self.x_right is not None else None,
            x_left=self.x_left if self.x_left is not None else 0.0,
            x_right=self.x_right if self.x_right is not None else 0.0,
            seed=seed,
            **kwargs,
        )


def martingale_value(spec, state):
    """
    Value of M_t from the tracked images and derivatives, per path

    :raises SwallowedMarkError: if a force point mark is swallowed; the caller
        freezes M at the stopping time instead
    """
    value = np.ones(state.paths)
    w = state.w
    left_image = right_image = None
    if spec.x_left is not None:
        i = state.mark_index(spec.x_left)
        _assert(
            not bool(np.any(state.swallowed[:, i])),
            "Left force point swallowed",
            SwallowedMarkError,
        )
        left_image = state.image[:, i]
        value = value * state.deriv[:, i] ** spec.derivative_exponent(spec.rho_left)
        value = value * (w - left_image) ** spec.distance_exponent(spec.rho_left)
    if spec.x_right is not None:
        i = state.mark_index(spec.x_right)
        _assert(
            not bool(np.any(state.swallowed[:, i])),
            "Right force point swallowed",
            SwallowedMarkError,
        )
        right_image = state.image[:, i]
        value = value * state.deriv[:, i] ** spec.derivative_exponent(spec.rho_right)
        value = value * (right_image - w) ** spec.distance_exponent(spec.rho_right)
    if left_image is not None and right_image is not None:
        value = value * (right_image - left_image) ** spec.cross_exponent
    return float(value[0]) if state.paths == 1 else value


###
# Scaling invariance
###
def scaling_invariance_check(
    kappa, nu, xs=(1.0, 2.0), paths=2000, seed=0, scaled_time=0.25, policy=None
):
    """
    Two-sample KS test of Upsilon/x for SLE_kappa(nu) with force point x, observed
    at time scaled_time * x^2, for two values of x

    :return: (KS statistic, p-value)
    """
    _assert(len(xs) == 2, "Need exactly two force point positions")
    samples = []
    for stream, x in enumerate(xs):
        config = DriverConfig(
            kappa=kappa,
            rho_right=nu,
            x_right=x,
            seed=seed,
            dt_policy=policy or StepPolicy(dt_max=1e-3 * x * x),
        )
        process = DrivingProcess(
            config, paths, block_rng(seed, 0, stream), scaled_time * x * x
        )
        state = FlowState.initial(
            [x], paths=paths, hit_fraction=config.dt_policy.hit_fraction
        )
        state, _done = run_flow(process, state, kappa, config.dt_policy)
        alive = ~state.swallowed[:, 0] & ~process.terminated
        upsilon = conformal_radius_proxy(state.select(alive), 0)
        samples.append(np.atleast_1d(upsilon) / x)
    result = stats.ks_2samp(samples[0], samples[1])
    return float(result.statistic), float(result.pvalue)
