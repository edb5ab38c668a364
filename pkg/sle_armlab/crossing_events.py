"""
Crossing events between a boundary ball B(x, eps) and the half-line (-inf, y]

For kappa > 4 the legs are detected from marked-point observables of the flow.
For kappa <= 4 (and as a cross-check for kappa in (4, 8)) they are detected on the
reconstructed trace as well-oriented crossings of two oriented crosscuts.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .constants import (
    DEFAULT_C_BALL,
    DEFAULT_LINE_HEIGHT_FRACTION,
    DEFAULT_SEMICIRCLE_POINTS,
    HORIZON_FACTOR,
    KOEBE_LOWER,
    KOEBE_UPPER,
    STRIP_CUTOFF_FACTOR,
    STRIP_HEIGHT,
)
from .exceptions import DomainError, RegimeError
from .loewner_core import FlowState, StepPolicy, trace_polyline
from .sle_driver import ReplayProcess, martingale_value, run_flow
from .utils import _assert

logger = logging.getLogger(__name__)

TARGET_REACHED = "target_reached"
SWALLOWED_X = "swallowed_x"
HORIZON = "horizon"
_TERMINALS = (TARGET_REACHED, SWALLOWED_X, HORIZON)


class Variant(str, enum.Enum):
    H_ODD = "H_odd"
    H_EVEN = "H_even"
    HHAT_EVEN = "Hhat_even"
    HHAT_ODD = "Hhat_odd"
    HPI_ODD = "Hpi_odd"
    HPI_EVEN = "Hpi_even"

    @property
    def is_trace(self):
        return self in (Variant.HPI_ODD, Variant.HPI_EVEN)


class LegKind(str, enum.Enum):
    BALL = "ball"
    LINE = "line"


class RenewalMode(float, enum.Enum):
    """Factor applied to eps * g'(x) when a leg renews the configuration"""

    UPPER = KOEBE_UPPER
    LOWER = KOEBE_LOWER
    IDENTITY = 1.0

    @classmethod
    def coerce(cls, value):
        """Mode from a RenewalMode, its factor or its lowercase name"""
        if isinstance(value, str):
            _assert(
                value.upper() in cls.__members__,
                f"Unknown renewal mode {value!r}",
                DomainError,
            )
            return cls[value.upper()]
        return cls(value)


def variant_legs(variant, n):
    B, L = LegKind.BALL, LegKind.LINE
    variant = Variant(variant)
    if variant in (Variant.H_ODD, Variant.HPI_ODD):
        return [B, L] * (n - 1) + [B]
    if variant in (Variant.H_EVEN, Variant.HPI_EVEN):
        return [L, B] * n
    if variant == Variant.HHAT_EVEN:
        return [B, L] * n
    return [L, B] * (n - 1) + [L]


@dataclass(frozen=True)
class EventSpec:
    """
    :param variant: (Variant) which alternating sequence of legs
    :param n: (int) crossing index of the variant
    :param epsilon: (float) ball radius
    :param x: (float) ball center, >0
    :param y: (float) right end of the half-line, <=0
    :param kappa: (float) SLE parameter
    :param renewal: (RenewalMode) factor on the ball radius each time a leg
        ends and the configuration is renewed; IDENTITY keeps eps fixed

    The first ball leg ends once Upsilon <= eps, whichever leg it is. Later
    ball legs compare g(x) - w with the renewed radius.
    """

    variant: Variant
    n: int
    epsilon: float
    x: float
    y: float
    kappa: float
    renewal: RenewalMode = RenewalMode.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "renewal", RenewalMode.coerce(self.renewal))
        _assert(int(self.n) == self.n and self.n >= 1, "n must be a positive integer")
        _assert(self.kappa > 0, "kappa must be >0", DomainError)
        _assert(self.epsilon > 0, "epsilon must be >0", DomainError)
        if self.variant.is_trace:
            _assert(self.kappa <= 4, "H^pi events need kappa <= 4", RegimeError)
            _assert(self.x > 0 and self.x > self.y, "Need x > max(y, 0)", DomainError)
        else:
            _assert(self.kappa > 4, "Threshold events need kappa > 4", RegimeError)
            _assert(
                self.y <= 0 < self.epsilon <= self.x,
                "Need y <= 0 < epsilon <= x",
                DomainError,
            )

    @property
    def legs(self):
        return variant_legs(self.variant, self.n)

    @property
    def default_horizon(self):
        return HORIZON_FACTOR * (self.x - self.y) ** 2

    def with_epsilon(self, epsilon, x=None):
        return EventSpec(
            self.variant,
            self.n,
            epsilon,
            self.x if x is None else x,
            self.y,
            self.kappa,
            self.renewal,
        )

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "n": self.n,
            "epsilon": self.epsilon,
            "x": self.x,
            "y": self.y,
            "kappa": self.kappa,
            "renewal": self.renewal.name.lower(),
        }


@dataclass(frozen=True)
class CrossingRecord:
    success: bool
    leg_times: List[float]
    terminal: str
    weight: float = 1.0

    def __post_init__(self):
        _assert(self.terminal in _TERMINALS, f"Unknown terminal {self.terminal!r}")


@dataclass(frozen=True)
class LegOutcome:
    kind: LegKind
    completed: bool
    time: Optional[float]


@dataclass(frozen=True)
class Renewal:
    epsilon: float
    x: float
    y: float


@dataclass
class CrossingBatch:
    """
    Per-path results of a batch detection

    :param success: (array bool) all legs completed before x was swallowed
    :param terminal: (array object) terminal reason per path
    :param leg_times: (array) shape (B, legs), nan for legs not completed
    :param weights: (array) importance weights M_0/M_tau on success, 1 otherwise
    """

    success: np.ndarray
    terminal: np.ndarray
    leg_times: np.ndarray
    weights: np.ndarray

    @property
    def hits(self):
        return int(np.count_nonzero(self.success))

    @property
    def horizon_failures(self):
        return int(np.count_nonzero(self.terminal == HORIZON))

    def weighted_hits(self):
        return np.where(self.success, self.weights, 0.0)

    def records(self):
        return [
            CrossingRecord(
                success=bool(self.success[i]),
                leg_times=[float(t) for t in self.leg_times[i] if not np.isnan(t)],
                terminal=str(self.terminal[i]),
                weight=float(self.weights[i]),
            )
            for i in range(self.success.size)
        ]


###
# Threshold detection (kappa > 4)
###
def _line_scale(spec):
    return abs(spec.y) if spec.y < 0 else spec.x


def detect_crossings_batch(
    process, spec, policy=None, c_ball=DEFAULT_C_BALL, martingale=None
):
    """
    Run the flow with mark x and the tracked left point y for every path of a
    driving process and detect the variant's legs

    A line leg ends once w - y_left reaches the hit threshold. The first ball leg
    ends once Upsilon <= eps, also when a line leg comes before it. Any later ball
    leg ends once g(x) - w <= c_ball * eps_k * g'(x), where eps_k is the radius
    renewed through renewal_leg with spec.renewal at the end of every earlier leg.
    A path fails as soon as x is swallowed, including a swallow in the same step
    as a leg.

    :param process: (DrivingProcess|ReplayProcess) driving source
    :param spec: (EventSpec) threshold event, kappa > 4
    :param policy: (StepPolicy) optional: defaults to the process policy
    :param martingale: (MartingaleSpec) optional: importance weights M_0/M_tau
        for a driver sampled as SLE_kappa(nu) with force point x
    :return: (CrossingBatch)
    """
    _assert(not spec.variant.is_trace, "Use detect_Hpi for H^pi events", RegimeError)
    if policy is None:
        config = process.config
        policy = config.dt_policy if config is not None else StepPolicy()
    legs = spec.legs
    kinds = np.array([leg == LegKind.BALL for leg in legs])
    first_ball = legs.index(LegKind.BALL) if LegKind.BALL in legs else -1
    paths = process.paths
    state = FlowState.initial(
        [spec.x], y=spec.y, paths=paths, hit_fraction=policy.hit_fraction
    )
    leg = np.zeros(paths, dtype=int)
    leg_times = np.full((paths, len(legs)), np.nan)
    failed = np.zeros(paths, dtype=bool)
    weights = np.ones(paths)
    # ball radius in the original coordinates, renewed at every leg end
    radius = np.full(paths, float(spec.epsilon))
    line_threshold = policy.hit_fraction * _line_scale(spec)
    m0 = martingale.initial_value() if martingale is not None else None

    def check(current, _process=None):
        running = (leg < len(legs)) & ~failed
        swallowed = current.swallowed[:, 0]
        failed[running & swallowed] = True
        running &= ~swallowed
        if not np.any(running):
            return ~running

        image = current.image[:, 0]
        deriv = current.deriv[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            upsilon = (image - current.o_right) / deriv
        ball_now = np.where(
            leg == first_ball,
            upsilon <= spec.epsilon,
            image - current.w <= c_ball * radius * deriv,
        )
        line_now = current.w - current.y_left <= line_threshold
        is_ball = kinds[np.minimum(leg, len(legs) - 1)]
        done_leg = running & np.where(is_ball, ball_now, line_now)
        rows = np.flatnonzero(done_leg)
        leg_times[rows, leg[rows]] = current.t[rows]
        if spec.renewal != RenewalMode.IDENTITY:
            for row in rows:
                _, renewed = renewal_leg(
                    spec, current, legs[leg[row]], spec.renewal, row, radius[row]
                )
                radius[row] = renewed.epsilon / deriv[row]
        leg[rows] += 1

        finished = done_leg & (leg == len(legs))
        if martingale is not None and np.any(finished):
            sub = current.select(finished)
            weights[finished] = m0 / np.atleast_1d(martingale_value(martingale, sub))
        return (leg == len(legs)) | failed

    done = check(state)
    if not np.all(done):
        state, done = run_flow(
            process, state, spec.kappa, policy, on_step=check, done=done
        )

    success = leg == len(legs)
    terminal = np.where(success, TARGET_REACHED, np.where(failed, SWALLOWED_X, HORIZON))
    terminal = terminal.astype(object)
    horizon = int(np.count_nonzero(terminal == HORIZON))
    if horizon:
        logger.warning(
            "detect_crossings_batch: %d of %d paths reached the horizon", horizon, paths
        )
    return CrossingBatch(
        success=success, terminal=terminal, leg_times=leg_times, weights=weights
    )


def detect_crossings_gt4(driver, spec, policy=None, c_ball=DEFAULT_C_BALL):
    """Threshold detection along one sampled DriverPath"""
    batch = detect_crossings_batch(ReplayProcess(driver), spec, policy, c_ball)
    return batch.records()[0]


def renewal_leg(spec, state, kind, mode=RenewalMode.UPPER, path=0, epsilon=None):
    """
    Parameters of the configuration seen through the centered map g_t - W_t at
    the end of a leg

    :param epsilon: (float) optional: current ball radius in the original
        coordinates, spec.epsilon by default
    :return: (LegOutcome, Renewal)
    """
    epsilon = spec.epsilon if epsilon is None else float(epsilon)
    kind = LegKind(kind)
    mode = RenewalMode.coerce(mode)
    i = state.mark_index(spec.x)
    w = float(state.w[path])
    image = float(state.image[path, i])
    deriv = float(state.deriv[path, i])
    y_prime = 0.0 if kind == LegKind.LINE else float(state.y_left[path]) - w
    outcome = LegOutcome(kind=kind, completed=True, time=float(state.t[path]))
    renewed = Renewal(epsilon=epsilon * deriv * mode.value, x=image - w, y=y_prime)
    return outcome, renewed


###
# Crosscuts and well-oriented crossings
###
@dataclass(frozen=True)
class Crosscut:
    """
    Oriented polyline; parameters run over [0, 1] in the order of `points`

    :param points: (array complex) vertices, endpoints on the real line or at
        a truncation point standing in for a prime end
    :param flipped: (bool) whether the points were reversed from construction
    """

    points: np.ndarray
    flipped: bool = False

    def __post_init__(self):
        points = np.asarray(self.points, dtype=complex).reshape(-1)
        _assert(points.size >= 2, "A crosscut needs two points")
        object.__setattr__(self, "points", points)

    @property
    def segments(self):
        return self.points.size - 1

    def param_of(self, segment, fraction):
        return (np.asarray(segment) + np.asarray(fraction)) / self.segments

    def reversed(self):
        return Crosscut(self.points[::-1].copy(), flipped=not self.flipped)


def semicircle_crosscut(
    center, radius, reversed=False, points=DEFAULT_SEMICIRCLE_POINTS
):
    """Upper semicircle about `center` oriented from center - r to center + r"""
    _assert(radius > 0, "radius must be >0", DomainError)
    theta = np.linspace(math.pi, 0.0, points)
    arc = center + radius * np.exp(1j * theta)
    arc[0] = center - radius
    arc[-1] = center + radius
    cut = Crosscut(arc)
    return cut.reversed() if reversed else cut


def strip_crosscut(y, height=STRIP_HEIGHT, cutoff=None):
    """
    Lower boundary of the half-strip L-_{y;height}: [y, y + i height] followed by
    the horizontal ray to the left, truncated at Re = cutoff
    """
    _assert(height > 0, "height must be >0", DomainError)
    if cutoff is None:
        cutoff = y - STRIP_CUTOFF_FACTOR * max(1.0, abs(y))
    _assert(cutoff < y, "cutoff must lie left of y", DomainError)
    return Crosscut(np.array([y + 0j, y + 1j * height, cutoff + 1j * height]))


def _cross(a, b):
    return a.real * b.imag - a.imag * b.real


def curve_crosscut_events(curve, cut, chunk=4096):
    """
    All intersections of a polyline curve with a crosscut

    :return: (curve_times, params, overlaps) where curve time is the segment
        index plus the fraction along it
    """
    curve = np.asarray(curve, dtype=complex).reshape(-1)
    q = cut.points[:-1]
    s = np.diff(cut.points)
    times = []
    params = []
    overlaps = 0
    for start in range(0, curve.size - 1, chunk):
        p = curve[start : start + chunk + 1]
        r = np.diff(p)[:, None]
        p = p[:-1, None]
        qp = q[None, :] - p
        denom = _cross(r, s[None, :])
        num_t = _cross(qp, s[None, :])
        num_u = _cross(qp, r)
        parallel = denom == 0
        overlaps += int(np.count_nonzero(parallel & (num_u == 0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(parallel, -1.0, num_t / denom)
            u = np.where(parallel, -1.0, num_u / denom)
        hit = (t >= 0) & (t < 1) & (u >= 0) & (u <= 1)
        rows, cols = np.nonzero(hit)
        times.append(start + rows + t[rows, cols])
        params.append(cut.param_of(cols, u[rows, cols]))
    if not times:
        return np.zeros(0), np.zeros(0), overlaps
    return np.concatenate(times), np.concatenate(params), overlaps


@dataclass
class WellOrientedState:
    """
    Progress of the well-oriented crossing scan

    :param r_minus: (float) running max parameter visited on the first crosscut
    :param r_plus: (float) running max parameter visited on the second crosscut
    :param count: (int) completed crossings
    :param next_target: (int) -1 or +1
    """

    r_minus: float = 0.0
    r_plus: float = 0.0
    count: int = 0
    next_target: int = -1
    times: List[float] = field(default_factory=list)
    diagnostics: Dict[str, int] = field(default_factory=dict)

    def progress(self, side):
        return self.r_minus if side < 0 else self.r_plus

    def visit(self, side, param):
        if side < 0:
            self.r_minus = max(self.r_minus, param)
        else:
            self.r_plus = max(self.r_plus, param)


def scan_well_oriented(curve, xi_minus, xi_plus, max_n=None):
    """
    Count crossings alternating between xi_minus and xi_plus, each landing on its
    target strictly beyond the progress made there up to the previous crossing

    Events at the same curve time are taken in increasing crosscut parameter.
    """
    events = []
    overlaps = 0
    for side, cut in ((-1, xi_minus), (1, xi_plus)):
        times, params, degenerate = curve_crosscut_events(curve, cut)
        overlaps += degenerate
        events.append(np.column_stack([times, params, np.full(times.size, side)]))
    events = np.vstack(events)
    order = np.lexsort((events[:, 1], events[:, 0]))
    events = events[order]

    state = WellOrientedState(diagnostics={"overlaps": overlaps, "events": len(events)})
    threshold = 0.0
    for curve_time, param, side in events:
        side = int(side)
        if side == state.next_target and param > threshold:
            state.count += 1
            state.times.append(float(curve_time))
            state.visit(side, param)
            state.next_target = -side
            threshold = state.progress(state.next_target)
            if max_n is not None and state.count >= max_n:
                break
        else:
            state.visit(side, param)
    if overlaps:
        logger.info("scan_well_oriented: %d colinear overlaps ignored", overlaps)
    return state


def well_oriented_count(curve, xi_minus, xi_plus, max_n=None):
    """:return: (count, crossing curve times)"""
    state = scan_well_oriented(curve, xi_minus, xi_plus, max_n)
    return state.count, state.times


@dataclass(frozen=True)
class ComparisonVerdict:
    outer_count: int
    inner_count: int

    @property
    def consistent(self):
        return self.inner_count >= self.outer_count


def comparison_check(curve, outer_pair, inner_pair):
    """Inner crosscut pairs collect at least as many well-oriented crossings"""
    outer, _ = well_oriented_count(curve, *outer_pair)
    inner, _ = well_oriented_count(curve, *inner_pair)
    verdict = ComparisonVerdict(outer, inner)
    if not verdict.consistent:
        logger.warning("comparison_check: inner %d < outer %d", inner, outer)
    return verdict


###
# Trace-based detection
###
def _swallow_time(chain, x, hit_fraction):
    image = float(x)
    t = 0.0
    for dt, w_start, w_end in chain.steps:
        image += 2.0 * dt / (image - w_start)
        t += dt
        if image - w_end <= hit_fraction * x:
            return t
    return math.inf


def _curve_times(steps, chain, curve_times):
    times = chain.times[steps]
    index = np.floor(curve_times).astype(int)
    index = np.minimum(index, times.size - 2)
    fraction = curve_times - index
    return times[index] + fraction * (times[index + 1] - times[index])


def _trace_detect(chain, spec, strip, k_skip, hit_fraction):
    legs = spec.legs
    ball = semicircle_crosscut(spec.x, spec.epsilon)
    pair = (ball, strip) if legs[0] == LegKind.BALL else (strip, ball)
    steps, points = trace_polyline(chain, k_skip)
    state = scan_well_oriented(points, *pair, max_n=len(legs))
    leg_times = list(_curve_times(steps, chain, np.asarray(state.times)))

    far = strip.points[-1].real
    if np.any((points.real < far + 1.0) & (points.imag <= strip.points[1].imag + 1.0)):
        logger.info("detect: curve approached the strip truncation at Re=%.3g", far)

    swallow = _swallow_time(chain, spec.x, hit_fraction) if spec.kappa > 4 else math.inf
    success = len(leg_times) >= len(legs) and leg_times[len(legs) - 1] < swallow
    if success:
        terminal = TARGET_REACHED
    elif math.isfinite(swallow):
        terminal = SWALLOWED_X
    else:
        terminal = HORIZON
    return CrossingRecord(
        success=success,
        leg_times=[t for t in leg_times if t < swallow],
        terminal=terminal,
    )


def detect_Hpi(chain, spec, k_skip=1, cutoff=None, hit_fraction=1e-6):
    """
    H^pi events for kappa <= 4 as well-oriented crossings of the upper semicircle
    about x and the lower boundary of L-_y; odd variants start at the ball
    """
    _assert(spec.variant.is_trace, "detect_Hpi takes H^pi events", RegimeError)
    if cutoff is None:
        cutoff = spec.y - STRIP_CUTOFF_FACTOR * (spec.x - spec.y)
    strip = strip_crosscut(spec.y, STRIP_HEIGHT, cutoff)
    return _trace_detect(chain, spec, strip, k_skip, hit_fraction)


def detect_trace_crossings(chain, spec, line_height=None, k_skip=1, hit_fraction=1e-6):
    """
    Geometric version of the threshold events for kappa in (4, 8): the half-line is
    thickened into a strip of height line_height
    """
    _assert(not spec.variant.is_trace, "Use detect_Hpi for H^pi events", RegimeError)
    _assert(spec.kappa < 8, "Trace mode needs kappa < 8", RegimeError)
    if line_height is None:
        line_height = DEFAULT_LINE_HEIGHT_FRACTION * spec.epsilon
    cutoff = spec.y - STRIP_CUTOFF_FACTOR * (spec.x - spec.y)
    strip = strip_crosscut(spec.y, line_height, cutoff)
    return _trace_detect(chain, spec, strip, k_skip, hit_fraction)
