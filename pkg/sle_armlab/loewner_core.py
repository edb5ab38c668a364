"""
Chordal Loewner flow of marked boundary points and trace reconstruction

A FlowState carries a leading path axis so that a batch of B paths advances in one
vectorized step, each path with its own dt. The single-path API is the B = 1 case.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .conformal_maps import HalfStrip, phi, slit_f, slit_g
from .constants import (
    DEFAULT_C_STEP,
    DEFAULT_DT_MAX,
    DEFAULT_HIT_FRACTION,
    DEFAULT_REFLECT_FLOOR,
    KOEBE_UPPER,
    STRIP_HEIGHT,
)
from .exceptions import BranchError, DomainError, StepSizeError, SwallowedMarkError
from .utils import _assert

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepPolicy:
    """
    Adaptive step contract: dt = min(dt_max, c_step * s^2 / kappa) where s is the
    smallest tracked gap

    :param dt_max: (float) largest allowed step
    :param c_step: (float) fraction of the squared gap per unit kappa
    :param hit_fraction: (float) a gap is hit once below this fraction of its start
    :param reflect_floor: (float) reflected gaps below this value do not shrink dt
    """

    dt_max: float = DEFAULT_DT_MAX
    c_step: float = DEFAULT_C_STEP
    hit_fraction: float = DEFAULT_HIT_FRACTION
    reflect_floor: float = DEFAULT_REFLECT_FLOOR

    def __post_init__(self):
        _assert(self.dt_max > 0, "dt_max must be >0")
        _assert(self.c_step > 0, "c_step must be >0")
        _assert(0 < self.hit_fraction < 1, "hit_fraction must be in (0, 1)")
        _assert(self.reflect_floor >= 0, "reflect_floor must be >=0")

    def to_dict(self):
        return {
            "dt_max": self.dt_max,
            "c_step": self.c_step,
            "hit_fraction": self.hit_fraction,
            "reflect_floor": self.reflect_floor,
        }


@dataclass(frozen=True)
class MarkedPoint:
    x0: float
    image: float
    deriv: float
    swallowed: bool
    swallow_time: Optional[float]


@dataclass
class FlowState:
    """
    Snapshot of the Loewner flow for B paths and M marks

    Per-path arrays have shape (B,), per-mark arrays (B, M). `y_left` follows the
    image of `y` until it is swallowed and the image of the leftmost hull point after.
    """

    t: np.ndarray
    w: np.ndarray
    o_right: np.ndarray
    y_left: np.ndarray
    x0: np.ndarray
    image: np.ndarray
    deriv: np.ndarray
    swallowed: np.ndarray
    swallow_time: np.ndarray
    y: float = 0.0
    y_swallowed: np.ndarray = field(default=None)
    hit_fraction: float = DEFAULT_HIT_FRACTION

    @classmethod
    def initial(cls, marks, y=0.0, paths=1, hit_fraction=DEFAULT_HIT_FRACTION):
        """
        Flow at t = 0 with the identity map

        :param marks: (list of float) nonzero boundary points; left marks must lie
            at or left of y
        :param y: (float) tracked left point, 0 means the leftmost hull point
        :param paths: (int) batch size B
        """
        x0 = np.asarray(list(marks), dtype=float).reshape(-1)
        _assert(paths >= 1, "Need at least one path")
        _assert(y <= 0, "y must be <=0", DomainError)
        _assert(bool(np.all(x0 != 0)), "Marks must be nonzero", DomainError)
        _assert(
            bool(np.all((x0 > 0) | (x0 <= y))),
            "Left marks must lie at or left of y",
            DomainError,
        )
        zeros = np.zeros(paths)
        return cls(
            t=zeros.copy(),
            w=zeros.copy(),
            o_right=zeros.copy(),
            y_left=np.full(paths, float(y)),
            x0=x0,
            image=np.tile(x0, (paths, 1)),
            deriv=np.ones((paths, x0.size)),
            swallowed=np.zeros((paths, x0.size), dtype=bool),
            swallow_time=np.full((paths, x0.size), np.nan),
            y=float(y),
            y_swallowed=np.full(paths, y == 0),
            hit_fraction=hit_fraction,
        )

    @property
    def paths(self):
        return self.w.size

    @property
    def marks(self) -> List[MarkedPoint]:
        """MarkedPoint views of the first path"""
        return [self.marked_point(i) for i in range(self.x0.size)]

    def marked_point(self, mark, path=0):
        swallow_time = self.swallow_time[path, mark]
        return MarkedPoint(
            x0=float(self.x0[mark]),
            image=float(self.image[path, mark]),
            deriv=float(self.deriv[path, mark]),
            swallowed=bool(self.swallowed[path, mark]),
            swallow_time=None if np.isnan(swallow_time) else float(swallow_time),
        )

    def mark_index(self, x0):
        matches = np.flatnonzero(np.isclose(self.x0, x0, rtol=0, atol=1e-12))
        _assert(matches.size == 1, f"No unique mark at {x0}", DomainError)
        return int(matches[0])

    def absorbing_gaps(self):
        """Per-path minimum over gaps that end a process when they close"""
        gaps = np.abs(self.image - self.w[:, None])
        gaps = np.where(self.swallowed, np.inf, gaps)
        smallest = gaps.min(axis=1) if gaps.shape[1] else np.full(self.paths, np.inf)
        left = np.where(self.y_swallowed, np.inf, self.w - self.y_left)
        return np.minimum(smallest, left)

    def reflected_gaps(self):
        left = np.where(self.y_swallowed, self.w - self.y_left, np.inf)
        return np.minimum(self.o_right - self.w, left)

    def select(self, index):
        """Sub-batch of the given paths (copies)"""
        return replace(
            self,
            t=self.t[index],
            w=self.w[index],
            o_right=self.o_right[index],
            y_left=self.y_left[index],
            image=self.image[index],
            deriv=self.deriv[index],
            swallowed=self.swallowed[index],
            swallow_time=self.swallow_time[index],
            y_swallowed=self.y_swallowed[index],
        )


def adaptive_dt(state, kappa, policy, extra_gaps=None):
    """
    Per-path step size min(dt_max, c_step * s^2 / kappa)

    Reflected gaps enter s only above policy.reflect_floor; they touch zero
    repeatedly and would otherwise stall the step.
    """
    s = state.absorbing_gaps()
    reflected = state.reflected_gaps()
    s = np.minimum(
        s, np.where(reflected > 0, np.maximum(reflected, policy.reflect_floor), np.inf)
    )
    if extra_gaps is not None:
        s = np.minimum(s, extra_gaps)
    dt = policy.c_step * s * s / kappa
    return np.minimum(policy.dt_max, dt)


def advance_flow(state, w_next, dt):
    """
    One explicit Euler step of the Loewner flow with the driving value moving from
    state.w to w_next over dt

    Paths with dt == 0 are left unchanged.

    :raises StepSizeError: if the step produced non-finite values
    """
    dt = np.broadcast_to(np.asarray(dt, dtype=float), state.w.shape)
    w_next = np.broadcast_to(np.asarray(w_next, dtype=float), state.w.shape)
    _assert(bool(np.all(dt >= 0)), "dt must be >=0")
    moving = dt > 0
    w = state.w
    t_next = state.t + dt
    col = dt[:, None]

    with np.errstate(divide="ignore", invalid="ignore"):
        gap = state.image - w[:, None]
        live = ~state.swallowed & moving[:, None]
        image = np.where(live, state.image + 2.0 * col / gap, state.image)
        deriv = np.where(
            live, state.deriv * np.exp(-2.0 * col / (gap * gap)), state.deriv
        )

        floor = 2.0 * np.sqrt(dt)

        # rightmost hull point
        o_gap = state.o_right - w
        o_right = state.o_right + 2.0 * dt / np.maximum(o_gap, floor)
        o_right = np.maximum(o_right, w_next)

        # tracked left point, absorbing until swallowed then reflected
        y_gap = w - state.y_left
        y_drift = np.where(
            state.y_swallowed, 2.0 * dt / np.maximum(y_gap, floor), 2.0 * dt / y_gap
        )
        y_left = np.where(moving, state.y_left - y_drift, state.y_left)

    hit_fraction = state.hit_fraction
    right = state.x0 > 0
    new_gap = np.where(right, image - w_next[:, None], w_next[:, None] - image)
    thresholds = hit_fraction * np.abs(state.x0)
    newly = live & (new_gap <= thresholds[None, :])
    swallowed = state.swallowed | newly
    swallow_time = np.where(newly, t_next[:, None], state.swallow_time)

    y_scale = abs(state.y) if state.y < 0 else 1.0
    y_hit = moving & ~state.y_swallowed & (w_next - y_left <= hit_fraction * y_scale)
    y_swallowed = state.y_swallowed | y_hit
    y_left = np.where(moving, np.minimum(y_left, w_next), y_left)

    # keep o_right below live right images and Upsilon nonincreasing
    live_right = ~swallowed & right[None, :]
    if np.any(live_right):
        with np.errstate(invalid="ignore"):
            old_upsilon = (state.image - state.o_right[:, None]) / state.deriv
            lower = np.where(live_right & live, image - old_upsilon * deriv, -np.inf)
            upper = np.where(live_right, image, np.inf)
        o_right = np.maximum(o_right, lower.max(axis=1))
        o_right = np.minimum(o_right, upper.min(axis=1))
        o_right = np.maximum(o_right, w_next)
    o_right = np.where(moving, o_right, state.o_right)

    # swallowed marks follow the extreme point of their side
    image = np.where(
        swallowed & right[None, :],
        o_right[:, None],
        np.where(swallowed, y_left[:, None], image),
    )

    finite = (
        np.all(np.isfinite(image[~swallowed]))
        and np.all(np.isfinite(deriv))
        and np.all(np.isfinite(o_right))
        and np.all(np.isfinite(y_left))
    )
    if not finite:
        raise StepSizeError("Non-finite flow state, refine dt")

    return replace(
        state,
        t=np.where(moving, t_next, state.t),
        w=np.where(moving, w_next, state.w),
        o_right=o_right,
        y_left=y_left,
        image=image,
        deriv=deriv,
        swallowed=swallowed,
        swallow_time=swallow_time,
        y_swallowed=y_swallowed,
    )


def conformal_radius_proxy(state, mark=0):
    """
    Upsilon = (image - o_right) / deriv for a right mark, per path

    Nonincreasing in t and within a factor 4 of the distance from the mark to
    the hull.

    :raises SwallowedMarkError: if the mark is swallowed on any path
    """
    _assert(state.x0[mark] > 0, "Upsilon is defined for right marks", DomainError)
    _assert(
        not bool(np.any(state.swallowed[:, mark])),
        "Upsilon queried for a swallowed mark",
        SwallowedMarkError,
    )
    upsilon = (state.image[:, mark] - state.o_right) / state.deriv[:, mark]
    return float(upsilon[0]) if state.paths == 1 else upsilon


def j_observable(state, mark=0):
    """J = (image - o_right) / (image - w), in (0, 1]"""
    _assert(
        not bool(np.any(state.swallowed[:, mark])),
        "J queried for a swallowed mark",
        SwallowedMarkError,
    )
    image = state.image[:, mark]
    value = (image - state.o_right) / (image - state.w)
    return float(value[0]) if state.paths == 1 else value


###
# Discretized chains
###
@dataclass(frozen=True)
class DiscretizedChain:
    """
    Piecewise-constant driving: step j holds W at w_end[j] for a time dt[j]

    :param dt: (array) step lengths, all > 0
    :param w_start: (array) driving value at the start of each step
    :param w_end: (array) driving value at the end of each step
    """

    dt: np.ndarray
    w_start: np.ndarray
    w_end: np.ndarray

    def __post_init__(self):
        _assert(
            self.dt.shape == self.w_start.shape == self.w_end.shape,
            "Chain arrays must have equal shape",
        )
        _assert(bool(np.all(self.dt > 0)), "Chain steps need dt > 0")

    @classmethod
    def from_driving(cls, times, w):
        times = np.asarray(times, dtype=float)
        w = np.asarray(w, dtype=float)
        return cls(dt=np.diff(times), w_start=w[:-1].copy(), w_end=w[1:].copy())

    @classmethod
    def empty(cls):
        return cls(dt=np.zeros(0), w_start=np.zeros(0), w_end=np.zeros(0))

    @property
    def steps(self):
        return list(zip(self.dt, self.w_start, self.w_end))

    @property
    def times(self):
        return np.concatenate([[0.0], np.cumsum(self.dt)])

    @property
    def total_time(self):
        return float(self.dt.sum())

    def __len__(self):
        return self.dt.size

    def head(self, k):
        return DiscretizedChain(self.dt[:k], self.w_start[:k], self.w_end[:k])


def _check_upper(points):
    if not np.all(np.isfinite(points)) or np.any(points.imag < -1e-12):
        raise BranchError("Trace left the closed upper half-plane, refine dt")
    return points


def trace_tip(chain, k):
    """
    Tip eta(t_k) from the inverse slit maps f_{k-1}, ..., f_1 applied to the seed
    W_k + 2i sqrt(dt_k)
    """
    _assert(0 <= k <= len(chain), "Step index out of range")
    if k == 0:
        return complex(chain.w_start[0]) if len(chain) else 0j
    point = np.asarray(chain.w_end[k - 1] + 2j * math.sqrt(chain.dt[k - 1]))
    for j in range(k - 2, -1, -1):
        point = slit_f(chain.w_end[j], chain.dt[j], point)
    return complex(_check_upper(np.atleast_1d(point))[0])


def trace_polyline(chain, k_skip=1):
    """
    Tips at steps 0, k_skip, 2*k_skip, ... and the last step, in one sweep

    :return: (steps, points) integer step indices and complex tips
    """
    _assert(k_skip >= 1, "k_skip must be >=1")
    count = len(chain)
    if count == 0:
        return np.zeros(1, dtype=int), np.zeros(1, dtype=complex)
    steps = np.arange(k_skip, count + 1, k_skip)
    if steps[-1] != count:
        steps = np.append(steps, count)
    points = chain.w_end[steps - 1] + 2j * np.sqrt(chain.dt[steps - 1])
    points = points.astype(complex)
    # step j (0-based) acts on every tip with index > j + 1
    for j in range(count - 2, -1, -1):
        first = np.searchsorted(steps, j + 2)
        if first >= steps.size:
            continue
        points[first:] = slit_f(chain.w_end[j], chain.dt[j], points[first:])
    start = chain.w_start[0] + 0j
    return np.concatenate([[0], steps]), np.concatenate([[start], _check_upper(points)])


def map_points(chain, z):
    """g_K(z) by composing the forward slit maps; lower points by reflection"""
    z = np.asarray(z, dtype=complex)
    lower = z.imag < 0
    points = np.where(lower, np.conj(z), z)
    for j in range(len(chain)):
        points = slit_g(chain.w_end[j], chain.dt[j], points)
    return np.where(lower, np.conj(points), points)


def map_derivative(chain, z):
    """g_K'(z) as the product of the slit map derivatives along the composition"""
    z = np.asarray(z, dtype=complex)
    lower = z.imag < 0
    points = np.where(lower, np.conj(z), z)
    derivative = np.ones_like(points)
    for j in range(len(chain)):
        image = slit_g(chain.w_end[j], chain.dt[j], points)
        derivative = derivative * (points - chain.w_end[j]) / (image - chain.w_end[j])
        points = image
    return np.where(lower, np.conj(derivative), derivative)


def inverse_map(chain, w):
    """f_K(w) = g_K^{-1}(w) for w in the closed upper half-plane"""
    points = np.asarray(w, dtype=complex)
    for j in range(len(chain) - 1, -1, -1):
        points = slit_f(chain.w_end[j], chain.dt[j], points)
    return points


def hcap_of_map(g, R):
    """Half-plane capacity from g(iR) = iR + hcap/(iR) + ..., i.e. R*Im(iR - g(iR))"""
    return R * (R - complex(g(1j * R)).imag)


def hcap_estimate(chain, R=None):
    """Half-plane capacity of the discretized hull; equals 2 * total time"""
    total = chain.total_time
    if total == 0:
        return 0.0
    if R is None:
        R = 1e3 * math.sqrt(total)
    return hcap_of_map(lambda z: complex(map_points(chain, z)), R)


###
# Numeric geometry checks
###
def hull_geometry_check(chain, k_skip=1, tol=1e-9):
    """
    Trace points up to t0 satisfy Im z <= sqrt(4 t0) and Re z <= max W

    :return: (bool, max height ratio)
    """
    steps, points = trace_polyline(chain, k_skip)
    times = chain.times[steps]
    if len(chain):
        driving = np.concatenate([chain.w_start[:1], chain.w_end])
    else:
        driving = np.zeros(1)
    w_max = np.maximum.accumulate(driving)[steps]
    height_ok = points.imag <= np.sqrt(4.0 * times) + tol
    real_ok = points.real <= w_max + tol
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(times > 0, points.imag / np.sqrt(4.0 * times), 0.0)
    return bool(np.all(height_ok & real_ok)), float(np.max(ratio))


def _trace_distance(chain, z, k_skip=1):
    _steps, points = trace_polyline(chain, k_skip)
    return float(np.min(np.abs(points - z)))


def arc_containment_check(chain, x, eps, samples=64):
    """
    Map the upper semicircle of radius eps about x and measure how far it lands from
    g_K(x + 3 eps) in units of 8 eps g_K'(x + 3 eps)

    Applicable when the hull stays outside the ball; returns None otherwise.

    :return: (float|None) largest ratio, at most 1 when the containment holds
    """
    if _trace_distance(chain, x) <= eps:
        return None
    theta = np.linspace(0.0, math.pi, samples)
    arc = x + eps * np.exp(1j * theta)
    center = complex(map_points(chain, x + 3 * eps))
    radius = KOEBE_UPPER * eps * abs(complex(map_derivative(chain, x + 3 * eps)))
    return float(np.max(np.abs(map_points(chain, arc) - center)) / radius)


def ball_containment_check(chain, z, eps, samples=64):
    """
    For dist(K, z) >= 16 eps the image of B(z, eps) lies in B(g(z), 4 eps |g'(z)|)

    :return: (float|None) largest ratio, None when the distance condition fails
    """
    if _trace_distance(chain, z) < 16 * eps:
        return None
    circle = z + eps * np.exp(1j * np.linspace(0.0, 2 * math.pi, samples))
    center = complex(map_points(chain, z))
    radius = 4 * eps * abs(complex(map_derivative(chain, z)))
    return float(np.max(np.abs(map_points(chain, circle) - center)) / radius)


def strip_lower_check(chain, x0, R, y, r, samples=24, span=20.0):
    """
    For K inside the closed semidisc B+(x0, R), f_K maps L-_{y';r'} into L-_{y;r}
    with y' = min(x0 - 2R - 2R^2/r, y - r/2) and r' = r/2

    :return: (int|None) number of sample points landing outside, None when the
        hull is not inside the semidisc
    """
    _steps, points = trace_polyline(chain)
    if np.max(np.abs(points - x0)) > R:
        return None
    y_prime = min(x0 - 2 * R - 2 * R * R / r, y - r / 2)
    r_prime = r / 2
    xs = np.linspace(y_prime - span, y_prime, samples)
    hs = np.linspace(r_prime / samples, r_prime, samples)
    grid = (xs[:, None] + 1j * hs[None, :]).reshape(-1)
    landed = inverse_map(chain, grid)
    inside = HalfStrip(y, r).contains(landed, tol=1e-9)
    return int(np.count_nonzero(~inside))


def phi_contraction_check(chain, x0, y0, samples=200, span=50.0):
    """
    For a hull that stays off the boundary of L-_{y0}, the image of that boundary
    lies in L-_{y1} with g_K(x0) - y1 >= phi(x0 - y0)

    :return: (float|None) the margin g_K(x0) - y1 - phi(x0 - y0), None when the
        check does not apply
    """
    _steps, points = trace_polyline(chain)
    if np.any(points.real >= x0) or np.any(
        HalfStrip(y0).contains(points[1:], tol=0.05)
    ):
        return None
    side = y0 + 1j * np.linspace(STRIP_HEIGHT / samples, STRIP_HEIGHT, samples)
    top = y0 - np.geomspace(1e-3, span, samples) + 1j * STRIP_HEIGHT
    images = map_points(chain, np.concatenate([side, top]))
    if np.any(images.imag > STRIP_HEIGHT + 1e-9):
        return -math.inf
    y1 = float(np.max(images.real))
    gx = float(map_points(chain, x0 + 0j).real)
    return gx - y1 - phi(x0 - y0)
