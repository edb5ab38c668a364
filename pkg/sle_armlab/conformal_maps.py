"""
Explicit conformal maps of the upper half-plane H

    semidisc_g      H minus a closed semidisc onto H
    slit_g/slit_f   elementary vertical-slit map and its inverse
    halfstrip_f     H onto H minus the half-strip L-_y = {Im z <= pi, Re z <= y}
    halfstrip_g     inverse of halfstrip_f
    phi/phi_iter    gap contraction f(g(x) - 2) and its iterates
    hm_infinity     harmonic measure from infinity of a boundary interval

All maps take the branch that keeps images in the closed upper half-plane.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .constants import (
    DEFAULT_CACHE_BYTES,
    DEFAULT_CACHE_ITEMS,
    HALFSTRIP_F3,
    HOMOTOPY_STEPS,
    NEWTON_MAX_DAMPING,
    NEWTON_MAX_ITERATIONS,
    NEWTON_TOLERANCE,
    STRIP_HEIGHT,
)
from .exceptions import ConvergenceError, DomainError
from .map_cache import MapCache
from .utils import _assert

logger = logging.getLogger(__name__)

_BOUNDARY_TOLERANCE = 1e-12

_boundary_cache = MapCache(
    max_size_bytes=DEFAULT_CACHE_BYTES, max_items=DEFAULT_CACHE_ITEMS
)


def boundary_cache():
    return _boundary_cache


def configure_cache(max_items=DEFAULT_CACHE_ITEMS, max_size_bytes=DEFAULT_CACHE_BYTES):
    """Resize the boundary inversion cache, evicting LRU entries as needed"""
    _boundary_cache.change_max_items(max_items)
    _boundary_cache.change_byte_size(max_size_bytes)
    return _boundary_cache


@dataclass(frozen=True)
class SemiDisc:
    x0: float
    r: float

    def __post_init__(self):
        _assert(self.r > 0, "SemiDisc radius must be >0", DomainError)

    @property
    def hcap(self):
        return self.r**2

    @property
    def image_interval(self):
        return (self.x0 - 2 * self.r, self.x0 + 2 * self.r)


@dataclass(frozen=True)
class HalfStrip:
    y: float
    r: float = STRIP_HEIGHT

    def __post_init__(self):
        _assert(self.r > 0, "HalfStrip height must be >0", DomainError)

    def contains(self, z, tol=0.0):
        z = np.asarray(z, dtype=complex)
        return (z.imag >= -tol) & (z.imag <= self.r + tol) & (z.real <= self.y + tol)


def semidisc_g(disc, z):
    """
    Map H minus the closed semidisc B+(x0, r) onto H: g(z) = z + r^2/(z - x0)

    Points on the semicircle map onto [x0 - 2r, x0 + 2r].
    """
    z = np.asarray(z, dtype=complex)
    distance = np.abs(z - disc.x0)
    _assert(
        bool(np.all(distance >= disc.r * (1 - _BOUNDARY_TOLERANCE))),
        "Point lies inside the removed semidisc",
        DomainError,
    )
    out = z + disc.r**2 / (z - disc.x0)
    return out[()] if out.ndim == 0 else out


def _upper_root(radicand, reference):
    """
    Square root of radicand choosing the root in the closed upper half-plane;
    real roots take the sign of Re(reference)
    """
    root = np.sqrt(radicand)
    flip = (root.imag < 0) | ((root.imag == 0) & (np.real(reference) * root.real < 0))
    return np.where(flip, -root, root)


def slit_g(w, dt, z):
    """Elementary slit map W + sqrt((z - W)^2 + 4 dt), removing [W, W + 2i sqrt(dt)]"""
    z = np.asarray(z, dtype=complex)
    shifted = z - w
    return w + _upper_root(shifted * shifted + 4.0 * dt, shifted)


def slit_f(w, dt, z):
    """Inverse slit map W + sqrt((z - W)^2 - 4 dt), the tip is f(W) = W + 2i sqrt(dt)"""
    z = np.asarray(z, dtype=complex)
    shifted = z - w
    return w + _upper_root(shifted * shifted - 4.0 * dt, shifted)


def _clean_upper(z):
    """Force a +0.0 imaginary part on real points so principal roots pick the H side"""
    z = np.asarray(z, dtype=complex)
    return z.real + 1j * np.where(z.imag > 0, z.imag, 0.0)


def _sqrt_z2m1(u):
    # continuous on H, positive on (1, inf), ~u at infinity
    return np.sqrt(u - 1.0) * np.sqrt(u + 1.0)


def _f0(u):
    s = _sqrt_z2m1(u)
    return s + np.log(u + s)


def _f0_prime(u):
    return (u + 1.0) / _sqrt_z2m1(u)


def halfstrip_f(y, z, allow_cut=False):
    """
    f_{L-_y}(z) = sqrt((z-y)^2 - 1) + log((z-y) + sqrt((z-y)^2 - 1)) + y

    Maps H onto H minus L-_y with f(y+1) = y and f(y-1) = y + i*pi.

    :param y: (float) right edge of the half-strip
    :param z: (complex|array) points of the closed upper half-plane
    :param allow_cut: (bool) accept real points strictly inside (y-1, y+1) as
        boundary values taken from H; rejected otherwise
    """
    u = np.asarray(z, dtype=complex) - y
    _assert(bool(np.all(u.imag >= 0)), "halfstrip_f needs Im z >= 0", DomainError)
    if not allow_cut:
        on_cut = (u.imag == 0) & (np.abs(u.real) < 1)
        _assert(
            not bool(np.any(on_cut)),
            "Point lies inside the branch cut of halfstrip_f",
            DomainError,
        )
    out = _f0(_clean_upper(u)) + y
    return out[()] if out.ndim == 0 else out


def halfstrip_fprime(y, z):
    """f'_{L-_y}(z) = sqrt((z-y+1)/(z-y-1)), realized as (u+1)/sqrt(u^2-1)"""
    u = _clean_upper(np.asarray(z, dtype=complex) - y)
    out = _f0_prime(u)
    return out[()] if out.ndim == 0 else out


###
# Boundary inversion
###
def _real_ray_f(u):
    return math.sqrt(u * u - 1.0) + math.acosh(u)


def _side_f(u):
    return math.sqrt(max(0.0, 1.0 - u * u)) + math.acos(u)


def _top_ray_f(u):
    return -math.sqrt(u * u - 1.0) + math.acosh(-u)


def _expand_bracket(func, target, start, step):
    """Grow [start, start+step*2^k] until func crosses target; func monotone"""
    lo = start
    hi = start + step
    while (func(hi) - target) * (func(lo) - target) > 0:
        hi = start + 2.0 * (hi - start)
        _assert(abs(hi) < 1e300, "Bracket expansion diverged", ConvergenceError)
    return min(lo, hi), max(lo, hi)


def boundary_arc(y, w, tol=_BOUNDARY_TOLERANCE):
    """
    Classify w as a boundary point of H minus L-_y

    :return: 'real' for [y, inf), 'side' for [y, y + i*pi], 'top' for the ray
        {Im = pi, Re <= y}, None for points off the boundary
    """
    w = complex(w)
    scale = tol * max(1.0, abs(w))
    if abs(w.real - y) <= scale and -scale <= w.imag <= STRIP_HEIGHT + scale:
        return "side"
    if abs(w.imag) <= scale and w.real >= y:
        return "real"
    if abs(w.imag - STRIP_HEIGHT) <= scale and w.real <= y:
        return "top"
    return None


def _boundary_preimage(y, w, arc):
    t = complex(w) - y
    if arc == "real":
        target = max(t.real, 0.0)
        if target == 0.0:
            return 1.0
        lo, hi = _expand_bracket(_real_ray_f, target, 1.0, target + 1.0)
        return optimize.brentq(lambda u: _real_ray_f(u) - target, lo, hi, xtol=1e-15)
    if arc == "side":
        target = min(max(t.imag, 0.0), STRIP_HEIGHT)
        if target == 0.0:
            return 1.0
        if target == STRIP_HEIGHT:
            return -1.0
        return optimize.brentq(lambda u: _side_f(u) - target, -1.0, 1.0, xtol=1e-15)
    target = min(t.real, 0.0)
    if target == 0.0:
        return -1.0
    lo, hi = _expand_bracket(_top_ray_f, target, -1.0, -(1.0 - target))
    return optimize.brentq(lambda u: _top_ray_f(u) - target, lo, hi, xtol=1e-15)


def boundary_preimage(y, w):
    """
    Real preimage g_{L-_y}(w) of a boundary point w, memoized in the map cache

    The real ray maps back onto [y+1, inf), the vertical side onto [y-1, y+1] and
    the top ray onto (-inf, y-1].
    """
    arc = boundary_arc(y, w)
    _assert(
        arc is not None, f"{w} is not on the boundary of H minus L-_{y}", DomainError
    )
    key = (float(y), complex(w))
    return y + _boundary_cache.memoize(key, lambda: _boundary_preimage(y, w, arc))


###
# Interior inversion
###
def _newton(target, start, tol):
    """
    Damped Newton for f0(u) = target in H

    :return: (root or None, number of consecutive failed dampings at exit)
    """
    u = complex(start)
    failed = 0
    for _ in range(NEWTON_MAX_ITERATIONS):
        residual = complex(_f0(_clean_upper(u))) - target
        if abs(residual) <= tol:
            return u, 0
        derivative = complex(_f0_prime(_clean_upper(u)))
        if derivative == 0 or not np.isfinite(derivative):
            return None, failed
        step = residual / derivative
        candidate = u - step
        damping = 0
        while candidate.imag < 0 and damping < NEWTON_MAX_DAMPING:
            step *= 0.5
            candidate = u - step
            damping += 1
        if candidate.imag < 0:
            failed += 1
            if failed >= 3:
                return None, failed
            candidate = complex(candidate.real, 0.0)
        else:
            failed = 0
        u = candidate
    return None, failed


def _homotopy(target, tol):
    """
    Continue the inverse along the segment from a far point straight above target

    Fallback once damped Newton gives up after three failed dampings in a row, used
    in place of bisection along a ray.
    """
    height = 10.0 * (1.0 + abs(target))
    far = target + 1j * height
    u = far - np.log(2.0 * far)
    for k in range(1, HOMOTOPY_STEPS + 1):
        stage = far + (target - far) * k / HOMOTOPY_STEPS
        stage_tol = tol if k == HOMOTOPY_STEPS else 1e-8 * max(1.0, abs(stage))
        u, _failed = _newton(stage, u, stage_tol)
        if u is None:
            return None
    return u


def _interior_preimage(y, w):
    target = complex(w) - y
    tol = NEWTON_TOLERANCE * max(1.0, abs(complex(w)))
    start = target - np.log(2.0 * max(1.0, abs(target)))
    start = complex(start.real, max(start.imag, 1e-3))
    u, _failed = _newton(target, start, tol)
    if u is None:
        logger.debug("halfstrip_g: Newton failed at w=%s, using homotopy", w)
        u = _homotopy(target, tol)
    if u is None:
        raise ConvergenceError(f"halfstrip_g did not converge at w={w}")
    return u + y


def halfstrip_g(y, w):
    """
    Inverse of halfstrip_f: g_{L-_y}(w) for w in the closure of H minus L-_y

    Boundary points are inverted by bracketing on their arc; interior points by
    damped Newton started at w - log(2 max(1, |w-y|)) with a homotopy fallback.
    """
    values = np.asarray(w, dtype=complex)
    flat = values.reshape(-1)
    out = np.empty_like(flat)
    for i, point in enumerate(flat):
        point = complex(point)
        _assert(
            point.imag >= -_BOUNDARY_TOLERANCE,
            "halfstrip_g needs Im w >= 0",
            DomainError,
        )
        if boundary_arc(y, point) is not None:
            out[i] = boundary_preimage(y, point)
            continue
        if point.real < y and point.imag < STRIP_HEIGHT:
            raise DomainError(f"{point} lies inside the half-strip L-_{y}")
        out[i] = _interior_preimage(y, point)
    out = out.reshape(values.shape)
    return out[()] if out.ndim == 0 else out


###
# phi and harmonic measure
###
def phi(x):
    """
    phi(x) = f_{L-_0}(g_{L-_0}(x) - 2) for x >= f_{L-_0}(3), else exactly 0

    Increasing on [f(3), inf) with phi(x) < x.
    """
    x = float(x)
    if x < HALFSTRIP_F3:
        return 0.0
    u = boundary_preimage(0.0, x) - 2.0
    return _real_ray_f(max(u, 1.0))


def phi_iter(k, x):
    """phi composed k times; phi_iter(0, x) = x, stops early once 0 is reached"""
    _assert(isinstance(k, (int, np.integer)) and k >= 0, "k must be a natural number")
    value = float(x)
    for _ in range(k):
        if value == 0.0:
            break
        value = phi(value)
    return value


def phi_gap_condition(n, eps, x, y):
    """Regime test 2^(5n-4) eps < phi^(2n-2)(x - y) for the half-strip exponent bound"""
    _assert(n >= 1, "n must be >=1")
    return 2.0 ** (5 * n - 4) * eps < phi_iter(2 * n - 2, x - y)


def hm_infinity(y, boundary_interval):
    """
    Harmonic measure from infinity of a boundary interval of H minus L-_y,
    normalized as lim pi*h*hm(m + ih); equals the length of g_{L-_y}(I)

    :param boundary_interval: (pair of complex) endpoints on the boundary
    """
    a, b = boundary_interval
    return abs(boundary_preimage(y, b) - boundary_preimage(y, a))


def strip_hit_criterion(min_driving, y):
    """
    True when a driving minimum below y - 2 on [0, pi^2/4] forces the hull to
    meet L-_y by time pi^2/4
    """
    return min_driving < y - 2.0


def boundary_order(y, w):
    """
    Monotone coordinate along the boundary of H minus L-_y, running from the far
    end of the top ray, down the side and out along the real ray
    """
    w = complex(w)
    arc = boundary_arc(y, w, tol=1e-9)
    _assert(arc is not None, f"{w} is not a boundary point", DomainError)
    if arc == "real":
        return w.real - y
    if arc == "side":
        return -w.imag
    return (w.real - y) - STRIP_HEIGHT


def _distance_to_strip_boundary(y, z):
    """Distance from z to the boundary of H minus L-_y and the nearest such point"""
    x, t = z.real, z.imag
    # real ray [y, inf)
    real_point = np.where(x >= y, x, y) + 0j
    # vertical side y + i[0, pi]
    side_point = y + 1j * np.clip(t, 0.0, STRIP_HEIGHT)
    # top ray (-inf, y] + i*pi
    top_point = np.minimum(x, y) + 1j * STRIP_HEIGHT
    candidates = np.stack([real_point, side_point, top_point])
    distances = np.abs(candidates - z[None, :])
    nearest = np.argmin(distances, axis=0)
    index = np.arange(z.size)
    return distances[nearest, index], candidates[nearest, index]


def brownian_hm_estimate(
    y, boundary_interval, h=200.0, walkers=100000, seed=0, m=None, shell=1e-4,
    max_rounds=100000,
):
    """
    Monte Carlo oracle for hm_infinity: start planar Brownian motions at m + ih and
    return (pi*h*hit fraction, its standard error)

    Walkers above the line Im = pi jump straight to that line with the exact Cauchy
    hitting law; elsewhere they walk on spheres until within `shell` of the boundary.
    """
    _assert(h > STRIP_HEIGHT, "Start height must exceed the strip height", DomainError)
    _assert(walkers >= 1, "Need at least one walker")
    lo, hi = sorted(boundary_order(y, point) for point in boundary_interval)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    start = (y if m is None else m) + 1j * h
    z = np.full(walkers, start, dtype=complex)
    active = np.ones(walkers, dtype=bool)
    hits = np.zeros(walkers, dtype=bool)

    for _ in range(max_rounds):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        current = z[idx]
        above = current.imag > STRIP_HEIGHT
        if np.any(above):
            up = idx[above]
            heights = z[up].imag - STRIP_HEIGHT
            landing = z[up].real + heights * np.tan(np.pi * (rng.random(up.size) - 0.5))
            on_top = landing <= y
            z[up] = landing + 1j * STRIP_HEIGHT
            absorbed = up[on_top]
            active[absorbed] = False
            hits[absorbed] = [
                lo <= boundary_order(y, point) <= hi for point in z[absorbed]
            ]
        below = idx[~above]
        if below.size == 0:
            continue
        distance, nearest = _distance_to_strip_boundary(y, z[below])
        close = distance < shell
        if np.any(close):
            absorbed = below[close]
            active[absorbed] = False
            hits[absorbed] = [
                lo <= boundary_order(y, point) <= hi for point in nearest[close]
            ]
        moving = below[~close]
        angles = 2.0 * np.pi * rng.random(moving.size)
        z[moving] = z[moving] + distance[~close] * np.exp(1j * angles)
    else:
        logger.warning(
            "brownian_hm_estimate: %d walkers still active after %d rounds",
            int(active.sum()),
            max_rounds,
        )

    fraction = hits.sum() / walkers
    estimate = math.pi * h * fraction
    stderr = math.pi * h * math.sqrt(max(fraction * (1 - fraction), 0.0) / walkers)
    logger.info("brownian_hm_estimate: %d/%d hits", int(hits.sum()), walkers)
    return estimate, stderr


###
# Self-test suite
###
@dataclass(frozen=True)
class MapCheck:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance

    def to_dict(self):
        return {
            "name": self.name,
            "error": self.error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _selftest_grid(points):
    side = max(2, int(round(math.sqrt(points / 2))))
    re = np.linspace(-5.0, 5.0, 2 * side)
    im = np.linspace(0.1, 5.0, int(math.ceil(points / (2 * side))))
    return (re[:, None] + 1j * im[None, :]).reshape(-1)[:points]


def map_selftest(points=200, tol=1e-8, h=1e-6):
    """
    Identities every map in this module must satisfy

    :return: (list of MapCheck)
    """
    grid = _selftest_grid(points)
    checks = [
        MapCheck("halfstrip_f(1) = 0", abs(complex(halfstrip_f(0.0, 1.0))), tol),
        MapCheck(
            "halfstrip_f(-1) = i pi",
            abs(complex(halfstrip_f(0.0, -1.0)) - 1j * math.pi),
            tol,
        ),
    ]

    images = halfstrip_f(0.0, grid)
    back = halfstrip_g(0.0, images)
    scale = np.maximum(1.0, np.abs(grid))
    checks.append(
        MapCheck(
            f"halfstrip_g(halfstrip_f(z)) = z on {grid.size} points",
            float(np.max(np.abs(back - grid) / scale)),
            tol,
        )
    )

    numeric = (halfstrip_f(0.0, grid + h) - halfstrip_f(0.0, grid - h)) / (2 * h)
    exact = halfstrip_fprime(0.0, grid)
    checks.append(
        MapCheck(
            "halfstrip_fprime against central differences",
            float(np.max(np.abs(numeric - exact) / np.maximum(1.0, np.abs(exact)))),
            tol,
        )
    )

    checks.append(
        MapCheck(
            "semidisc_g(2i) = 1.5i",
            abs(complex(semidisc_g(SemiDisc(0.0, 1.0), 2j)) - 1.5j),
            tol,
        )
    )
    checks.append(
        MapCheck(
            "slit_f(slit_g(z)) = z",
            float(np.max(np.abs(slit_f(0.3, 0.01, slit_g(0.3, 0.01, grid)) - grid))),
            tol,
        )
    )
    checks.append(
        MapCheck(
            "hm_infinity([y, y + i pi]) = 2",
            abs(hm_infinity(-0.5, (-0.5 + 0j, -0.5 + 1j * STRIP_HEIGHT)) - 2.0),
            tol,
        )
    )
    for check in checks:
        logger.info("map_selftest: %s error %.3g", check.name, check.error)
    return checks


def phi_bound_check(k_max=5, points=1000, upper=100.0):
    """
    Count violations of phi^(k)(x) >= x/2 for k <= k_max on x in [6k + 3, upper]

    :return: (dict) k -> number of violations
    """
    violations = {}
    for k in range(1, k_max + 1):
        xs = np.linspace(6 * k + 3, upper, points)
        violations[k] = sum(1 for x in xs if phi_iter(k, x) < x / 2)
        logger.info("phi_bound_check: k=%d %d violations", k, violations[k])
    return violations
