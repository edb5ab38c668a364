"""
Nested crosscut configurations for the comparison principle

A fixture is a curve (polyline from a boundary point) with an outer and an inner
pair of crosscuts: concentric upper semicircles, the inner pair drawn with the
larger radii so that it separates the two outer ones from each other.
"""
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .crossing_events import Crosscut, semicircle_crosscut
from .exceptions import DomainError
from .utils import _assert

logger = logging.getLogger(__name__)

_RANDOM_STEP_TRIES = 200


@dataclass(frozen=True)
class CrosscutFixture:
    curve: np.ndarray
    outer: tuple
    inner: tuple
    expected: tuple = None
    name: str = ""

    def to_dict(self):
        def points(cut):
            return [[float(p.real), float(p.imag)] for p in cut.points]

        return {
            "name": self.name,
            "curve": [[float(p.real), float(p.imag)] for p in self.curve],
            "outer": [points(cut) for cut in self.outer],
            "inner": [points(cut) for cut in self.inner],
            "expected": list(self.expected) if self.expected is not None else None,
        }

    @classmethod
    def from_dict(cls, data):
        def cut(points):
            return Crosscut(np.array([complex(a, b) for a, b in points]))

        expected = data.get("expected")
        return cls(
            curve=np.array([complex(a, b) for a, b in data["curve"]]),
            outer=tuple(cut(p) for p in data["outer"]),
            inner=tuple(cut(p) for p in data["inner"]),
            expected=tuple(expected) if expected is not None else None,
            name=data.get("name", ""),
        )


def _polar(center, radius, degrees):
    angle = math.radians(degrees)
    return center + radius * complex(math.cos(angle), math.sin(angle))


def hand_built_fixture():
    """
    Hand-built configuration with 2 well-oriented crossings of the outer pair and
    5 of the inner pair

    Left semicircles sit about 4, right ones about 12, radii 1 (outer) and 2
    (inner). Left cuts run left to right, right cuts right to left.
    """
    left, right = 4.0, 12.0

    def pl(radius, degrees):
        return _polar(left, radius, degrees)

    def pr(radius, degrees):
        return _polar(right, radius, degrees)

    curve = [0j]
    # dip into both left balls, then both right balls
    curve += [pl(2.5, 150), pl(0.5, 150), pl(0.5, 120), pl(2.5, 120)]
    curve += [complex(pl(2.5, 120).real, 5.0), 15 + 5j]
    curve += [pr(2.5, 30), pr(0.5, 30), pr(0.5, 60), pr(2.5, 60)]
    curve += [complex(pr(2.5, 60).real, 3.5), 4 + 3.5j]
    # three more dips reaching only the inner balls
    curve += [pl(2.5, 90), pl(1.5, 90), pl(1.5, 80), pl(2.5, 80)]
    curve += [complex(pl(2.5, 80).real, 3.0), 12 + 3.0j]
    curve += [pr(2.5, 90), pr(1.5, 90), pr(1.5, 100), pr(2.5, 100)]
    curve += [complex(pr(2.5, 100).real, 2.75), complex(pl(2.5, 60).real, 2.75)]
    curve += [pl(2.5, 60), pl(1.5, 60), pl(1.5, 50), pl(2.5, 50)]

    outer = (
        semicircle_crosscut(left, 1.0),
        semicircle_crosscut(right, 1.0, reversed=True),
    )
    inner = (
        semicircle_crosscut(left, 2.0),
        semicircle_crosscut(right, 2.0, reversed=True),
    )
    return CrosscutFixture(
        curve=np.array(curve),
        outer=outer,
        inner=inner,
        expected=(2, 5),
        name="hand_built",
    )


def _segments_intersect(a, b, c, d):
    """Proper or touching intersection of segments ab and cd"""

    def orient(p, q, r):
        return (q - p).real * (r - p).imag - (q - p).imag * (r - p).real

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 <= 0) and (o3 * o4 <= 0)


def random_self_avoiding_curve(rng, steps, box, step_scale=0.6):
    """
    Polyline from 0 into H that never meets itself and stays in Im > 0

    :param box: (tuple) (max real part, max imaginary part)
    """
    points = [0j, complex(0.0, step_scale)]
    for _ in range(steps):
        for _try in range(_RANDOM_STEP_TRIES):
            angle = rng.uniform(0.0, 2 * math.pi)
            length = step_scale * rng.uniform(0.3, 1.0)
            candidate = points[-1] + length * complex(math.cos(angle), math.sin(angle))
            inside = 0.0 < candidate.imag <= box[1] and -1.0 <= candidate.real <= box[0]
            if not inside:
                continue
            last = points[-1]
            # the segment just before shares an endpoint, skip it
            if any(
                _segments_intersect(points[i], points[i + 1], last, candidate)
                for i in range(len(points) - 2)
            ):
                continue
            points.append(candidate)
            break
        else:
            logger.debug(
                "random_self_avoiding_curve: stuck after %d points", len(points)
            )
            break
    return np.array(points)


def random_fixture(rng, steps=150):
    """
    Random nested configuration: concentric semicircle pairs about a left and a
    right center with disjoint inner balls, the start point 0 to the left of
    everything, and a random self-avoiding curve
    """
    left = rng.uniform(3.0, 5.0)
    r_left = rng.uniform(0.4, 1.0)
    r_left_inner = r_left + rng.uniform(0.3, 1.5)
    _assert(
        left - r_left_inner > 0, "Start point must lie left of the balls", DomainError
    )
    right = left + r_left_inner + rng.uniform(0.5, 2.0)
    r_right_inner = rng.uniform(0.5, right - left - r_left_inner + 0.5)
    right += r_right_inner
    r_right = r_right_inner * rng.uniform(0.3, 0.8)

    outer = (
        semicircle_crosscut(left, r_left),
        semicircle_crosscut(right, r_right, reversed=True),
    )
    inner = (
        semicircle_crosscut(left, r_left_inner),
        semicircle_crosscut(right, r_right_inner, reversed=True),
    )
    box = (right + r_right_inner + 2.0, max(r_left_inner, r_right_inner) + 2.0)
    curve = random_self_avoiding_curve(rng, steps, box)
    return CrosscutFixture(curve=curve, outer=outer, inner=inner, name="random")


def fixture_corpus(count, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    return [random_fixture(rng) for _ in range(count)]


def save_fixtures(path, fixtures):
    with open(path, "w") as fp:
        json.dump(
            [fixture.to_dict() for fixture in fixtures], fp, sort_keys=True, indent=2
        )


def load_fixtures(path):
    with open(path) as fp:
        return [CrosscutFixture.from_dict(data) for data in json.load(fp)]
