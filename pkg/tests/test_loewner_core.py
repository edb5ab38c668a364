import math
from dataclasses import replace

import numpy as np
import pytest

from sle_armlab.conformal_maps import SemiDisc, semidisc_g
from sle_armlab.exceptions import DomainError, StepSizeError, SwallowedMarkError
from sle_armlab.loewner_core import (
    DiscretizedChain,
    FlowState,
    StepPolicy,
    adaptive_dt,
    advance_flow,
    arc_containment_check,
    ball_containment_check,
    conformal_radius_proxy,
    hcap_estimate,
    hcap_of_map,
    hull_geometry_check,
    inverse_map,
    j_observable,
    map_derivative,
    map_points,
    phi_contraction_check,
    strip_lower_check,
    trace_polyline,
    trace_tip,
)


def zero_driving_flow(x, horizon, dt):
    state = FlowState.initial([x])
    for _ in range(int(round(horizon / dt))):
        state = advance_flow(state, 0.0, dt)
    return state


def zero_driving_chain(horizon, steps):
    times = np.linspace(0.0, horizon, steps + 1)
    return DiscretizedChain.from_driving(times, np.zeros(steps + 1))


def flow_errors(x, horizon, dt):
    point = zero_driving_flow(x, horizon, dt).marked_point(0)
    exact = math.sqrt(x * x + 4 * horizon)
    return abs(point.image / exact - 1), abs(point.deriv / (x / exact) - 1)


def test_step_policy_validation():
    with pytest.raises(ValueError):
        StepPolicy(dt_max=0)
    with pytest.raises(ValueError):
        StepPolicy(hit_fraction=1.5)
    assert StepPolicy().to_dict()["c_step"] == StepPolicy().c_step


def test_initial_state():
    state = FlowState.initial([1.0, 2.0, -3.0], y=-1.0, paths=4)
    assert state.paths == 4
    assert state.image.shape == (4, 3)
    assert state.mark_index(2.0) == 1
    point = state.marked_point(2, path=3)
    assert point.x0 == -3.0 and point.deriv == 1.0 and not point.swallowed
    assert point.swallow_time is None
    assert not state.y_swallowed.any()
    assert FlowState.initial([1.0]).y_swallowed.all()


def test_initial_state_rejects_bad_marks():
    with pytest.raises(DomainError):
        FlowState.initial([0.0])
    with pytest.raises(DomainError):
        FlowState.initial([-0.5], y=-1.0)
    with pytest.raises(DomainError):
        FlowState.initial([1.0], y=0.5)
    with pytest.raises(DomainError):
        FlowState.initial([1.0]).mark_index(2.0)


def test_zero_driving_matches_closed_form():
    image_error, deriv_error = flow_errors(1.0, 0.25, 1e-4)
    assert image_error <= 1e-3
    assert deriv_error <= 1e-3


def test_zero_driving_first_order_convergence():
    coarse = flow_errors(1.0, 0.25, 2e-4)
    fine = flow_errors(1.0, 0.25, 1e-4)
    for before, after in zip(coarse, fine):
        assert 1.6 < before / after < 2.4


def test_upsilon_nonincreasing_and_j_in_unit_interval():
    state = FlowState.initial([1.0])
    assert conformal_radius_proxy(state) == 1.0
    assert j_observable(state) == 1.0
    rng = np.random.Generator(np.random.Philox(3))
    previous = 1.0
    for _ in range(200):
        w_next = state.w + math.sqrt(6 * 1e-4) * rng.standard_normal(1)
        state = advance_flow(state, w_next, 1e-4)
        if state.swallowed[0, 0]:
            break
        upsilon = conformal_radius_proxy(state)
        assert upsilon <= previous + 1e-12
        assert 0 < j_observable(state) <= 1 + 1e-12
        previous = upsilon


def test_swallowed_mark_follows_rightmost_point():
    state = FlowState.initial([1.0])
    state = advance_flow(state, 1.5, 1e-6)
    point = state.marked_point(0)
    assert point.swallowed
    assert point.swallow_time == pytest.approx(1e-6)
    assert point.image == state.o_right[0] == 1.5
    with pytest.raises(SwallowedMarkError):
        conformal_radius_proxy(state)
    with pytest.raises(SwallowedMarkError):
        j_observable(state)


def test_left_mark_swallowed_with_tracked_point():
    state = FlowState.initial([-1.0], y=-1.0)
    state = advance_flow(state, -1.2, 1e-6)
    assert state.y_swallowed[0]
    assert state.swallowed[0, 0]
    assert state.image[0, 0] == state.y_left[0]


def test_zero_dt_leaves_path_unchanged():
    state = FlowState.initial([1.0], paths=2)
    stepped = advance_flow(state, np.array([0.3, 0.3]), np.array([0.0, 1e-3]))
    assert stepped.w[0] == 0.0 and stepped.t[0] == 0.0
    assert stepped.image[0, 0] == 1.0
    assert stepped.w[1] == 0.3 and stepped.t[1] == 1e-3
    with pytest.raises(ValueError):
        advance_flow(state, 0.0, -1e-3)


def test_batch_matches_single_paths():
    rng = np.random.Generator(np.random.Philox(8))
    increments = 0.05 * rng.standard_normal((50, 2))
    batch = FlowState.initial([1.0, -2.0], y=-2.0, paths=2)
    singles = [FlowState.initial([1.0, -2.0], y=-2.0) for _ in range(2)]
    for step in increments:
        batch = advance_flow(batch, batch.w + step, 1e-3)
        singles = [
            advance_flow(s, s.w + step[i], 1e-3) for i, s in enumerate(singles)
        ]
    for i, single in enumerate(singles):
        assert np.allclose(batch.select(np.array([i])).image, single.image)
        assert np.allclose(batch.deriv[i], single.deriv[0])


def test_non_finite_step_raises():
    state = replace(FlowState.initial([1.0]), w=np.array([1.0]))
    with pytest.raises(StepSizeError):
        advance_flow(state, 1.0, 1e-3)


def test_adaptive_dt():
    policy = StepPolicy(dt_max=1e-3, c_step=0.01)
    assert adaptive_dt(FlowState.initial([1.0]), 6.0, policy)[0] == 1e-3
    small = adaptive_dt(FlowState.initial([0.1]), 6.0, policy)[0]
    assert small == pytest.approx(0.01 * 0.01 / 6.0)
    extra = adaptive_dt(FlowState.initial([1.0]), 6.0, policy, np.array([0.05]))
    assert extra[0] == pytest.approx(0.01 * 0.0025 / 6.0)


def test_zero_driving_trace_is_vertical_slit():
    chain = zero_driving_chain(0.25, 40)
    steps, points = trace_polyline(chain)
    assert np.allclose(points.real, 0.0, atol=1e-12)
    assert np.allclose(points.imag, 2 * np.sqrt(chain.times[steps]), atol=1e-12)
    assert trace_tip(chain, 40) == pytest.approx(1j)
    assert trace_tip(chain, 0) == 0j
    skipped_steps, skipped = trace_polyline(chain, k_skip=7)
    assert skipped_steps[-1] == 40
    assert np.allclose(skipped, points[skipped_steps])


def test_chain_maps_match_closed_form():
    chain = zero_driving_chain(0.5, 25)
    x = np.array([1.0, 3.0, -2.0])
    assert np.allclose(map_points(chain, x + 0j).real, np.sign(x) * np.sqrt(x * x + 2))
    expected = np.abs(x) / np.sqrt(x * x + 2)
    assert np.allclose(map_derivative(chain, x + 0j).real, expected)
    z = np.array([0.5 + 1j, -2 + 0.1j, 3j])
    assert np.allclose(inverse_map(chain, map_points(chain, z)), z)
    lower = map_points(chain, np.conj(z))
    assert np.allclose(lower, np.conj(map_points(chain, z)))


def test_hcap():
    chain = zero_driving_chain(0.3, 10)
    assert hcap_estimate(chain) == pytest.approx(2 * chain.total_time, rel=1e-5)
    assert hcap_estimate(DiscretizedChain.empty()) == 0.0
    disc = SemiDisc(0.0, 0.7)
    assert hcap_of_map(lambda z: semidisc_g(disc, z), 1e3) == pytest.approx(0.49)


def test_chain_validation():
    with pytest.raises(ValueError):
        DiscretizedChain(np.array([0.1, 0.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        DiscretizedChain(np.array([0.1]), np.zeros(2), np.zeros(2))
    chain = zero_driving_chain(1.0, 10)
    assert len(chain.head(4)) == 4
    assert chain.head(4).total_time == pytest.approx(0.4)


def test_hull_geometry_on_sampled_chain():
    rng = np.random.Generator(np.random.Philox(21))
    times = np.linspace(0.0, 0.5, 501)
    w = np.concatenate([[0.0], np.cumsum(np.sqrt(6 * 1e-3) * rng.standard_normal(500))])
    ok, ratio = hull_geometry_check(DiscretizedChain.from_driving(times, w))
    assert ok
    assert 0 < ratio <= 1 + 1e-9
    ok, ratio = hull_geometry_check(zero_driving_chain(0.5, 10))
    assert ok and ratio == pytest.approx(1.0)


def test_containment_bounds_on_small_hull():
    chain = zero_driving_chain(0.01, 20)
    assert arc_containment_check(chain, 1.0, 0.1) <= 1.0
    assert arc_containment_check(chain, 0.05, 0.1) is None
    assert ball_containment_check(chain, 2 + 2j, 0.05) <= 1.0
    assert ball_containment_check(chain, 0.2j, 0.05) is None


def test_strip_bounds_on_small_hull():
    chain = zero_driving_chain(0.01, 20)
    assert strip_lower_check(chain, 0.0, 0.5, -1.0, 1.0) == 0
    assert strip_lower_check(chain, 3.0, 0.5, -1.0, 1.0) is None
    assert phi_contraction_check(chain, 5.0, -1.0) >= 0
    assert phi_contraction_check(chain, -0.5, -1.0) is None
