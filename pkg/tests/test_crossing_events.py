import math
from unittest.mock import patch

import numpy as np
import pytest

from sle_armlab import crossing_events
from sle_armlab.crossing_events import (
    HORIZON,
    SWALLOWED_X,
    TARGET_REACHED,
    CrossingBatch,
    CrossingRecord,
    EventSpec,
    LegKind,
    RenewalMode,
    Variant,
    comparison_check,
    curve_crosscut_events,
    detect_crossings_batch,
    detect_crossings_gt4,
    detect_Hpi,
    detect_trace_crossings,
    renewal_leg,
    scan_well_oriented,
    semicircle_crosscut,
    strip_crosscut,
    variant_legs,
    well_oriented_count,
)
from sle_armlab.crosscut_fixtures import hand_built_fixture
from sle_armlab.exceptions import DomainError, RegimeError
from sle_armlab.loewner_core import DiscretizedChain, FlowState, StepPolicy
from sle_armlab.sle_driver import (
    DriverConfig,
    DriverPath,
    DrivingProcess,
    MartingaleSpec,
    ReplayProcess,
    block_rng,
    sample_sle,
)

B, L = LegKind.BALL, LegKind.LINE


def test_variant_legs():
    assert variant_legs(Variant.H_ODD, 2) == [B, L, B]
    assert variant_legs("H_even", 2) == [L, B, L, B]
    assert variant_legs("Hhat_even", 1) == [B, L]
    assert variant_legs("Hhat_odd", 2) == [L, B, L]
    assert variant_legs("Hpi_odd", 1) == [B]
    assert variant_legs("Hpi_even", 1) == [L, B]


def test_event_spec_validation():
    with pytest.raises(RegimeError):
        EventSpec("H_odd", 1, 0.1, 1.0, 0.0, 4.0)
    with pytest.raises(RegimeError):
        EventSpec("Hpi_odd", 1, 0.1, 1.0, 0.0, 6.0)
    with pytest.raises(DomainError):
        EventSpec("H_odd", 1, 2.0, 1.0, 0.0, 6.0)
    with pytest.raises(DomainError):
        EventSpec("H_odd", 1, 0.1, 1.0, 0.5, 6.0)
    with pytest.raises(ValueError):
        EventSpec("H_odd", 0, 0.1, 1.0, 0.0, 6.0)
    with pytest.raises(ValueError):
        EventSpec("H_middle", 1, 0.1, 1.0, 0.0, 6.0)


def test_event_spec_helpers():
    spec = EventSpec("Hhat_odd", 2, 0.1, 1.0, -1.0, 6.0)

    assert spec.variant is Variant.HHAT_ODD
    assert spec.legs == [L, B, L]
    assert spec.default_horizon == pytest.approx(200.0)
    assert spec.with_epsilon(0.05).epsilon == 0.05
    assert spec.with_epsilon(0.05, x=0.5).x == 0.5
    assert spec.to_dict() == {
        "variant": "Hhat_odd",
        "n": 2,
        "epsilon": 0.1,
        "x": 1.0,
        "y": -1.0,
        "kappa": 6.0,
        "renewal": "identity",
    }


def test_crossing_record_terminal():
    with pytest.raises(ValueError):
        CrossingRecord(success=False, leg_times=[], terminal="lost")


def test_crossing_batch_summaries():
    batch = CrossingBatch(
        success=np.array([True, False, False]),
        terminal=np.array([TARGET_REACHED, SWALLOWED_X, HORIZON], dtype=object),
        leg_times=np.array([[0.5], [np.nan], [np.nan]]),
        weights=np.array([2.0, 1.0, 1.0]),
    )

    assert batch.hits == 1
    assert batch.horizon_failures == 1
    assert batch.weighted_hits().tolist() == [2.0, 0.0, 0.0]
    records = batch.records()
    assert records[0].leg_times == [0.5]
    assert records[1].leg_times == []
    assert records[2].terminal == HORIZON


def test_semicircle_and_strip_crosscuts():
    cut = semicircle_crosscut(4.0, 1.0)
    back = semicircle_crosscut(4.0, 1.0, reversed=True)

    assert cut.points[0] == 3.0
    assert cut.points[-1] == 5.0
    assert np.all(cut.points.imag >= 0)
    assert back.flipped
    assert back.points[0] == 5.0
    with pytest.raises(DomainError):
        semicircle_crosscut(0.0, 0.0)

    strip = strip_crosscut(-1.0, height=2.0, cutoff=-20.0)
    assert strip.points.tolist() == [-1 + 0j, -1 + 2j, -20 + 2j]
    assert strip_crosscut(-2.0).points[-1].real == pytest.approx(-22.0)
    with pytest.raises(DomainError):
        strip_crosscut(0.0, cutoff=1.0)


def test_curve_crosscut_events_single_hit():
    curve = np.array([4.3 + 2j, 4.3 + 0.5j])
    crosscut = semicircle_crosscut(4.0, 1.0)
    times, params, overlaps = curve_crosscut_events(curve, crosscut)

    theta = math.acos(0.3)
    assert overlaps == 0
    assert times.size == 1
    assert params[0] == pytest.approx(1 - theta / math.pi, abs=1e-3)
    assert times[0] == pytest.approx((2 - math.sin(theta)) / 1.5, abs=1e-3)


def test_hand_built_counts():
    fixture = hand_built_fixture()
    verdict = comparison_check(fixture.curve, fixture.outer, fixture.inner)

    assert (verdict.outer_count, verdict.inner_count) == fixture.expected == (2, 5)
    assert verdict.consistent
    count, times = well_oriented_count(fixture.curve, *fixture.inner, max_n=3)
    assert count == 3
    assert times == sorted(times)


def test_crossings_must_alternate_starting_left():
    left = semicircle_crosscut(4.0, 1.0)
    right = semicircle_crosscut(12.0, 1.0, reversed=True)
    # visits the right ball first, then the left one
    curve = np.array(
        [0.5j, 3j, 12.2 + 3j, 12.2 + 0.5j, 12.2 + 3j, 4.2 + 3j, 4.2 + 0.5j]
    )

    state = scan_well_oriented(curve, left, right)

    assert state.count == 1
    assert state.next_target == 1
    assert state.r_plus > 0
    assert state.diagnostics["events"] == 3


def test_detect_batch_refuses_trace_events():
    spec = EventSpec("Hpi_odd", 1, 0.1, 1.0, 0.0, 2.0)
    process = DrivingProcess(DriverConfig(kappa=2), 2, block_rng(0, 0), 1.0)
    with pytest.raises(RegimeError):
        detect_crossings_batch(process, spec)


def test_ball_leg_met_at_start():
    spec = EventSpec("H_odd", 1, 1.0, 1.0, 0.0, 6.0)
    process = DrivingProcess(DriverConfig(kappa=6), 5, block_rng(0, 0), 1.0)
    martingale = MartingaleSpec(kappa=6, rho_right=-2.0, x_right=1.0)

    batch = detect_crossings_batch(process, spec, martingale=martingale)

    assert batch.hits == 5
    assert np.all(batch.leg_times[:, 0] == 0)
    assert batch.weights == pytest.approx(np.ones(5))


def test_line_then_ball_legs():
    spec = EventSpec("H_even", 1, 1.0, 1.0, 0.0, 6.0)
    policy = StepPolicy(dt_max=1e-2)
    config = DriverConfig(kappa=6, dt_policy=policy)
    process = DrivingProcess(config, 4, block_rng(1, 0), 1.0)

    batch = detect_crossings_batch(process, spec)

    assert batch.hits == 4
    assert np.all(batch.leg_times[:, 0] == 0)
    assert np.all(batch.leg_times[:, 1] > 0)
    assert set(batch.terminal) == {TARGET_REACHED}


def test_detect_batch_small_random_run():
    spec = EventSpec("H_odd", 1, 0.5, 1.0, 0.0, 6.0)
    policy = StepPolicy(dt_max=1e-2, c_step=0.1, reflect_floor=0.2)
    config = DriverConfig(kappa=6, seed=4, dt_policy=policy)

    def run():
        process = DrivingProcess(config, 40, block_rng(4, 0), 0.5)
        return detect_crossings_batch(process, spec)

    batch = run()
    again = run()

    assert np.array_equal(batch.success, again.success)
    assert set(batch.terminal) <= {TARGET_REACHED, SWALLOWED_X, HORIZON}
    swallowed = int(np.count_nonzero(batch.terminal == SWALLOWED_X))
    assert batch.hits + swallowed + batch.horizon_failures == 40
    hit_times = batch.leg_times[batch.success, 0]
    assert np.all((hit_times >= 0) & (hit_times <= 0.5))
    assert np.all(np.isnan(batch.leg_times[~batch.success, 0]))


def test_detect_gt4_on_sampled_path():
    config = DriverConfig(kappa=6, seed=2, dt_policy=StepPolicy(dt_max=1e-2))
    path = sample_sle(config, 0.2)
    record = detect_crossings_gt4(path, EventSpec("H_odd", 1, 1.0, 1.0, 0.0, 6.0))

    assert record.success
    assert record.terminal == TARGET_REACHED
    assert record.leg_times == [0.0]


def test_renewal_leg_modes():
    spec = EventSpec("H_odd", 1, 0.5, 2.0, 0.0, 6.0)
    state = FlowState.initial([2.0])

    outcome, renewed = renewal_leg(spec, state, "ball")
    assert outcome.kind is B
    assert outcome.completed
    assert outcome.time == 0
    assert renewed.epsilon == pytest.approx(4.0)
    assert renewed.x == pytest.approx(2.0)
    assert renewed.y == 0

    _, lower = renewal_leg(spec, state, L, mode=RenewalMode.LOWER)
    _, same = renewal_leg(spec, state, L, mode=RenewalMode.IDENTITY)
    assert lower.epsilon == pytest.approx(0.125)
    assert same.epsilon == pytest.approx(0.5)

    _, named = renewal_leg(spec, state, L, mode="lower", epsilon=2.0)
    assert named.epsilon == pytest.approx(0.5)


def test_event_spec_renewal_modes():
    spec = EventSpec("H_odd", 2, 0.1, 1.0, 0.0, 6.0, renewal="upper")

    assert spec.renewal is RenewalMode.UPPER
    assert spec.with_epsilon(0.05).renewal is RenewalMode.UPPER
    assert spec.to_dict()["renewal"] == "upper"
    assert EventSpec(**spec.to_dict()) == spec
    assert EventSpec("H_odd", 2, 0.1, 1.0, 0.0, 6.0, 0.25).renewal is RenewalMode.LOWER
    with pytest.raises(DomainError):
        EventSpec("H_odd", 2, 0.1, 1.0, 0.0, 6.0, renewal="sideways")


def test_first_ball_leg_after_line_uses_upsilon():
    # vertical slit: Upsilon = 1 + 4t - 2 sqrt(t (1 + 4t)) drops below 0.6 at t = 0.2
    times = np.linspace(0.0, 1.0, 201)
    path = DriverPath(times=times, w=np.zeros_like(times))
    spec = EventSpec("H_even", 1, 0.6, 1.0, 0.0, 6.0)

    batch = detect_crossings_batch(ReplayProcess(path), spec, StepPolicy())

    assert batch.success[0]
    assert batch.leg_times[0, 0] == 0
    # the mapped-ball threshold would already hold on the first step
    assert 0.1 < batch.leg_times[0, 1] < 0.5


def test_renewal_mode_is_applied_at_leg_ends():
    spec = EventSpec("H_odd", 2, 1.0, 1.0, 0.0, 6.0, renewal=RenewalMode.UPPER)
    policy = StepPolicy(dt_max=1e-2)
    config = DriverConfig(kappa=6, dt_policy=policy)

    with patch.object(
        crossing_events, "renewal_leg", wraps=crossing_events.renewal_leg
    ) as renewal:
        detect_crossings_batch(DrivingProcess(config, 3, block_rng(1, 0), 0.1), spec)

    # Upsilon starts at x, so the opening ball leg ends at t = 0 on every path
    first = [c for c in renewal.call_args_list if c.args[2] is B]
    assert len(first) >= 3
    assert all(c.args[3] is RenewalMode.UPPER for c in first)
    assert sorted(int(c.args[4]) for c in first[:3]) == [0, 1, 2]
    assert all(c.args[5] == 1.0 for c in first[:3])

    identity = EventSpec("H_odd", 2, 1.0, 1.0, 0.0, 6.0)
    with patch.object(crossing_events, "renewal_leg") as renewal:
        detect_crossings_batch(
            DrivingProcess(config, 3, block_rng(1, 0), 0.1), identity
        )
    renewal.assert_not_called()


def test_renewal_modes_order_the_hits():
    policy = StepPolicy(dt_max=1e-2, c_step=0.1)
    config = DriverConfig(kappa=6, seed=5, dt_policy=policy)

    def run(mode):
        spec = EventSpec("H_odd", 2, 0.5, 1.0, 0.0, 6.0, renewal=mode)
        process = DrivingProcess(config, 30, block_rng(5, 0), 0.5)
        return detect_crossings_batch(process, spec)

    lower, same, upper = (run(mode) for mode in ("lower", "identity", "upper"))

    # a larger renewed radius can only end later ball legs sooner
    assert np.all(upper.success >= same.success)
    assert np.all(same.success >= lower.success)
    assert np.array_equal(
        np.isnan(upper.leg_times[:, 0]), np.isnan(lower.leg_times[:, 0])
    )
    both = upper.success & same.success
    assert np.all(upper.leg_times[both] <= same.leg_times[both])


def test_detect_hpi_vertical_slit_misses_ball():
    times = np.linspace(0.0, 0.5, 51)
    chain = DiscretizedChain.from_driving(times, np.zeros_like(times))
    record = detect_Hpi(chain, EventSpec("Hpi_odd", 1, 0.5, 2.0, 0.0, 2.0))

    assert not record.success
    assert record.terminal == HORIZON
    assert record.leg_times == []

    with pytest.raises(RegimeError):
        detect_Hpi(chain, EventSpec("H_odd", 1, 0.5, 2.0, 0.0, 6.0))


def test_trace_crossings_need_kappa_below_8():
    chain = DiscretizedChain.from_driving([0.0, 0.1], [0.0, 0.0])
    with pytest.raises(RegimeError):
        detect_trace_crossings(chain, EventSpec("H_odd", 1, 0.5, 2.0, 0.0, 8.0))
    with pytest.raises(RegimeError):
        detect_trace_crossings(chain, EventSpec("Hpi_odd", 1, 0.5, 2.0, 0.0, 2.0))
