"""Resource grid, rate tracking, slice allocation and audit tests."""

import itertools

import numpy as np
import pytest

from vslice.errors import ContractError
from vslice.scenario import ScenarioConfig
from vslice.sched import (
    OverheadLedger,
    RateTracker,
    ResourceGrid,
    allocate_embb_minmax,
    allocate_urllc,
    check_urllc_priority,
    violation_probability,
)


def cfg(**kw):
    kw.setdefault("num_rsu", 1)
    kw.setdefault("num_urllc", 2)
    kw.setdefault("num_embb", 2)
    kw.setdefault("num_rb", 6)
    kw.setdefault("bandwidth_hz", 1.2e6)
    return ScenarioConfig(**kw)


def fresh_tracker(config):
    return RateTracker(
        config.num_vehicles,
        (config.rate_target_urllc_bps, config.rate_target_embb_bps),
    )


# ---------------------------------------------------------------------------
# ResourceGrid
# ---------------------------------------------------------------------------

def test_grid_starts_empty():
    grid = ResourceGrid(num_rsu=2, num_rb=4, serving={0: 0})
    assert np.all(grid.assign == -1)
    assert list(grid.free_rbs(0)) == [0, 1, 2, 3]


def test_grid_assign_and_query():
    grid = ResourceGrid(num_rsu=1, num_rb=4, serving={0: 0, 1: 0})
    grid.assign_rb(0, 2, 1)
    grid.assign_rb(0, 0, 0)
    assert list(grid.vehicle_rbs(0, 1)) == [2]
    assert list(grid.vehicle_rbs(0, 0)) == [0]
    assert list(grid.free_rbs(0)) == [1, 3]


def test_grid_rejects_double_assignment():
    grid = ResourceGrid(num_rsu=1, num_rb=2, serving={0: 0, 1: 0})
    grid.assign_rb(0, 0, 0)
    with pytest.raises(ContractError):
        grid.assign_rb(0, 0, 1)


def test_grid_rejects_foreign_rsu():
    grid = ResourceGrid(num_rsu=2, num_rb=2, serving={0: 0})
    with pytest.raises(ContractError):
        grid.assign_rb(1, 0, 0)


def test_omega_tensor_matches_assignment():
    grid = ResourceGrid(num_rsu=2, num_rb=3, serving={0: 0, 1: 1})
    grid.assign_rb(0, 1, 0)
    grid.assign_rb(1, 2, 1)
    om = grid.omega(2)
    assert om.shape == (2, 3, 2)
    assert om.sum() == 2
    assert om[0, 1, 0] and om[1, 2, 1]
    # At most one vehicle per block by construction.
    assert np.all(om.sum(axis=2) <= 1)


def test_check_orthogonality_clean_grid():
    grid = ResourceGrid(num_rsu=1, num_rb=3, serving={0: 0, 1: 0})
    grid.assign_rb(0, 0, 0)
    grid.assign_rb(0, 1, 1)
    assert grid.check_orthogonality(2) == []


def test_check_orthogonality_flags_foreign_serving():
    grid = ResourceGrid(num_rsu=2, num_rb=2, serving={0: 0})
    # Bypass assign_rb to plant a corrupt entry.
    grid.assign[1, 0] = 0
    problems = grid.check_orthogonality(1)
    assert any("foreign" in p for p in problems)


# ---------------------------------------------------------------------------
# RateTracker
# ---------------------------------------------------------------------------

def test_tracker_running_mean():
    tr = RateTracker(1, (100.0,))
    tr.update(np.array([50.0]))
    tr.update(np.array([150.0]))
    assert abs(tr.mean_bps[0] - 100.0) < 1e-9
    tr.update(np.array([100.0]))
    assert abs(tr.mean_bps[0] - 100.0) < 1e-9


def test_tracker_violation_counts_running_average():
    # Violations count TTIs where the running mean sits at or below threshold,
    # not the instantaneous rate.
    tr = RateTracker(1, (100.0,))
    tr.update(np.array([0.0]))      # mean 0      -> violation
    tr.update(np.array([400.0]))    # mean 200    -> ok
    tr.update(np.array([0.0]))      # mean 133.3  -> ok
    assert violation_probability(tr, 0, 100.0) == pytest.approx(1.0 / 3.0)


def test_tracker_always_above_target_never_violates():
    tr = RateTracker(1, (100.0,))
    for _ in range(20):
        tr.update(np.array([150.0]))
    assert violation_probability(tr, 0, 100.0) == 0.0


def test_tracker_always_below_target_always_violates():
    tr = RateTracker(1, (100.0,))
    for _ in range(20):
        tr.update(np.array([80.0]))
    assert violation_probability(tr, 0, 100.0) == 1.0


def test_tracker_boundary_counts_as_violation():
    tr = RateTracker(1, (100.0,))
    tr.update(np.array([100.0]))
    assert violation_probability(tr, 0, 100.0) == 1.0


def test_tracker_rejects_shape_mismatch():
    tr = RateTracker(2, (100.0,))
    with pytest.raises(ContractError):
        tr.update(np.array([1.0]))


def test_tracker_rejects_untracked_threshold():
    tr = RateTracker(1, (100.0,))
    tr.update(np.array([1.0]))
    with pytest.raises(ContractError):
        tr.violation_probability(0, 999.0)


def test_tracker_rejects_empty_history():
    tr = RateTracker(1, (100.0,))
    with pytest.raises(ContractError):
        tr.violation_probability(0, 100.0)


def test_tracker_moment_accumulators():
    tr = RateTracker(1, (100.0,))
    tr.update(np.array([10.0]))
    tr.update(np.array([30.0]))
    assert tr.rate_sum[0] == 40.0
    assert tr.rate_sq_sum[0] == 100.0 + 900.0


# ---------------------------------------------------------------------------
# OverheadLedger
# ---------------------------------------------------------------------------

def test_ledger_reduction_half_when_half_report():
    led = OverheadLedger()
    for _ in range(100):
        led.record(4, 8)
    assert led.reduction == 0.5


def test_ledger_full_reporting_zero_reduction():
    led = OverheadLedger()
    led.record(8, 8)
    assert led.reduction == 0.0


def test_ledger_empty_is_zero():
    assert OverheadLedger().reduction == 0.0


def test_ledger_rejects_bad_counts():
    led = OverheadLedger()
    with pytest.raises(ContractError):
        led.record(9, 8)
    with pytest.raises(ContractError):
        led.record(-1, 8)


# ---------------------------------------------------------------------------
# URLLC allocation
# ---------------------------------------------------------------------------

def brute_min_blocks(rates, stop):
    """Smallest number of blocks whose summed rate exceeds stop, by subsets."""
    best = None
    for r in range(len(rates) + 1):
        for combo in itertools.combinations(range(len(rates)), r):
            if sum(rates[list(combo)]) > stop:
                return r
    return len(rates)


def test_urllc_takes_minimal_block_count():
    config = cfg(num_urllc=1, num_embb=0, num_rb=6, bandwidth_hz=1.2e6)
    tr = fresh_tracker(config)
    rates = np.array([50e3, 20e3, 90e3, 10e3, 60e3, 30e3])
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0})
    allocate_urllc([0], {0: rates}, tr, 0.01, grid, config)
    got = grid.vehicle_rbs(0, 0)
    stop = config.rate_target_urllc_bps * 1.05
    want_count = brute_min_blocks(rates, stop)
    assert len(got) == want_count
    assert np.sum(rates[got]) > stop


def test_urllc_greedy_prefers_best_blocks():
    config = cfg(num_urllc=1, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    rates = np.array([10e3, 200e3, 30e3, 20e3, 5e3, 1e3])
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0})
    allocate_urllc([0], {0: rates}, tr, 0.01, grid, config)
    # Block 1 alone clears 128k * 1.05; exactly it should be held.
    assert list(grid.vehicle_rbs(0, 0)) == [1]


def test_urllc_equal_rates_take_low_blocks_first():
    config = cfg(num_urllc=1, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    rates = np.full(6, 50e3)
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0})
    allocate_urllc([0], {0: rates}, tr, 0.01, grid, config)
    # Needs three blocks (150k > 134.4k); tie-break walks low indices first.
    assert list(grid.vehicle_rbs(0, 0)) == [0, 1, 2]


def test_urllc_skips_zero_rate_blocks():
    config = cfg(num_urllc=1, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    rates = np.array([0.0, 0.0, 140e3, 0.0, 0.0, 0.0])
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0})
    allocate_urllc([0], {0: rates}, tr, 0.01, grid, config)
    assert list(grid.vehicle_rbs(0, 0)) == [2]


def test_urllc_satisfied_vehicle_rests():
    # Long history far above target and never in violation: takes nothing.
    config = cfg(num_urllc=1, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    for _ in range(50):
        tr.update(np.array([10 * config.rate_target_urllc_bps] * config.num_vehicles))
    rates = np.full(6, 100e3)
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0})
    allocate_urllc([0], {0: rates}, tr, 0.01, grid, config)
    assert len(grid.vehicle_rbs(0, 0)) == 0


def test_urllc_alarmed_vehicle_holds_insurance_block():
    # History: violations early, then a huge catch-up. The mean now clears the
    # stop rate so the greedy loop takes nothing, but the violation statistic
    # is still over budget: one insurance block must be held.
    config = cfg(num_urllc=1, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    for _ in range(9):
        tr.update(np.array([0.0] * config.num_vehicles))
    tr.update(np.array([100 * config.rate_target_urllc_bps] * config.num_vehicles))
    assert tr.mean_bps[0] > config.rate_target_urllc_bps * 1.05
    assert violation_probability(tr, 0, config.rate_target_urllc_bps) > 0.01
    rates = np.array([10e3, 90e3, 30e3, 20e3, 5e3, 1e3])
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0})
    allocate_urllc([0], {0: rates}, tr, 0.01, grid, config)
    assert list(grid.vehicle_rbs(0, 0)) == [1]  # single best block


def test_urllc_alarmed_served_before_satisfied():
    # Two vehicles, rates make block 0 best for both. The alarmed one must
    # pick first and take it.
    config = cfg(num_urllc=2, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    # Vehicle 0 always fine, vehicle 1 always violating.
    for _ in range(10):
        tr.update(np.array([10 * config.rate_target_urllc_bps, 0.0]))
    rates = np.array([200e3, 140e3, 135e3, 1e3, 1e3, 1e3])
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0, 1: 0})
    allocate_urllc([0, 1], {0: rates, 1: rates}, tr, 0.01, grid, config)
    assert 1 == grid.assign[0, 0]


def test_urllc_deficit_order_among_unalarmed():
    # Fresh history where both stay under budget but vehicle 1 runs a larger
    # deficit: it must grab the best block.
    config = cfg(num_urllc=2, num_embb=0, num_rb=6)
    tr = fresh_tracker(config)
    target = config.rate_target_urllc_bps
    for _ in range(10):
        tr.update(np.array([target * 1.2, target * 1.1]))
    rates = np.array([200e3, 150e3, 1e3, 1e3, 1e3, 1e3])
    grid = ResourceGrid(num_rsu=1, num_rb=6, serving={0: 0, 1: 0})
    allocate_urllc([0, 1], {0: rates, 1: rates}, tr, 0.01, grid, config)
    assert grid.assign[0, 0] == 1


# ---------------------------------------------------------------------------
# eMBB min-max allocation
# ---------------------------------------------------------------------------

def brute_minmax_value(rates_by_v, blocks, tracker, threshold, vehicles):
    """Global min over all assignments of the max projected violation."""
    t = tracker.tti_count
    best = np.inf
    for assignment in itertools.product(vehicles, repeat=len(blocks)):
        planned = {v: 0.0 for v in vehicles}
        for b, v in zip(blocks, assignment):
            planned[v] += rates_by_v[v][b]
        worst = 0.0
        for v in vehicles:
            new_mean = (tracker.mean_bps[v] * t + planned[v]) / (t + 1)
            base = tracker.violations[threshold][v] if t else 0
            worst = max(worst, (base + (new_mean <= threshold)) / (t + 1))
        best = min(best, worst)
    return best


def test_embb_attains_brute_force_minmax():
    config = cfg(num_urllc=0, num_embb=2, num_rb=3, bandwidth_hz=600e3)
    tr = fresh_tracker(config)
    threshold = config.rate_target_embb_bps
    rates = {0: np.array([600e3, 500e3, 100e3]),
             1: np.array([450e3, 700e3, 200e3])}
    grid = ResourceGrid(num_rsu=1, num_rb=3, serving={0: 0, 1: 0})
    allocate_embb_minmax([0, 1], rates, tr, grid, config)
    planned = {v: float(np.sum(rates[v][grid.vehicle_rbs(0, v)])) for v in (0, 1)}
    worst = 0.0
    for v in (0, 1):
        new_mean = planned[v]  # t == 0
        worst = max(worst, float(new_mean <= threshold))
    want = brute_minmax_value(rates, [0, 1, 2], tr, threshold, [0, 1])
    assert worst == want


def test_embb_fills_every_free_block():
    config = cfg(num_urllc=0, num_embb=2, num_rb=5, bandwidth_hz=1e6)
    tr = fresh_tracker(config)
    rates = {0: np.full(5, 1e5), 1: np.full(5, 1e5)}
    grid = ResourceGrid(num_rsu=1, num_rb=5, serving={0: 0, 1: 0})
    allocate_embb_minmax([0, 1], rates, tr, grid, config)
    assert len(grid.free_rbs(0)) == 0


def test_embb_respects_existing_urllc_blocks():
    config = cfg(num_urllc=1, num_embb=1, num_rb=4, bandwidth_hz=800e3)
    tr = fresh_tracker(config)
    grid = ResourceGrid(num_rsu=1, num_rb=4, serving={0: 0, 1: 0})
    grid.assign_rb(0, 1, 0)
    rates = {1: np.full(4, 1e5)}
    allocate_embb_minmax([1], rates, tr, grid, config)
    assert grid.assign[0, 1] == 0
    assert set(grid.vehicle_rbs(0, 1)) == {0, 2, 3}


def test_embb_worse_off_vehicle_served_first():
    # Vehicle 1 carries a violation history; the single free block goes to it.
    config = cfg(num_urllc=0, num_embb=2, num_rb=1, bandwidth_hz=200e3)
    tr = fresh_tracker(config)
    target = config.rate_target_embb_bps
    for _ in range(10):
        tr.update(np.array([target * 2, target * 0.5]))
    rates = {0: np.array([5e6]), 1: np.array([5e6])}
    grid = ResourceGrid(num_rsu=1, num_rb=1, serving={0: 0, 1: 0})
    allocate_embb_minmax([0, 1], rates, tr, grid, config)
    assert grid.assign[0, 0] == 1


def test_embb_tie_breaks_to_lower_mean_then_id():
    config = cfg(num_urllc=0, num_embb=2, num_rb=1, bandwidth_hz=200e3)
    tr = fresh_tracker(config)
    target = config.rate_target_embb_bps
    # Both fully violating; vehicle 1 has the lower running average.
    for _ in range(5):
        tr.update(np.array([target * 0.4, target * 0.2]))
    rates = {0: np.array([1e3]), 1: np.array([1e3])}
    grid = ResourceGrid(num_rsu=1, num_rb=1, serving={0: 0, 1: 0})
    allocate_embb_minmax([0, 1], rates, tr, grid, config)
    assert grid.assign[0, 0] == 1


def test_embb_ignores_other_rsu():
    config = cfg(num_rsu=2, num_urllc=0, num_embb=2, num_rb=2, bandwidth_hz=400e3)
    tr = fresh_tracker(config)
    rates = {0: np.full(2, 1e5), 1: np.full(2, 1e5)}
    grid = ResourceGrid(num_rsu=2, num_rb=2, serving={0: 0, 1: 1})
    allocate_embb_minmax([0, 1], rates, tr, grid, config)
    assert np.all(grid.assign[0] == 0)
    assert np.all(grid.assign[1] == 1)


# ---------------------------------------------------------------------------
# Priority audit
# ---------------------------------------------------------------------------

def test_audit_clean_when_urllc_satisfied():
    config = cfg(num_urllc=1, num_embb=1, num_rb=3, bandwidth_hz=600e3)
    tr = fresh_tracker(config)
    rates = {0: np.array([200e3, 200e3, 200e3]), 1: np.full(3, 1e5)}
    grid = ResourceGrid(num_rsu=1, num_rb=3, serving={0: 0, 1: 0})
    allocate_urllc([0], rates, tr, 0.01, grid, config)
    allocate_embb_minmax([1], rates, tr, grid, config)
    assert check_urllc_priority([0], rates, tr, grid, config, [1]) == []


def test_audit_flags_starved_urllc():
    # Hand-build a bad grid: eMBB holds a usable block while the URLLC
    # vehicle sits below target with nothing.
    config = cfg(num_urllc=1, num_embb=1, num_rb=2, bandwidth_hz=400e3)
    tr = fresh_tracker(config)
    rates = {0: np.array([100e3, 50e3]), 1: np.array([1e5, 1e5])}
    grid = ResourceGrid(num_rsu=1, num_rb=2, serving={0: 0, 1: 0})
    grid.assign_rb(0, 0, 1)
    grid.assign_rb(0, 1, 1)
    problems = check_urllc_priority([0], rates, tr, grid, config, [1])
    assert problems and "below target" in problems[0]
