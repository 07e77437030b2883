"""Joint slice scheduling over the per-RSU resource grids.

Every TTI the URLLC slice is served first: vehicles are ranked by how far
their running-average rate sits below the low-latency target, with vehicles
whose empirical violation probability already exceeds the reliability budget
epsilon promoted to the head of the queue.  Each vehicle greedily takes its
best expected-rate blocks until the projected average clears the target plus
a margin; while a vehicle is over budget it additionally holds one insurance
block per TTI so the violation statistic is pushed back under epsilon.
Remaining blocks go to eMBB vehicles one at a time, always to the vehicle
whose projected violation probability against the broadband target is
currently worst (min-max).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class ResourceGrid:
    """Per-RSU block assignments for one TTI; at most one vehicle per block."""

    num_rsu: int
    num_rb: int
    serving: dict[int, int]          # vehicle -> serving RSU
    beams: dict[int, int] = field(default_factory=dict)  # vehicle -> codebook column
    assign: np.ndarray = None        # (S, B) vehicle id or -1

    def __post_init__(self):
        if self.assign is None:
            self.assign = np.full((self.num_rsu, self.num_rb), -1, dtype=np.int32)

    def free_rbs(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.assign[s] < 0)

    def assign_rb(self, s: int, b: int, vehicle: int) -> None:
        if self.assign[s, b] >= 0:
            raise ContractError(f"block ({s}, {b}) already assigned")
        if self.serving.get(vehicle) != s:
            raise ContractError(f"vehicle {vehicle} is not served by RSU {s}")
        self.assign[s, b] = vehicle

    def vehicle_rbs(self, s: int, vehicle: int) -> np.ndarray:
        return np.flatnonzero(self.assign[s] == vehicle)

    def omega(self, num_vehicles: int) -> np.ndarray:
        """Binary occupancy tensor (S, B, V)."""
        out = np.zeros((self.num_rsu, self.num_rb, num_vehicles), dtype=bool)
        s_idx, b_idx = np.nonzero(self.assign >= 0)
        out[s_idx, b_idx, self.assign[s_idx, b_idx]] = True
        return out

    def check_orthogonality(self, num_vehicles: int) -> list[str]:
        """Structural invariants; empty list when clean."""
        problems = []
        omega = self.omega(num_vehicles)
        if np.any(omega.sum(axis=2) > 1):
            problems.append("block assigned to more than one vehicle")
        for (s, b), v in np.ndenumerate(self.assign):
            if v >= 0 and self.serving.get(int(v)) != s:
                problems.append(f"vehicle {v} scheduled on foreign RSU {s}")
        return problems


class RateTracker:
    """Running-average rates and threshold violation counts per vehicle."""

    def __init__(self, num_vehicles: int, thresholds_bps: tuple[float, ...]):
        self.num_vehicles = num_vehicles
        self.tti_count = 0
        self.mean_bps = np.zeros(num_vehicles)
        self.violations = {float(t): np.zeros(num_vehicles, dtype=np.int64)
                           for t in thresholds_bps}
        # Raw moments of the instantaneous rate, for fluctuation statistics.
        self.rate_sum = np.zeros(num_vehicles)
        self.rate_sq_sum = np.zeros(num_vehicles)
        self.goodput_bits = np.zeros(num_vehicles)

    def update(self, rates_bps: np.ndarray) -> None:
        rates_bps = np.asarray(rates_bps, dtype=float)
        if rates_bps.shape != (self.num_vehicles,):
            raise ContractError("one rate per vehicle expected")
        self.tti_count += 1
        self.mean_bps += (rates_bps - self.mean_bps) / self.tti_count
        for threshold, counts in self.violations.items():
            counts += self.mean_bps <= threshold
        self.rate_sum += rates_bps
        self.rate_sq_sum += rates_bps ** 2

    def violation_probability(self, vehicle: int, threshold_bps: float) -> float:
        if self.tti_count == 0:
            raise ContractError("no TTIs tracked yet")
        counts = self.violations.get(float(threshold_bps))
        if counts is None:
            raise ContractError(f"threshold {threshold_bps} not tracked")
        return counts[vehicle] / self.tti_count


def violation_probability(tracker: RateTracker, vehicle: int, threshold_bps: float) -> float:
    """Fraction of elapsed TTIs whose running average sat at or below threshold."""
    return tracker.violation_probability(vehicle, threshold_bps)


@dataclass
class OverheadLedger:
    """Counts CSI reports actually consumed vs. the full-reporting baseline."""

    reports: int = 0
    full_reports: int = 0

    def record(self, actual: int, full: int) -> None:
        if actual < 0 or full < 0 or actual > full:
            raise ContractError("report counts must satisfy 0 <= actual <= full")
        self.reports += actual
        self.full_reports += full

    @property
    def reduction(self) -> float:
        if self.full_reports == 0:
            return 0.0
        return 1.0 - self.reports / self.full_reports


def _alarmed(tracker: RateTracker, vehicle: int, target_bps: float, epsilon: float) -> bool:
    # Before any history exists every vehicle counts as over budget.
    if tracker.tti_count == 0:
        return True
    return tracker.violation_probability(vehicle, target_bps) > epsilon


def allocate_urllc(
    urllc_ids: list[int],
    expected_rate: dict[int, np.ndarray],
    tracker: RateTracker,
    epsilon: float,
    grid: ResourceGrid,
    config,
) -> ResourceGrid:
    """Serve URLLC vehicles in priority order; mutates and returns the grid."""
    target_bps = config.rate_target_urllc_bps
    stop_bps = target_bps * (1.0 + config.urllc_margin)
    t = tracker.tti_count

    alarmed = {v: _alarmed(tracker, v, target_bps, epsilon) for v in urllc_ids}
    keyed = [(not alarmed[v], tracker.mean_bps[v] - target_bps, v) for v in urllc_ids]
    order = [v for *_, v in sorted(keyed)]

    for v in order:
        s = grid.serving[v]
        rates = expected_rate[v]
        free = grid.free_rbs(s)
        usable = free[rates[free] > 0]
        # Best blocks first; equal rates resolve to the lower block index.
        usable = usable[np.lexsort((usable, -rates[usable]))]
        mean = tracker.mean_bps[v]
        planned = 0.0
        taken = 0
        for b in usable:
            if (mean * t + planned) / (t + 1) > stop_bps:
                break
            grid.assign_rb(s, int(b), v)
            planned += rates[b]
            taken += 1
        if taken == 0 and len(usable) and alarmed[v]:
            # Over-budget vehicle already at target: hold one insurance block.
            grid.assign_rb(s, int(usable[0]), v)
    return grid


def allocate_embb_minmax(
    embb_ids: list[int],
    expected_rate: dict[int, np.ndarray],
    tracker: RateTracker,
    grid: ResourceGrid,
    config,
) -> ResourceGrid:
    """Hand every leftover block to the currently worst-off eMBB vehicle."""
    threshold = config.rate_target_embb_bps
    t = tracker.tti_count
    planned = {v: 0.0 for v in embb_ids}

    by_rsu: dict[int, list[int]] = {}
    for v in embb_ids:
        by_rsu.setdefault(grid.serving[v], []).append(v)

    def projected_violation(v: int) -> float:
        new_mean = (tracker.mean_bps[v] * t + planned[v]) / (t + 1)
        base = tracker.violations[float(threshold)][v] if t else 0
        return (base + (new_mean <= threshold)) / (t + 1)

    for s in range(grid.num_rsu):
        vehicles = by_rsu.get(s)
        if not vehicles:
            continue
        for b in grid.free_rbs(s):
            # Worst projected violation wins; ties fall to the lower running
            # average, then the lower vehicle id.
            best = min(vehicles,
                       key=lambda v: (-projected_violation(v), tracker.mean_bps[v], v))
            grid.assign_rb(s, int(b), best)
            planned[best] += expected_rate[best][b]
    return grid


def check_urllc_priority(
    urllc_ids: list[int],
    expected_rate: dict[int, np.ndarray],
    tracker: RateTracker,
    grid: ResourceGrid,
    config,
    embb_ids: list[int],
) -> list[str]:
    """Audit a finished grid: eMBB must never hold a block an unsatisfied
    URLLC vehicle on the same RSU could have used."""
    stop_bps = config.rate_target_urllc_bps * (1.0 + config.urllc_margin)
    t = tracker.tti_count
    embb_set = set(embb_ids)
    problems = []
    for v in urllc_ids:
        s = grid.serving[v]
        got = grid.vehicle_rbs(s, v)
        planned = float(np.sum(expected_rate[v][got])) if len(got) else 0.0
        projected = (tracker.mean_bps[v] * t + planned) / (t + 1)
        if projected > stop_bps:
            continue
        for b in range(grid.num_rb):
            holder = int(grid.assign[s, b])
            if holder in embb_set and expected_rate[v][b] > 0:
                problems.append(
                    f"RSU {s} block {b} on eMBB vehicle {holder} while URLLC "
                    f"vehicle {v} is below target"
                )
    return problems


def schedule_tti_perfect(state) -> tuple[ResourceGrid, np.ndarray]:
    """One TTI with every vehicle reporting full channel state."""
    config = state.config
    state.ledger.record(state.num_vehicles, state.num_vehicles)
    forecasts = state.forecast_perfect()
    expected = state.expected_rates(forecasts)
    grid = state.new_grid(forecasts)
    allocate_urllc(state.urllc_ids, expected, state.tracker, config.epsilon, grid, config)
    allocate_embb_minmax(state.embb_ids, expected, state.tracker, grid, config)
    state.audit(grid, expected)
    rates = state.realize(grid)
    state.tracker.update(rates)
    return grid, rates


def schedule_tti_inferred(state, predictor) -> tuple[ResourceGrid, np.ndarray]:
    """One TTI where only URLLC vehicles report; eMBB beams are inferred."""
    if predictor is None:
        raise ConfigError("inferred mode needs a beam predictor")
    for v in state.embb_ids:
        if state.vehicles[v].paired_reporter is None:
            raise ConfigError(f"eMBB vehicle {v} has no paired reporter")
    config = state.config
    state.ledger.record(len(state.urllc_ids), state.num_vehicles)
    forecasts = state.forecast_inferred(predictor)
    expected = state.expected_rates(forecasts)
    grid = state.new_grid(forecasts)
    allocate_urllc(state.urllc_ids, expected, state.tracker, config.epsilon, grid, config)
    allocate_embb_minmax(state.embb_ids, expected, state.tracker, grid, config)
    state.audit(grid, expected)
    rates = state.realize(grid)
    state.tracker.update(rates)
    return grid, rates
