"""TTI-stepped simulation engine for one scenario run.

Each step moves the vehicles, refreshes associations and the scatterer
fading states, snapshots the channel, and hands control to the scheduler for
the configured reporting mode.  Expected rates presented to the scheduler
are interference free (allocation cannot know the other RSUs' concurrent
choices); realized rates include the actual cross-RSU interference of the
final grid, which is what makes reliability genuinely hard to guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections import deque

import numpy as np

from . import sched
from .channel import (
    LinkField, advance_fading, fading_ar_coefficient, init_fading, noise_power_w,
)
from .errors import ConfigError
from .infer import BeamForecast
from .l2s import HarqProcess, MiCurve, bler, harq_step, mi_per_rb
from .phy import AngularCsi, dft_codebook, quantize_gain_profile
from .scenario import (
    ScenarioConfig, Slice, advance_mobility, associate, build_scenario, substream,
)

MAX_RETX = 3


@dataclass
class TtiRecord:
    tti: int
    vehicle: int
    slice: str
    rbs_assigned: int
    rate_bps: float
    running_avg_bps: float


class Engine:
    """Stateful runner; also serves as the scheduler's view of the world."""

    def __init__(
        self,
        config: ScenarioConfig,
        predictor=None,
        collect_records: bool = False,
        check_invariants: bool = False,
    ):
        config.validate()
        self.config = config
        self.vehicles, self.geometry = build_scenario(config)
        self.codebook = dft_codebook(config.n_tx)
        self.field = LinkField(config, self.geometry, self.codebook.columns)
        self.urllc_ids = [v.id for v in self.vehicles if v.slice is Slice.URLLC]
        self.embb_ids = [v.id for v in self.vehicles if v.slice is Slice.EMBB]
        self.num_vehicles = config.num_vehicles
        self.tracker = sched.RateTracker(
            self.num_vehicles,
            (config.rate_target_urllc_bps, config.rate_target_embb_bps),
        )
        self.ledger = sched.OverheadLedger()
        self.curve = MiCurve()
        self.harq = {v.id: HarqProcess(vehicle=v.id) for v in self.vehicles}
        self.noise_w = noise_power_w(config.rb_width_hz)
        self.p_rb_w = config.tx_power_w / config.num_rb

        self._fade_rng = substream(config.seed, "channel")
        self._harq_rng = substream(config.seed, "harq")
        self._fade_ar = fading_ar_coefficient(
            config.speed_kmh / 3.6, config.tti_s, config.wavelength_m
        )
        self._fading = init_fading(config.num_scatterers, self._fade_rng)
        self._reports = deque(maxlen=config.horizon)
        self._profiles: dict[int, np.ndarray] = {}
        self._csi: dict[int, AngularCsi] = {}
        self._last_sinr: dict[int, np.ndarray] = {}

        self.predictor = predictor
        if config.mode == "inferred":
            if predictor is None:
                raise ConfigError("inferred mode needs a beam predictor")
            if any(v.paired_reporter is None for v in self.vehicles
                   if v.slice is Slice.EMBB):
                raise ConfigError("inferred mode needs a URLLC reporter per eMBB vehicle")
        if predictor is not None and hasattr(predictor, "bind_engine"):
            predictor.bind_engine(self)

        self.collect_records = collect_records
        self.check_invariants = check_invariants
        self.records: list[TtiRecord] = []
        self.invariant_violations: list[str] = []
        self.tti = 0

    # Per-TTI flow ------------------------------------------------------

    def step(self) -> tuple[sched.ResourceGrid, np.ndarray]:
        self.tti += 1
        if self.tti > 1:
            advance_mobility(self.vehicles, self.config.tti_s, self.geometry.road_length_m)
            associate(self.vehicles, self.geometry, self.config)
            if self.config.num_scatterers:
                self._fading = advance_fading(self._fading, self._fade_ar, self._fade_rng)
        positions = np.stack([v.position_m for v in self.vehicles])
        self.field.update(positions, self._fading)

        self._profiles = {}
        self._csi = {}
        report = {}
        for v in self.vehicles:
            profile = self.field.profile(v.serving_rsu, v.id)
            self._profiles[v.id] = profile
            csi = AngularCsi(levels_quantized=quantize_gain_profile(profile))
            self._csi[v.id] = csi
            report[v.id] = (csi, float(profile.max()))
        self._reports.append(report)

        if self.config.mode == "perfect":
            grid, rates = sched.schedule_tti_perfect(self)
        else:
            grid, rates = sched.schedule_tti_inferred(self, self.predictor)

        self._run_harq(grid, rates)
        if self.collect_records:
            for v in self.vehicles:
                self.records.append(TtiRecord(
                    tti=self.tti, vehicle=v.id, slice=v.slice.value,
                    rbs_assigned=int(len(grid.vehicle_rbs(v.serving_rsu, v.id))),
                    rate_bps=float(rates[v.id]),
                    running_avg_bps=float(self.tracker.mean_bps[v.id]),
                ))
        return grid, rates

    def run(self, ttis: int) -> None:
        for _ in range(ttis):
            self.step()

    # Scheduler hooks ---------------------------------------------------

    def current_profile(self, vehicle: int) -> np.ndarray:
        return self._profiles[vehicle]

    def current_rb_gains(self, vehicle: int, beam: int) -> np.ndarray:
        v = self.vehicles[vehicle]
        return self.field.rb_gains(v.serving_rsu, vehicle, beam)

    def forecast_perfect(self) -> dict[int, BeamForecast]:
        forecasts = {}
        for v in self.vehicles:
            beam = int(np.argmax(self._profiles[v.id]))
            forecasts[v.id] = BeamForecast(
                beam=beam, rb_gains=self.field.rb_gains(v.serving_rsu, v.id, beam)
            )
        return forecasts

    def forecast_inferred(self, predictor) -> dict[int, BeamForecast]:
        """URLLC vehicles keep exact reports; eMBB beams come from the model.

        The model input is the paired reporter's quantized profile from
        `horizon - 1` TTIs back (the oldest buffered report)."""
        forecasts = {}
        lagged = self._reports[0]
        for v in self.vehicles:
            if v.slice is Slice.URLLC:
                beam = int(np.argmax(self._profiles[v.id]))
                forecasts[v.id] = BeamForecast(
                    beam=beam, rb_gains=self.field.rb_gains(v.serving_rsu, v.id, beam)
                )
            else:
                csi, anchor = lagged[v.paired_reporter]
                forecasts[v.id] = predictor.predict(v.id, csi, anchor)
        return forecasts

    def expected_rates(self, forecasts: dict[int, BeamForecast]) -> dict[int, np.ndarray]:
        """Interference-free expected rate per block, error-rate discounted."""
        cfg = self.config
        out = {}
        for vid, forecast in forecasts.items():
            sinr = self.p_rb_w * np.maximum(forecast.rb_gains, 0.0) / self.noise_w
            mi = mi_per_rb(sinr, self.curve)
            rate = cfg.rb_width_hz * np.log2(1.0 + sinr)
            out[vid] = rate * (1.0 - bler(mi, self.curve))
        return out

    def new_grid(self, forecasts: dict[int, BeamForecast]) -> sched.ResourceGrid:
        serving = {v.id: v.serving_rsu for v in self.vehicles}
        beams = {vid: f.beam for vid, f in forecasts.items()}
        return sched.ResourceGrid(
            num_rsu=self.config.num_rsu, num_rb=self.config.num_rb,
            serving=serving, beams=beams,
        )

    def audit(self, grid: sched.ResourceGrid, expected: dict[int, np.ndarray]) -> None:
        if not self.check_invariants:
            return
        problems = grid.check_orthogonality(self.num_vehicles)
        problems += sched.check_urllc_priority(
            self.urllc_ids, expected, self.tracker, grid, self.config, self.embb_ids
        )
        for p in problems:
            self.invariant_violations.append(f"tti {self.tti}: {p}")

    def realize(self, grid: sched.ResourceGrid) -> np.ndarray:
        """Realized per-vehicle rate under the final grid, with interference."""
        cfg = self.config
        rates = np.zeros(self.num_vehicles)
        self._last_sinr = {}
        for v in self.vehicles:
            s = v.serving_rsu
            rbs = grid.vehicle_rbs(s, v.id)
            if len(rbs) == 0:
                continue
            signal = self.p_rb_w * self.field.rb_gains(s, v.id, grid.beams[v.id])[rbs]
            interference = np.zeros(len(rbs))
            for s2 in range(cfg.num_rsu):
                if s2 == s:
                    continue
                occupants = grid.assign[s2, rbs]
                mask = occupants >= 0
                if not np.any(mask):
                    continue
                beams = np.array([grid.beams[int(o)] for o in occupants[mask]])
                gains = self.field.cross_gains(s2, v.id, rbs[mask], beams)
                interference[mask] += self.p_rb_w * gains
            sinr = signal / (self.noise_w + interference)
            self._last_sinr[v.id] = sinr
            rates[v.id] = cfg.rb_width_hz * float(np.sum(np.log2(1.0 + sinr)))
        return rates

    # Transport-block bookkeeping --------------------------------------

    def _run_harq(self, grid: sched.ResourceGrid, rates: np.ndarray) -> None:
        cfg = self.config
        for v in self.vehicles:
            sinr = self._last_sinr.get(v.id)
            if sinr is None or len(sinr) == 0:
                continue  # no attempt this TTI; any pending block just waits
            process = self.harq[v.id]
            tb_bits = rates[v.id] * cfg.tti_s
            delivered = harq_step(
                process, float(np.mean(sinr)), tb_bits, self.curve,
                self._harq_rng, MAX_RETX,
            )
            self.tracker.goodput_bits[v.id] += delivered
