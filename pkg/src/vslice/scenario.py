"""Scenario state: configuration, road geometry, vehicles, RSUs and scatterers.

The deployment is a straight road segment that wraps around (torus), with
roadside units (RSUs) at a fixed lateral offset and vehicles moving at a
common constant speed.  All randomness is drawn from named sub-streams of a
single run seed so that rebuilding a scenario is exactly reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .channel import SPEED_OF_LIGHT, path_loss_db
from .errors import ConfigError

# Fixed deployment constants (meters).
RSU_LATERAL_OFFSET_M = 10.0
SCATTER_BAND_NEAR_M = 5.0
SCATTER_BAND_FAR_M = 25.0


def substream(seed: int, name: str) -> np.random.Generator:
    """Named RNG sub-stream derived deterministically from the run seed."""
    tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


class Slice(str, Enum):
    URLLC = "urllc"
    EMBB = "embb"


@dataclass
class ScenarioConfig:
    """Run parameters.  Defaults describe the sparse desk-scale deployment."""

    bandwidth_hz: float = 10e6
    num_rb: int = 50
    tti_s: float = 1e-3
    carrier_hz: float = 5.9e9
    tx_power_dbm: float = 30.0
    n_tx: int = 64
    n_rx: int = 8
    rate_target_urllc_bps: float = 128e3
    rate_target_embb_bps: float = 1000e3
    epsilon: float = 0.1
    speed_kmh: float = 40.0
    num_rsu: int = 2
    num_urllc: int = 4
    num_embb: int = 4
    inter_vehicle_distance_m: float = 50.0
    num_scatterers: int = 8
    horizon: int = 1
    seed: int = 1
    mode: str = "perfect"
    urllc_margin: float = 0.05

    # Derived quantities -------------------------------------------------

    @property
    def rb_width_hz(self) -> float:
        return self.bandwidth_hz / self.num_rb

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** (self.tx_power_dbm / 10.0) * 1e-3

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def num_vehicles(self) -> int:
        return self.num_urllc + self.num_embb

    @property
    def road_length_m(self) -> float:
        return self.num_vehicles * self.inter_vehicle_distance_m

    def validate(self) -> "ScenarioConfig":
        """Raise ConfigError on any out-of-range or inconsistent field."""
        if self.num_rb < 1:
            raise ConfigError("num_rb must be >= 1")
        if self.bandwidth_hz <= 0 or self.tti_s <= 0 or self.carrier_hz <= 0:
            raise ConfigError("bandwidth_hz, tti_s and carrier_hz must be positive")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ConfigError("antenna counts must be >= 1")
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.rate_target_urllc_bps <= 0 or self.rate_target_embb_bps <= 0:
            raise ConfigError("rate targets must be positive")
        if self.speed_kmh < 0:
            raise ConfigError("speed_kmh must be >= 0")
        if self.num_rsu < 1:
            raise ConfigError("num_rsu must be >= 1")
        if self.num_urllc < 0 or self.num_embb < 0:
            raise ConfigError("vehicle counts must be >= 0")
        if self.num_vehicles < 1:
            raise ConfigError("at least one vehicle is required")
        if self.inter_vehicle_distance_m <= 0:
            raise ConfigError("inter_vehicle_distance_m must be positive")
        if self.num_scatterers < 0:
            raise ConfigError("num_scatterers must be >= 0")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.mode not in ("perfect", "inferred"):
            raise ConfigError(f"mode must be 'perfect' or 'inferred', got {self.mode!r}")
        if self.urllc_margin < 0:
            raise ConfigError("urllc_margin must be >= 0")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        """Build from a plain mapping; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**data)
        # Normalize integer-valued fields that may arrive as JSON floats.
        for name in ("num_rb", "n_tx", "n_rx", "num_rsu", "num_urllc",
                     "num_embb", "num_scatterers", "horizon", "seed"):
            value = getattr(cfg, name)
            if float(value) != int(value):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            setattr(cfg, name, int(value))
        return cfg.validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse configuration file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration file must contain a JSON object")
        return cls.from_dict(data)

    def override(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes).validate()


@dataclass
class VehicleState:
    id: int
    slice: Slice
    position_m: np.ndarray            # (2,) x along the road, y lateral
    velocity_mps: np.ndarray          # (2,)
    serving_rsu: int = -1
    paired_reporter: int | None = None  # URLLC vehicle whose reports stand in for this one


@dataclass
class EnvironmentGeometry:
    rsu_positions_m: np.ndarray        # (S, 2)
    scatterer_positions_m: np.ndarray  # (C, 2)
    reflection_coefficients: np.ndarray  # (C,) complex, drawn once per run
    road_length_m: float


def wrap_dx(dx: np.ndarray | float, road_length_m: float) -> np.ndarray | float:
    """Signed x displacement on the wrapped road, in [-L/2, L/2)."""
    half = road_length_m / 2.0
    return (np.asarray(dx) + half) % road_length_m - half


def torus_distance(a: np.ndarray, b: np.ndarray, road_length_m: float) -> float:
    dx = wrap_dx(b[0] - a[0], road_length_m)
    return float(np.hypot(dx, b[1] - a[1]))


def build_scenario(config: ScenarioConfig) -> tuple[list[VehicleState], EnvironmentGeometry]:
    """Place RSUs, vehicles and scatterers; associate and pair reporters."""
    config.validate()
    length = config.road_length_m
    num_rsu = config.num_rsu

    rsu_x = (np.arange(num_rsu) + 0.5) * length / num_rsu
    rsu_positions = np.column_stack([rsu_x, np.full(num_rsu, RSU_LATERAL_OFFSET_M)])

    rng = substream(config.seed, "geometry")
    n_scat = config.num_scatterers
    scat_x = rng.uniform(0.0, length, size=n_scat)
    # Scatterers sit in a band on the opposite side of the road from the RSUs.
    scat_y = -rng.uniform(SCATTER_BAND_NEAR_M, SCATTER_BAND_FAR_M, size=n_scat)
    scatterers = np.column_stack([scat_x, scat_y])
    magnitudes = rng.uniform(0.3, 0.8, size=n_scat)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_scat)
    reflection = magnitudes * np.exp(1j * phases)

    geometry = EnvironmentGeometry(
        rsu_positions_m=rsu_positions,
        scatterer_positions_m=scatterers,
        reflection_coefficients=reflection,
        road_length_m=length,
    )

    speed_mps = config.speed_kmh / 3.6
    vehicles: list[VehicleState] = []
    urllc_left, embb_left = config.num_urllc, config.num_embb
    for i in range(config.num_vehicles):
        if urllc_left and (i % 2 == 0 or not embb_left):
            vehicle_slice = Slice.URLLC
            urllc_left -= 1
        else:
            vehicle_slice = Slice.EMBB
            embb_left -= 1
        vehicles.append(VehicleState(
            id=i,
            slice=vehicle_slice,
            position_m=np.array([i * config.inter_vehicle_distance_m, 0.0]),
            velocity_mps=np.array([speed_mps, 0.0]),
        ))

    associate(vehicles, geometry, config)
    assign_pairs(vehicles, geometry.road_length_m)
    return vehicles, geometry


def advance_mobility(vehicles: list[VehicleState], dt_s: float, road_length_m: float) -> None:
    """Move every vehicle by velocity * dt and wrap onto the road."""
    if dt_s < 0:
        raise ConfigError("dt_s must be >= 0")
    for v in vehicles:
        v.position_m = v.position_m + v.velocity_mps * dt_s
        v.position_m[0] %= road_length_m


def associate(
    vehicles: list[VehicleState],
    geometry: EnvironmentGeometry,
    config: ScenarioConfig,
    path_loss_model: Callable[[float], float] = path_loss_db,
) -> list[VehicleState]:
    """Attach each vehicle to the RSU with the strongest received power.

    Received power is tx power minus distance path loss, so this picks the
    minimum-loss RSU; exact ties go to the lowest RSU id.  Idempotent.
    """
    for v in vehicles:
        losses = [
            path_loss_model(torus_distance(v.position_m, rsu, geometry.road_length_m) / 1000.0)
            for rsu in geometry.rsu_positions_m
        ]
        v.serving_rsu = int(np.argmin(losses))
    return vehicles


def assign_pairs(vehicles: list[VehicleState], road_length_m: float) -> list[VehicleState]:
    """Give each eMBB vehicle its nearest URLLC reporter, fixed for the run.

    Candidates under the same RSU are preferred; if that RSU serves no URLLC
    vehicle the nearest URLLC vehicle overall is used.  With no URLLC vehicles
    at all the pairing stays None and inferred-mode scheduling is rejected
    downstream.  Distance ties resolve to the lowest vehicle id.
    """
    urllc = [v for v in vehicles if v.slice is Slice.URLLC]
    for v in vehicles:
        if v.slice is not Slice.EMBB:
            continue
        candidates = [u for u in urllc if u.serving_rsu == v.serving_rsu] or urllc
        if not candidates:
            v.paired_reporter = None
            continue
        best = min(
            candidates,
            key=lambda u: (torus_distance(v.position_m, u.position_m, road_length_m), u.id),
        )
        v.paired_reporter = best.id
    return vehicles
