"""Beamforming, SINR and rate computations on the resource grid.

Beams come from a unitary DFT codebook; the receive side combines across all
antennas, so the figure of merit for a beam w is ||H w||^2.  Reported channel
state is the per-beam gain profile, log-quantized relative to its peak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import noise_power_w
from .errors import DomainError

ANGULAR_LEVELS = 16         # quantizer levels Q
ANGULAR_FLOOR_DB = -40.0    # dynamic range below the peak


@dataclass
class Codebook:
    columns: np.ndarray  # (n, n) complex, unit-norm columns

    @property
    def size(self) -> int:
        return self.columns.shape[1]


def dft_codebook(n: int) -> Codebook:
    """Unitary DFT beam set: column k entry m = exp(-j 2 pi m k / n) / sqrt(n)."""
    if n < 1:
        raise DomainError("codebook size must be >= 1")
    m = np.arange(n)
    cols = np.exp(-2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)
    return Codebook(columns=cols)


def beam_gain(h: np.ndarray, w: np.ndarray) -> float:
    """Combined receive power ||H w||^2 of beam w."""
    y = h @ w
    return float(np.real(np.vdot(y, y)))


def beam_gain_profile(h: np.ndarray, codebook: Codebook) -> np.ndarray:
    """||H w_k||^2 for every codebook column, (n,)."""
    y = h @ codebook.columns
    return np.sum(np.abs(y) ** 2, axis=0)


def optimal_beam(h: np.ndarray, codebook: Codebook) -> int:
    """Index of the strongest codebook column; ties go to the lowest index."""
    return int(np.argmax(beam_gain_profile(h, codebook)))


@dataclass
class SinrReport:
    sinr: np.ndarray          # (B,) linear
    interference_w: np.ndarray  # (B,)


def sinr_per_rb(
    vehicle: int,
    beam: int,
    grid,
    channels: dict,
    config,
    codebook: Codebook | None = None,
) -> SinrReport:
    """Per-block SINR of one vehicle under the current grid.

    `channels` maps (rsu, vehicle, rb) to a channel matrix.  Interference on
    a block is the power of every other RSU's beam there, routed through this
    vehicle's channel from that RSU.  Reference implementation for small
    cases; the simulation engine uses an equivalent vectorized path.
    """
    if codebook is None:
        codebook = dft_codebook(config.n_tx)
    serving = grid.serving[vehicle]
    p_rb = config.tx_power_w / config.num_rb
    noise = noise_power_w(config.rb_width_hz)
    sinr = np.zeros(config.num_rb)
    interference = np.zeros(config.num_rb)
    for b in range(config.num_rb):
        signal = p_rb * beam_gain(channels[(serving, vehicle, b)], codebook.columns[:, beam])
        for s in range(grid.num_rsu):
            if s == serving:
                continue
            occupant = grid.assign[s, b]
            if occupant < 0:
                continue
            w = codebook.columns[:, grid.beams[int(occupant)]]
            interference[b] += p_rb * beam_gain(channels[(s, vehicle, b)], w)
        sinr[b] = signal / (noise + interference[b])
    return SinrReport(sinr=sinr, interference_w=interference)


def achievable_rate(vehicle: int, grid, sinr: np.ndarray, config) -> float:
    """Shannon rate summed over the vehicle's assigned blocks, bits/s."""
    serving = grid.serving[vehicle]
    rbs = grid.vehicle_rbs(serving, vehicle)
    if len(rbs) == 0:
        return 0.0
    return float(config.rb_width_hz * np.sum(np.log2(1.0 + sinr[rbs])))


@dataclass
class AngularCsi:
    """Quantized per-beam gain report: integer levels in [0, levels - 1]."""

    levels_quantized: np.ndarray  # (n_tx,) uint8
    levels: int = ANGULAR_LEVELS
    floor_db: float = ANGULAR_FLOOR_DB


def quantize_gain_profile(
    gains: np.ndarray,
    levels: int = ANGULAR_LEVELS,
    floor_db: float = ANGULAR_FLOOR_DB,
) -> np.ndarray:
    """Log-quantize a gain profile relative to its peak; peak maps to top level.

    An all-zero profile quantizes to all zeros.  The mapping is invariant to
    positive scaling of the input.
    """
    gains = np.asarray(gains, dtype=float)
    if np.any(gains < 0):
        raise DomainError("gains must be non-negative")
    peak = gains.max() if gains.size else 0.0
    if peak <= 0:
        return np.zeros(gains.shape, dtype=np.uint8)
    with np.errstate(divide="ignore"):
        rel_db = 10.0 * np.log10(gains / peak)
    span = -floor_db
    raw = np.floor((rel_db - floor_db) / span * levels)
    return np.clip(raw, 0, levels - 1).astype(np.uint8)


def angular_transform(
    h: np.ndarray,
    codebook: Codebook,
    levels: int = ANGULAR_LEVELS,
    floor_db: float = ANGULAR_FLOOR_DB,
) -> AngularCsi:
    """Quantized angular report of a channel matrix."""
    profile = beam_gain_profile(h, codebook)
    return AngularCsi(
        levels_quantized=quantize_gain_profile(profile, levels, floor_db),
        levels=levels,
        floor_db=floor_db,
    )
