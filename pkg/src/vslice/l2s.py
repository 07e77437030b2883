"""Link-to-system abstraction: MI mapping, block error rate and HARQ.

Blocks are reduced to a mutual-information figure capped at the modulation
order; a logistic curve maps mean MI to block error probability.  HARQ uses
chase combining, so retransmissions add their effective SINR to the pending
transport block before the error draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError


@dataclass
class MiCurve:
    modulation_order_bits: float = 4.0
    mi_threshold: float = 3.0   # bits at which the error rate is 1/2
    bler_slope: float = 10.0    # logistic steepness per bit


def mi_per_rb(sinr: float | np.ndarray, curve: MiCurve = MiCurve()) -> float | np.ndarray:
    """Per-block mutual information, log2(1 + sinr) capped at the modulation order."""
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise DomainError("sinr must be non-negative")
    mi = np.minimum(np.log2(1.0 + sinr), curve.modulation_order_bits)
    return float(mi) if mi.ndim == 0 else mi


def effective_mi(mi_values: np.ndarray) -> float:
    """Mean MI over an allocation; the block-level surrogate."""
    mi_values = np.asarray(mi_values, dtype=float)
    if mi_values.size == 0:
        raise ContractError("effective_mi needs at least one value")
    return float(np.mean(mi_values))


def bler(mi: float | np.ndarray, curve: MiCurve = MiCurve()) -> float | np.ndarray:
    """Block error probability, logistic and decreasing in MI."""
    mi = np.asarray(mi, dtype=float)
    out = 1.0 / (1.0 + np.exp(curve.bler_slope * (mi - curve.mi_threshold)))
    return float(out) if out.ndim == 0 else out


@dataclass
class HarqProcess:
    """One stop-and-wait process per vehicle, chase combining."""

    vehicle: int
    accumulated_sinr: float = 0.0
    retx_count: int = 0
    tb_bits: float = 0.0
    active: bool = False


def harq_step(
    process: HarqProcess,
    attempt_sinr: float,
    tb_bits: float,
    curve: MiCurve,
    rng: np.random.Generator,
    max_retx: int = 3,
) -> float:
    """Run one transmission attempt; returns delivered bits (0 on failure).

    A fresh transport block of `tb_bits` starts when the process is idle;
    otherwise the attempt retransmits the pending block and `tb_bits` is
    ignored.  After `max_retx` failed retransmissions the block is dropped.
    """
    if attempt_sinr < 0:
        raise DomainError("attempt_sinr must be non-negative")
    if not process.active:
        process.active = True
        process.accumulated_sinr = 0.0
        process.retx_count = 0
        process.tb_bits = float(tb_bits)
    process.accumulated_sinr += float(attempt_sinr)
    error_p = bler(mi_per_rb(process.accumulated_sinr, curve), curve)
    if rng.random() >= error_p:
        delivered = process.tb_bits
        process.active = False
        process.accumulated_sinr = 0.0
        process.retx_count = 0
        process.tb_bits = 0.0
        return delivered
    if process.retx_count >= max_retx:
        # Out of retransmissions: drop the block.
        process.active = False
        process.accumulated_sinr = 0.0
        process.retx_count = 0
        process.tb_bits = 0.0
        return 0.0
    process.retx_count += 1
    return 0.0
