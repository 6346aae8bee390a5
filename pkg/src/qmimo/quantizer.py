"""B-bit symmetric uniform quantizer applied per real dimension, plus pilot AGC.

Labels l_b = delta*(b - (2^B - 1)/2) for b = 0..2^B-1 and finite thresholds
tau_b = delta*(b - 2^(B-1)) for b = 1..2^B-1; the outer thresholds are
-inf/+inf, so out-of-range inputs clip to the extreme labels. Real and
imaginary parts are quantized independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# MSE-optimal step size for a unit-variance Gaussian input, one entry per
# bit depth. Values obtained by numeric minimization of E[(Q(x)-x)^2] with
# adaptive quadrature (see tests/test_quantizer.py for the re-derivation).
OPTIMAL_STEP = {
    1: 1.5957691216,
    2: 0.9956866846,
    3: 0.5860194416,
    4: 0.3352006121,
}

MAX_BITS = 16


@dataclass(frozen=True)
class QuantizerSpec:
    """Quantizer geometry: bit depth, step, label set, finite thresholds."""

    bits: int
    step: float
    labels: np.ndarray  # 2^B label values, strictly increasing
    thresholds: np.ndarray  # 2^B - 1 finite decision levels

    @property
    def n_levels(self) -> int:
        return 1 << self.bits


def build_quantizer(bits: int, step: float) -> QuantizerSpec:
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in [1, {MAX_BITS}], got {bits}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    levels = 1 << bits
    labels = step * (np.arange(levels) - (levels - 1) / 2.0)
    thresholds = step * (np.arange(1, levels) - (levels >> 1))
    return QuantizerSpec(bits=bits, step=float(step), labels=labels, thresholds=thresholds)


def for_bits(bits: int) -> QuantizerSpec:
    """Quantizer with the MSE-optimal step for unit-variance Gaussian input."""
    if bits not in OPTIMAL_STEP:
        raise ValueError(f"no tabulated step for {bits} bits; have {sorted(OPTIMAL_STEP)}")
    return build_quantizer(bits, OPTIMAL_STEP[bits])


def _quantize_real(spec: QuantizerSpec, x: np.ndarray) -> np.ndarray:
    # bin index floor(x/step + 2^(B-1)) clipped to the label range; labels
    # themselves land exactly on bin centers (index + 0.5), so Q(Q(x)) = Q(x)
    idx = np.floor(x / spec.step + (spec.n_levels >> 1))
    idx = np.clip(idx, 0, spec.n_levels - 1).astype(np.intp)
    return spec.labels[idx]


def quantize(spec: QuantizerSpec, samples: np.ndarray) -> np.ndarray:
    """Quantize real and imaginary parts separately; output components lie in the label set."""
    samples = np.asarray(samples)
    if not np.all(np.isfinite(samples)):
        raise ValueError("non-finite input sample")
    if np.iscomplexobj(samples):
        return _quantize_real(spec, samples.real) + 1j * _quantize_real(spec, samples.imag)
    return _quantize_real(spec, samples)


@dataclass(frozen=True)
class AgcState:
    """Per-antenna gain factors fitted on the pilot window and reused on test data."""

    scale: np.ndarray  # positive, one entry per antenna

    def apply(self, blocks: np.ndarray) -> np.ndarray:
        """Scale (R, ...) samples with the stored per-antenna factors."""
        return blocks * self.scale.reshape((-1,) + (1,) * (blocks.ndim - 1))


def agc_scale(blocks: np.ndarray, pilots: int) -> tuple[np.ndarray, AgcState]:
    """Normalize per-antenna real-dimension std to 1 over the first `pilots` slots.

    blocks has shape (R, N, T) with time slots on the last axis. The returned
    state must be reused (not refit) for the test portion of the frame.
    """
    window = blocks[..., :pilots]
    parts = np.stack([window.real, window.imag], axis=-1)
    std = parts.reshape(blocks.shape[0], -1).std(axis=1)
    if np.any(std == 0):
        dead = np.flatnonzero(std == 0)
        raise ValueError(f"all-zero antenna stream on the AGC window: antennas {dead.tolist()}")
    state = AgcState(scale=1.0 / std)
    return state.apply(blocks), state
