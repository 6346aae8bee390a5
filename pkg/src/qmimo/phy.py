"""Uplink physical layer: multipath channels, OFDM framing, QPSK modem, AWGN.

The uplink model is circulant-convolution in the time domain. Because a
circulant matrix diagonalizes in the DFT basis, the per-antenna received
block is computed as sqrt(N)*ifft(sum_k H_k(f) * X_k) + noise, which is
numerically identical to multiplying by the circulant matrix. All DFT
scaling follows the unitary convention F[m, n] = exp(-2j*pi*m*n/N)/sqrt(N),
so F @ x == fft(x)/sqrt(N) and F.conj().T @ x == ifft(x)*sqrt(N).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QPSK_AMP = 1.0 / np.sqrt(2.0)  # per-dimension magnitude of unit-energy QPSK

CHANNEL_DISTRIBUTIONS = ("gaussian", "poisson")
POISSON_RATE = 0.5  # fixed rate of the Poisson tap model


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the R x K multipath channel; taps[r, k] has mu entries."""

    taps: np.ndarray  # complex, shape (R, K, mu)
    distribution: str

    @property
    def n_rx(self) -> int:
        return self.taps.shape[0]

    @property
    def n_users(self) -> int:
        return self.taps.shape[1]

    @property
    def n_taps(self) -> int:
        return self.taps.shape[2]


@dataclass(frozen=True)
class OfdmFrame:
    """K x N x T symbol grid plus the source bits; first `pilots` slots are pilots."""

    symbols: np.ndarray  # complex, shape (K, N, T)
    bits: np.ndarray  # uint8, length 2*K*N*T
    pilots: int
    amplitude: float = QPSK_AMP

    @property
    def n_users(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.symbols.shape[1]

    @property
    def n_slots(self) -> int:
        return self.symbols.shape[2]

    def pilot_symbols(self) -> np.ndarray:
        return self.symbols[:, :, : self.pilots]

    def test_symbols(self) -> np.ndarray:
        return self.symbols[:, :, self.pilots :]

    def test_bits(self) -> np.ndarray:
        """Source bits of the test slots, in demodulation order (slot, subcarrier, user)."""
        k, n, t = self.symbols.shape
        grid = self.bits.reshape(k, n, t, 2)
        return grid[:, :, self.pilots :, :].transpose(2, 1, 0, 3).ravel()


@dataclass(frozen=True)
class NoiseSpec:
    """Per-complex-sample noise variance; snr_db = 10*log10(1/sigma2) at unit symbol energy."""

    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def snr_db(self) -> float:
        return -10.0 * np.log10(self.sigma2)

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseSpec":
        return cls(sigma2=10.0 ** (-snr_db / 10.0))


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix, entry (m, l) = exp(-2j*pi*m*l/n)/sqrt(n)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    m = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)


def gen_channel(distribution: str, n_rx: int, n_users: int, n_taps: int,
                rng: np.random.Generator) -> ChannelRealization:
    """Draw i.i.d. taps per the distribution tag, scaled to unit expected link energy.

    gaussian: taps ~ CN(0, 1/mu) so E sum|h|^2 = 1 per link.
    poisson:  real and imaginary parts i.i.d. Poisson(0.5) centered by -0.5
              (prevents a DC-dominated channel), then scaled by 1/sqrt(mu),
              which also gives E sum|h|^2 = 1.
    """
    if min(n_rx, n_users, n_taps) < 1:
        raise ValueError("n_rx, n_users, n_taps must all be >= 1")
    shape = (n_rx, n_users, n_taps)
    if distribution == "gaussian":
        taps = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    elif distribution == "poisson":
        re = rng.poisson(POISSON_RATE, shape) - POISSON_RATE
        im = rng.poisson(POISSON_RATE, shape) - POISSON_RATE
        taps = re + 1j * im
    else:
        raise ValueError(f"unknown channel distribution {distribution!r}; "
                         f"expected one of {CHANNEL_DISTRIBUTIONS}")
    taps = taps / np.sqrt(n_taps)
    return ChannelRealization(taps=taps, distribution=distribution)


def freq_response(channel: ChannelRealization, n_subcarriers: int) -> np.ndarray:
    """Per-subcarrier channel matrices H[n] of shape (R, K), n = 0..N-1.

    H[n, r, k] is the N-point DFT of the zero-padded tap vector taps[r, k],
    i.e. the diagonal that makes the circulant time-domain matrix equal to
    F^H diag(H[:, r, k]) F.
    """
    if channel.n_taps > n_subcarriers:
        raise ValueError(f"tap count {channel.n_taps} exceeds subcarrier count {n_subcarriers}")
    lam = np.fft.fft(channel.taps, n=n_subcarriers, axis=2)  # (R, K, N)
    return lam.transpose(2, 0, 1)


def qpsk_modulate(bits: np.ndarray, amplitude: float = QPSK_AMP) -> np.ndarray:
    """Gray map bit pairs (b_i, b_q) -> amplitude*((1-2*b_i) + 1j*(1-2*b_q))."""
    bits = np.asarray(bits)
    if bits.size % 2 != 0:
        raise ValueError(f"bit count must be even, got {bits.size}")
    pairs = bits.reshape(-1, 2).astype(np.float64)
    return amplitude * ((1.0 - 2.0 * pairs[:, 0]) + 1j * (1.0 - 2.0 * pairs[:, 1]))


def qpsk_demodulate(symbols: np.ndarray) -> np.ndarray:
    """Per-dimension sign decision; a zero component decides for the positive point."""
    symbols = np.asarray(symbols).ravel()
    bits = np.empty((symbols.size, 2), dtype=np.uint8)
    bits[:, 0] = symbols.real < 0
    bits[:, 1] = symbols.imag < 0
    return bits.ravel()


def qpsk_hard_decision(symbols: np.ndarray, amplitude: float = QPSK_AMP) -> np.ndarray:
    """Snap soft symbols to the nearest constellation point (zero ties go positive)."""
    symbols = np.asarray(symbols)
    re = np.where(symbols.real < 0, -amplitude, amplitude)
    im = np.where(symbols.imag < 0, -amplitude, amplitude)
    return re + 1j * im


def make_frame(n_users: int, n_subcarriers: int, n_slots: int, pilots: int,
               rng: np.random.Generator, amplitude: float = QPSK_AMP) -> OfdmFrame:
    """Random QPSK frame; the first `pilots` time slots serve as pilots."""
    if not 0 <= pilots <= n_slots:
        raise ValueError(f"pilots={pilots} must lie in [0, n_slots={n_slots}]")
    bits = rng.integers(0, 2, size=2 * n_users * n_subcarriers * n_slots).astype(np.uint8)
    symbols = qpsk_modulate(bits, amplitude).reshape(n_users, n_subcarriers, n_slots)
    return OfdmFrame(symbols=symbols, bits=bits, pilots=pilots, amplitude=amplitude)


def simulate_uplink(frame: OfdmFrame, channel: ChannelRealization, noise: NoiseSpec,
                    rng: np.random.Generator) -> np.ndarray:
    """Time-domain received blocks Y of shape (R, N, T).

    Y[r] = sum_k Circ(h_rk) F^H X_k + V_r, with the circulant product computed
    in the DFT basis. Noise is complex Gaussian with variance sigma2 split
    equally between real and imaginary parts.
    """
    if frame.n_users != channel.n_users:
        raise ValueError(f"frame has {frame.n_users} users but channel has {channel.n_users}")
    n = frame.n_subcarriers
    h = freq_response(channel, n)  # (N, R, K)
    # per-subcarrier mix: S[r, n, t] = sum_k H[n, r, k] X[k, n, t]
    mixed = np.einsum("nrk,knt->rnt", h, frame.symbols)
    y = np.sqrt(n) * np.fft.ifft(mixed, axis=1)
    shape = y.shape
    v = np.sqrt(noise.sigma2 / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return y + v


def to_subcarrier(blocks: np.ndarray) -> np.ndarray:
    """Apply the unitary DFT along the block axis: (R, N, T) time -> subcarrier."""
    n = blocks.shape[1]
    return np.fft.fft(blocks, axis=1) / np.sqrt(n)
