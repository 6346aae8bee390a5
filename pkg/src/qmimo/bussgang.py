"""Linearized baseline: Bussgang gain of the quantizer and per-subcarrier MMSE.

After pilot AGC every antenna feeds the quantizer a unit-variance signal per
real dimension, so the diagonal gain matrix of the Bussgang decomposition
collapses to the single scalar rho computed here. The quantized subcarrier
observations then follow z_n = rho * H_n x_n + distortion, an ordinary linear
model handled by regularized least squares plus an MMSE filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .phy import qpsk_hard_decision
from .quantizer import QuantizerSpec

SIGMA_EFF_FLOOR = 1e-8
RIDGE_FACTOR = 1e-6


@dataclass(frozen=True)
class BussgangFactor:
    """Linear gain rho and residual distortion variance for unit-variance input."""

    rho: float
    sigma_d2: float


IDENTITY_FACTOR = BussgangFactor(rho=1.0, sigma_d2=0.0)  # quantizer bypassed


def bussgang_rho(spec: QuantizerSpec) -> BussgangFactor:
    """Closed-form E[Q(x) x] and E[Q(x)^2] - rho^2 for x ~ N(0, 1).

    Per-cell integration of x*phi(x) gives rho = sum_b l_b*(phi(tau_b) -
    phi(tau_{b+1})) with phi vanishing at the infinite outer thresholds.
    """
    if spec.labels.size != spec.n_levels or not spec.step > 0:
        raise ValueError("invalid quantizer spec")
    pdf = np.concatenate(([0.0], norm.pdf(spec.thresholds), [0.0]))
    cdf = np.concatenate(([0.0], norm.cdf(spec.thresholds), [1.0]))
    rho = float(np.sum(spec.labels * (pdf[:-1] - pdf[1:])))
    second_moment = float(np.sum(spec.labels**2 * (cdf[1:] - cdf[:-1])))
    return BussgangFactor(rho=rho, sigma_d2=max(second_moment - rho * rho, 0.0))


@dataclass(frozen=True)
class LinearEqualizerState:
    """Fitted per-subcarrier channel estimates and effective noise levels."""

    h_est: np.ndarray  # (N, R, K)
    sigma_eff2: np.ndarray  # (N,), > 0
    rho: float


def estimate_channel(z_pilot: np.ndarray, x_pilot: np.ndarray, rho: float) -> np.ndarray:
    """Regularized LS channel estimate for one subcarrier.

    z_pilot: (R, P) received pilot vectors, x_pilot: (K, P) sent pilots.
    H_hat = (1/rho) Z X^H (X X^H + delta I)^{-1}, delta trace-scaled so a
    rank-deficient pilot design (P < K) still returns the minimum-norm fit.
    """
    if z_pilot.shape[1] != x_pilot.shape[1] or z_pilot.shape[1] < 1:
        raise ValueError("pilot blocks must share at least one time slot")
    k = x_pilot.shape[0]
    gram = x_pilot @ x_pilot.conj().T
    delta = RIDGE_FACTOR * np.trace(gram).real / k
    gram = gram + max(delta, RIDGE_FACTOR) * np.eye(k)
    return (z_pilot @ x_pilot.conj().T) @ np.linalg.inv(gram) / rho


def fit_equalizer(z_pilot: np.ndarray, x_pilot: np.ndarray,
                  factor: BussgangFactor) -> LinearEqualizerState:
    """Fit all subcarriers; z_pilot is (R, N, P), x_pilot is (K, N, P).

    sigma_eff2 is the mean squared pilot residual ||z/rho - H_hat x||^2 / R
    per subcarrier, floored at 1e-8.
    """
    r, n, p = z_pilot.shape
    h_est = np.empty((n, r, x_pilot.shape[0]), dtype=complex)
    sigma_eff2 = np.empty(n)
    for i in range(n):
        h_est[i] = estimate_channel(z_pilot[:, i, :], x_pilot[:, i, :], factor.rho)
        resid = z_pilot[:, i, :] / factor.rho - h_est[i] @ x_pilot[:, i, :]
        sigma_eff2[i] = max(np.mean(np.abs(resid) ** 2), SIGMA_EFF_FLOOR)
    return LinearEqualizerState(h_est=h_est, sigma_eff2=sigma_eff2, rho=factor.rho)


def perfect_csi_state(h: np.ndarray, sigma2: float,
                      factor: BussgangFactor) -> LinearEqualizerState:
    """Equalizer state from the true channel; h is (N, R, K) from freq_response."""
    rho2 = factor.rho**2
    sigma_eff2 = max(sigma2 / rho2 + factor.sigma_d2 / rho2, SIGMA_EFF_FLOOR)
    return LinearEqualizerState(h_est=np.array(h, dtype=complex),
                                sigma_eff2=np.full(h.shape[0], sigma_eff2),
                                rho=factor.rho)


def mmse_equalize(state: LinearEqualizerState, z: np.ndarray,
                  amplitude: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Equalize subcarrier observations z of shape (R, N, T).

    Returns (soft, hard) user symbols of shape (K, N, T); hard decisions snap
    to the QPSK constellation.
    """
    r, n, t = z.shape
    k = state.h_est.shape[2]
    soft = np.empty((k, n, t), dtype=complex)
    for i in range(n):
        h = state.h_est[i]
        normal = h.conj().T @ h + state.sigma_eff2[i] * np.eye(k)
        soft[:, i, :] = np.linalg.solve(normal, h.conj().T @ (z[:, i, :] / state.rho))
    if amplitude is None:
        hard = qpsk_hard_decision(soft)
    else:
        hard = qpsk_hard_decision(soft, amplitude)
    return soft, hard
