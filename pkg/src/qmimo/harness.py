"""Experiment orchestration: seeded BER sweeps, config files, CSV records.

A sweep point is one (method, snr, bits, pilots, channel) tuple. Every frame
of a point draws a fresh channel, frame, and noise realization from an RNG
keyed on (seed, frame index, point physics), so all methods at a point see
identical physics and reruns are bit-reproducible. Frames accumulate until
the stop rule (min_errors bit errors, or the frame budget) is met.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import bussgang, equalizers, phy, quantizer
from .equalizers import EqualizerConfig, TrainingDiverged

CSV_HEADER = "method,snr_db,bits,pilots,channel,errors,total_bits,ber,seed_lo,seed_hi"
METHODS = ("mmse", "cdnn", "fdnn")
_METHOD_CODE = {m: i for i, m in enumerate(METHODS)}
_CHANNEL_CODE = {c: i for i, c in enumerate(phy.CHANNEL_DISTRIBUTIONS)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition; defaults are the desk-scale profile."""

    r: int = 32
    k: int = 4
    n: int = 16
    mu: int = 4
    t: int = 64
    pilots: tuple[int, ...] = (8, 16, 32)
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0)
    bits: tuple[int | None, ...] = (1, 2, None)  # None tags infinite resolution
    channel: tuple[str, ...] = ("gaussian",)
    methods: tuple[str, ...] = ("mmse", "cdnn", "fdnn")
    frames: int = 500
    min_errors: int = 100
    seed: int = 1
    perfect_csi: bool = False
    out: str = "ber_sweep.csv"
    lam: float = 0.1
    beta_grid: tuple[float, ...] = equalizers.DEFAULT_BETA_GRID
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    max_epochs: int = 2000
    batch_bits: int = 1000
    per_subcarrier: bool = True
    beta_sweep_per_batch: bool = False

    def __post_init__(self):
        if not self.r >= self.k >= 1:
            raise ConfigError(f"need r >= k >= 1, got r={self.r}, k={self.k}")
        if self.mu > self.n:
            raise ConfigError(f"mu={self.mu} must not exceed n={self.n}")
        for p in self.pilots:
            if not 1 <= p <= self.t:
                raise ConfigError(f"pilot count {p} must lie in [1, t={self.t}]")
        if not self.snr_db:
            raise ConfigError("snr_db grid must be non-empty")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        for b in self.bits:
            if b is not None and not 1 <= b <= quantizer.MAX_BITS:
                raise ConfigError(f"bits entry {b} out of range")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected subset of {METHODS}")
        for c in self.channel:
            if c not in phy.CHANNEL_DISTRIBUTIONS:
                raise ConfigError(f"unknown channel {c!r}")

    def equalizer_config(self, kind: str) -> EqualizerConfig:
        return EqualizerConfig(
            kind=kind, lam=self.lam, beta_grid=self.beta_grid,
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            max_epochs=self.max_epochs, batch_bits=self.batch_bits,
            per_subcarrier=self.per_subcarrier,
            beta_sweep_per_batch=self.beta_sweep_per_batch)


@dataclass(frozen=True)
class BerRecord:
    method: str
    snr_db: float
    bits: int | None
    pilots: int
    channel: str
    errors: int
    total_bits: int
    seed_lo: int
    seed_hi: int

    @property
    def ber(self) -> float:
        return self.errors / self.total_bits if self.total_bits else math.nan

    def row(self) -> str:
        return ",".join([
            self.method, f"{self.snr_db:.10g}", format_bits(self.bits),
            str(self.pilots), self.channel, str(self.errors),
            str(self.total_bits), f"{self.ber:.10g}",
            str(self.seed_lo), str(self.seed_hi),
        ])


def format_bits(bits: int | None) -> str:
    return "inf" if bits is None else str(bits)


def parse_bits(text: str) -> int | None:
    return None if text.strip().lower() == "inf" else int(text)


def compute_ber(estimated: np.ndarray, true: np.ndarray) -> tuple[int, int, float]:
    """(errors, total, exact Hamming-error fraction)."""
    estimated = np.asarray(estimated).ravel()
    true = np.asarray(true).ravel()
    if estimated.size != true.size:
        raise ValueError(f"bit streams differ in length: {estimated.size} vs {true.size}")
    errors = int(np.sum(estimated != true))
    return errors, estimated.size, errors / true.size


def flop_estimate(method: str, n_rx: int, n_users: int) -> int:
    """Multiply-add count to equalize one subcarrier vector.

    Network inference counts m*n per weight matrix over the encoder and the
    symbol head (the decoder is a training-time device). The MMSE apply is
    one K x R complex mat-vec, at four real multiply-adds per complex one.
    """
    r2, k2 = 2 * n_rx, 2 * n_users
    if method in ("cdnn", "fdnn"):
        widths = [r2, 6 * k2, 3 * k2, k2]
        count = sum(widths[i + 1] * widths[i] for i in range(3))
        return count + k2 * k2
    if method == "mmse":
        return 4 * n_rx * n_users
    raise ValueError(f"unknown method {method!r}")


def _run_frame(config: ExperimentConfig, method: str, snr_db: float,
               bits: int | None, pilots: int, channel: str, frame_idx: int):
    """One Monte-Carlo frame; returns (errors, total_bits)."""
    phys_key = [config.seed, frame_idx, _CHANNEL_CODE[channel],
                0 if bits is None else bits, pilots,
                10**9 + int(round(snr_db * 1000))]
    rng = np.random.default_rng(phys_key)
    ch = phy.gen_channel(channel, config.r, config.k, config.mu, rng)
    frame = phy.make_frame(config.k, config.n, config.t, pilots, rng)
    noise = phy.NoiseSpec.from_snr_db(snr_db)
    y = phy.simulate_uplink(frame, ch, noise, rng)

    y, agc = quantizer.agc_scale(y, pilots)
    if bits is None:
        z = y
        factor = bussgang.IDENTITY_FACTOR
    else:
        spec = quantizer.for_bits(bits)
        z = quantizer.quantize(spec, y)
        factor = bussgang.bussgang_rho(spec)
    zs = phy.to_subcarrier(z)
    z_pilot, z_test = zs[:, :, :pilots], zs[:, :, pilots:]

    if method == "mmse":
        if config.perfect_csi:
            h = phy.freq_response(ch, config.n) * agc.scale[None, :, None]
            sigma2 = noise.sigma2 * float(np.mean(agc.scale**2))
            state = bussgang.perfect_csi_state(h, sigma2, factor)
        else:
            state = bussgang.fit_equalizer(z_pilot, frame.pilot_symbols(), factor)
        _, hard = bussgang.mmse_equalize(state, z_test)
    else:
        eq_config = config.equalizer_config(method)
        train_seed = int(np.random.SeedSequence(
            phys_key + [_METHOD_CODE[method]]).generate_state(1)[0])
        trained = equalizers.train(eq_config, z_pilot, frame.pilot_symbols(), train_seed)
        hard = equalizers.equalize(trained, z_test)

    est_bits = phy.qpsk_demodulate(hard.transpose(2, 1, 0))
    errors, total, _ = compute_ber(est_bits, frame.test_bits())
    return errors, total


def run_experiment(config: ExperimentConfig, progress=None) -> list[BerRecord]:
    """Run the full sweep grid; deterministic given the config."""
    records = []
    for method in config.methods:
        for channel in config.channel:
            for bits in config.bits:
                for pilots in config.pilots:
                    for snr_db in config.snr_db:
                        errors = total = 0
                        frames_used = diverged = 0
                        for f in range(config.frames):
                            try:
                                e, t = _run_frame(config, method, snr_db, bits,
                                                  pilots, channel, f)
                            except TrainingDiverged as exc:
                                diverged += 1
                                print(f"warning: diverged frame dropped: {exc}",
                                      file=sys.stderr)
                                continue
                            errors += e
                            total += t
                            frames_used = f + 1
                            if errors >= config.min_errors:
                                break
                        rec = BerRecord(method=method, snr_db=snr_db, bits=bits,
                                        pilots=pilots, channel=channel,
                                        errors=errors, total_bits=total,
                                        seed_lo=config.seed,
                                        seed_hi=config.seed + max(frames_used, 1) - 1)
                        records.append(rec)
                        if progress is not None:
                            progress(rec)
    return records


def sort_records(records) -> list[BerRecord]:
    return sorted(records, key=lambda r: (
        r.method, r.channel, -1 if r.bits is None else r.bits,
        r.pilots, r.snr_db))


def write_csv(records, path) -> None:
    """CSV with the fixed header; records are sorted for order independence."""
    lines = [CSV_HEADER] + [r.row() for r in sort_records(records)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# -- flat key-value config files ----------------------------------------------

_LIST_FIELDS = {"pilots", "snr_db", "bits", "channel", "methods", "beta_grid"}
_BOOL_FIELDS = {"perfect_csi", "per_subcarrier", "beta_sweep_per_batch"}


def _parse_value(name: str, text: str, line_no: int):
    try:
        if name in _BOOL_FIELDS:
            low = text.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true/false, got {text!r}")
            return low == "true"
        if name in _LIST_FIELDS:
            items = [s.strip() for s in text.split(",") if s.strip()]
            if name == "bits":
                return tuple(parse_bits(s) for s in items)
            if name in ("channel", "methods"):
                return tuple(items)
            if name in ("snr_db", "beta_grid"):
                return tuple(float(s) for s in items)
            return tuple(int(s) for s in items)
        if name == "out" or name == "optimizer":
            return text.strip()
        if name in ("lam", "learning_rate"):
            return float(text)
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: bad value for {name!r}: {exc}") from exc


def parse_config(path) -> ExperimentConfig:
    """Read a flat `key = value` file; unknown keys and bad values are rejected."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {raw.rstrip()!r}")
            name, text = (s.strip() for s in line.split("=", 1))
            if name not in known:
                raise ConfigError(f"line {line_no}: unknown key {name!r}")
            if name in values:
                raise ConfigError(f"line {line_no}: duplicate key {name!r}")
            values[name] = _parse_value(name, text, line_no)
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_config(config: ExperimentConfig, path) -> None:
    """Serialize a config as the flat key-value format parse_config reads."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if f.name == "bits":
            text = ",".join(format_bits(b) for b in value)
        elif isinstance(value, tuple):
            text = ",".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = f"{value:.10g}"
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
