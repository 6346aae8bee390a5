"""Neural equalizers: network templates, pilot training, online equalization.

Two variants share one encoder template scaled to (R, K):

    CDNN  encoder [2R -> 12K -> 6K -> 2K] + symbol head, free weights,
          supervised loss only.
    FDNN  adds the mirror decoder [2K -> 6K -> 12K -> 2R] reconstructing the
          network input, ties every non-head layer to the complex block
          structure, and trains the combined loss  L_sup + lam * L_rec.

Real/complex packing: the 2R-sized input and reconstruction sides use block
stacking [Re; Im] (what the tied layers act on); the 2K symbol head uses
interleaved (re, im) pairs per user.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, nncore
from .nncore import DenseLayer, NetworkParams, project_ties, stack_complex
from .phy import QPSK_AMP

INIT_STD = 0.1  # Gaussian init, zero mean, variance 0.01
DEFAULT_BETA_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
FULL_BATCH_LIMIT = 64  # pilot pairs; above this, group by batch_bits
KINDS = ("cdnn", "fdnn", "mmse")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class EqualizerConfig:
    kind: str = "fdnn"
    lam: float = 0.1
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    max_epochs: int = 2000
    plateau_tol: float = 1e-4
    plateau_patience: int = 10
    batch_bits: int = 1000
    per_subcarrier: bool = True
    beta_sweep_per_batch: bool = False
    beta_sweep_every: int = 1
    amplitude: float = QPSK_AMP
    tie_weights: bool | None = None  # None: tied iff fdnn (ablation override)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        grid = tuple(sorted(float(b) for b in self.beta_grid))
        if not grid or grid[0] < 1.0 or grid[-1] > 100.0:
            raise ValueError(f"beta grid must be non-empty within [1, 100], got {grid}")
        object.__setattr__(self, "beta_grid", grid)

    @property
    def tied(self) -> bool:
        return self.kind == "fdnn" if self.tie_weights is None else self.tie_weights


@dataclass
class TrainedEqualizer:
    config: EqualizerConfig
    nets: list[NetworkParams]  # one per subcarrier, or a single shared net
    loss_history: list[np.ndarray]  # per net: (epochs, 3) combined/supervised/unsup
    beta_history: list[np.ndarray]  # per net: (epochs,)

    def net_for(self, subcarrier: int) -> NetworkParams:
        if self.config.per_subcarrier:
            if subcarrier >= len(self.nets):
                raise IndexError(f"no trained instance for subcarrier {subcarrier}")
            return self.nets[subcarrier]
        return self.nets[0]


def interleave_complex(x: np.ndarray) -> np.ndarray:
    """(K, ...) complex -> (2K, ...) real with (re, im) pairs per user."""
    out = np.empty((2 * x.shape[0],) + x.shape[1:], dtype=np.float64)
    out[0::2] = x.real
    out[1::2] = x.imag
    return out


def deinterleave_complex(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


def build_network(kind: str, n_rx: int, n_users: int, rng: np.random.Generator,
                  amplitude: float = QPSK_AMP, beta: float = 1.0,
                  tied: bool | None = None) -> NetworkParams:
    """Template network for (R, K); FDNN carries the decoder and tied flags."""
    if not n_rx >= n_users >= 1:
        raise ValueError(f"need R >= K >= 1, got R={n_rx}, K={n_users}")
    if kind not in ("cdnn", "fdnn"):
        raise ValueError(f"kind must be cdnn or fdnn, got {kind!r}")
    if tied is None:
        tied = kind == "fdnn"
    r2, k2 = 2 * n_rx, 2 * n_users
    widths = [r2, 6 * k2, 3 * k2, k2]

    def dense(n_out, n_in):
        layer = DenseLayer(weight=INIT_STD * rng.standard_normal((n_out, n_in)),
                           activation="relu", tied=tied)
        project_ties(layer)
        return layer

    encoder = [dense(widths[i + 1], widths[i]) for i in range(3)]
    s_layer = DenseLayer(weight=np.eye(k2), activation="scaled_tanh",
                         tied=False, alpha=amplitude, beta=beta)
    decoder = []
    if kind == "fdnn":
        decoder = [dense(widths[i - 1], widths[i]) for i in range(3, 0, -1)]
    return NetworkParams(encoder=encoder, s_layer=s_layer, decoder=decoder)


def sweep_beta(net: NetworkParams, inputs: np.ndarray, s_target: np.ndarray,
               grid) -> float:
    """Pick the grid beta minimizing the supervised loss on this batch.

    Parameters stay frozen; ties go to the smallest beta. The chosen value is
    written into the network's symbol head.
    """
    grid = sorted(float(b) for b in grid)
    trace = nncore.forward(net, inputs)
    batch = trace.inputs.shape[1]
    best, best_loss = grid[0], np.inf
    for cand in grid:
        out = net.s_layer.alpha * np.tanh(cand * trace.s_pre)
        loss = float(np.sum((out - s_target) ** 2)) / batch
        if loss < best_loss:
            best, best_loss = cand, loss
    net.s_layer.beta = best
    return best


def _batch_size(config: EqualizerConfig, n_pairs: int, n_users: int) -> int:
    if n_pairs <= FULL_BATCH_LIMIT:
        return 0  # full batch
    return max(1, config.batch_bits // (2 * n_users))


def _kernel_arrays(net: NetworkParams):
    dummy = np.zeros((2, 2))
    ws = [l.weight for l in net.encoder] + [net.s_layer.weight]
    if net.decoder:
        ws += [l.weight for l in net.decoder]
    else:
        ws += [dummy, dummy, dummy]
    return ws


def train(config: EqualizerConfig, z_pilot: np.ndarray, x_pilot: np.ndarray,
          seed: int) -> TrainedEqualizer:
    """Train on per-subcarrier pilot pairs.

    z_pilot: (R, N, P) complex quantized received pilots (AGC applied),
    x_pilot: (K, N, P) complex transmitted pilot symbols.
    """
    if config.kind == "mmse":
        raise ValueError("mmse is handled by the linear pipeline, not train()")
    r, n_sub, n_pairs = z_pilot.shape
    k = x_pilot.shape[0]
    if n_pairs < 1:
        raise ValueError("need at least one pilot pair per subcarrier")
    train_kernel, _ = kernels.get_kernels()

    groups = range(n_sub) if config.per_subcarrier else [None]
    nets, losses, betas = [], [], []
    for g in groups:
        if g is None:
            inputs = stack_complex(z_pilot.reshape(r, n_sub * n_pairs))
            targets = interleave_complex(x_pilot.reshape(k, n_sub * n_pairs))
            rng = np.random.default_rng([seed, 0])
        else:
            inputs = stack_complex(z_pilot[:, g, :])
            targets = interleave_complex(x_pilot[:, g, :])
            rng = np.random.default_rng([seed, g])
        net = build_network(config.kind, r, k, rng, config.amplitude,
                            beta=config.beta_grid[0], tied=config.tied)
        weights = _kernel_arrays(net)
        moments1 = [np.zeros_like(w) for w in weights]
        moments2 = [np.zeros_like(w) for w in weights]
        loss_hist = np.zeros((config.max_epochs, 3))
        beta_hist = np.zeros(config.max_epochs)
        epochs, beta, status = train_kernel(
            *weights, *moments1, *moments2,
            np.ascontiguousarray(inputs), np.ascontiguousarray(targets),
            bool(net.decoder), config.tied, config.lam,
            config.amplitude, config.beta_grid[0],
            np.array(config.beta_grid, dtype=np.float64),
            config.beta_sweep_every, config.beta_sweep_per_batch,
            config.optimizer == "adam", config.learning_rate,
            0.9, 0.999, 1e-8,
            config.max_epochs, config.plateau_tol, config.plateau_patience,
            _batch_size(config, inputs.shape[1], k),
            loss_hist, beta_hist)
        if status != kernels.STATUS_OK:
            bad = [i for i, w in enumerate(weights[:7])
                   if not np.all(np.isfinite(w))]
            raise TrainingDiverged(
                f"non-finite loss at epoch {epochs} (subcarrier {g}, "
                f"layers {bad or 'n/a'}, config {config})")
        net.s_layer.beta = float(beta)
        nets.append(net)
        losses.append(loss_hist[:epochs].copy())
        betas.append(beta_hist[:epochs].copy())
    return TrainedEqualizer(config=config, nets=nets,
                            loss_history=losses, beta_history=betas)


def equalize(trained: TrainedEqualizer, z: np.ndarray,
             soft: bool = False) -> np.ndarray:
    """Equalize subcarrier observations z of shape (R, N, T) to hard symbols.

    Output is (K, N, T) complex; hard decisions are per-real-dimension sign
    times the constellation magnitude, zeros deciding positive.
    """
    _, forward_head = kernels.get_kernels()
    r, n_sub, t = z.shape
    amp = trained.config.amplitude
    k = trained.nets[0].s_layer.weight.shape[0] // 2
    out = np.empty((k, n_sub, t), dtype=complex)
    for n in range(n_sub):
        net = trained.net_for(n)
        head = forward_head(net.encoder[0].weight, net.encoder[1].weight,
                            net.encoder[2].weight, net.s_layer.weight,
                            net.s_layer.alpha, net.s_layer.beta,
                            np.ascontiguousarray(stack_complex(z[:, n, :])))
        sym = deinterleave_complex(head)
        if soft:
            out[:, n, :] = sym
        else:
            re = np.where(sym.real < 0, -amp, amp)
            im = np.where(sym.imag < 0, -amp, amp)
            out[:, n, :] = re + 1j * im
    return out


def export_history(trained: TrainedEqualizer, path) -> None:
    """Training history as CSV: epoch, subcarrier, losses, chosen beta."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "subcarrier", "supervised_loss",
                         "unsupervised_loss", "beta"])
        for idx, (hist, bh) in enumerate(zip(trained.loss_history, trained.beta_history)):
            sub = idx if trained.config.per_subcarrier else -1
            for epoch in range(hist.shape[0]):
                writer.writerow([epoch, sub, f"{hist[epoch, 1]:.12g}",
                                 f"{hist[epoch, 2]:.12g}", f"{bh[epoch]:g}"])
