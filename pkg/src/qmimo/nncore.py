"""Minimal dense-network engine with hand-written gradients.

Networks are a fixed topology: a ReLU encoder stack ending in a bottleneck,
a symbol head (the S-layer, saturating scaled-tanh) attached to the
bottleneck, and an optional decoder stack reconstructing the input. Layers
marked `tied` keep the block structure [[A, B], [-B, A]] so the real matrix
acts as a complex linear map on stacked (real, imag) vectors; their
gradients from the two block copies are accumulated into one and the
structure is re-imposed bitwise after every optimizer step.

Arrays follow the column convention: a batch is (dim, n_samples).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "scaled_tanh", "linear")


def scaled_tanh(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    """alpha * tanh(beta * x); saturates to +-alpha without overflow."""
    return alpha * np.tanh(beta * x)


def scaled_tanh_dx(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    t = np.tanh(beta * x)
    return alpha * beta * (1.0 - t * t)


def scaled_tanh_dbeta(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    """Diagnostic partial w.r.t. beta (beta itself is tuned by sweep, not gradient)."""
    t = np.tanh(beta * x)
    return alpha * x * (1.0 - t * t)


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in), float64
    activation: str = "relu"
    tied: bool = False
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.tied and (self.weight.shape[0] % 2 or self.weight.shape[1] % 2):
            raise ValueError("tied layers need even dimensions")

    def act(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        if self.activation == "scaled_tanh":
            return scaled_tanh(self.alpha, self.beta, z)
        return z

    def act_grad(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (z > 0).astype(np.float64)
        if self.activation == "scaled_tanh":
            return scaled_tanh_dx(self.alpha, self.beta, z)
        return np.ones_like(z)


def project_ties(layer: DenseLayer) -> None:
    """Re-impose W = [[A, B], [-B, A]] from the stored top half, bitwise."""
    if not layer.tied:
        return
    ho = layer.weight.shape[0] // 2
    hi = layer.weight.shape[1] // 2
    layer.weight[ho:, :hi] = -layer.weight[:ho, hi:]
    layer.weight[ho:, hi:] = layer.weight[:ho, :hi]


def tie_symmetrize(grad: np.ndarray) -> np.ndarray:
    """Fold the two block appearances of each free parameter into both positions.

    The returned array is the full-shape gradient whose top half equals the
    derivative w.r.t. the free blocks (A, B) and whose bottom half mirrors it
    with the tied signs, so an elementwise optimizer update preserves the tie.
    """
    ho, hi = grad.shape[0] // 2, grad.shape[1] // 2
    ga = grad[:ho, :hi] + grad[ho:, hi:]
    gb = grad[:ho, hi:] - grad[ho:, :hi]
    return np.block([[ga, gb], [-gb, ga]])


def tied_to_complex(weight: np.ndarray) -> np.ndarray:
    """Complex matrix whose real-stacked action equals the tied real matrix."""
    ho, hi = weight.shape[0] // 2, weight.shape[1] // 2
    return weight[:ho, :hi] - 1j * weight[:ho, hi:]


def stack_complex(x: np.ndarray) -> np.ndarray:
    """(d, ...) complex -> (2d, ...) real, real parts on top."""
    return np.concatenate([x.real, x.imag], axis=0)


def unstack_complex(x: np.ndarray) -> np.ndarray:
    d = x.shape[0] // 2
    return x[:d] + 1j * x[d:]


@dataclass
class NetworkParams:
    encoder: list[DenseLayer]
    s_layer: DenseLayer
    decoder: list[DenseLayer] = field(default_factory=list)

    def layers(self) -> list[DenseLayer]:
        return [*self.encoder, self.s_layer, *self.decoder]

    @property
    def input_dim(self) -> int:
        return self.encoder[0].weight.shape[1]

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder[-1].weight.shape[0]


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    enc_pre: list[np.ndarray]
    enc_act: list[np.ndarray]
    s_pre: np.ndarray
    s_out: np.ndarray
    dec_pre: list[np.ndarray]
    dec_act: list[np.ndarray]

    @property
    def bottleneck(self) -> np.ndarray:
        return self.enc_act[-1]

    @property
    def dec_out(self) -> np.ndarray:
        return self.dec_act[-1] if self.dec_act else None


def forward(net: NetworkParams, inputs: np.ndarray) -> ForwardTrace:
    """Run encoder, symbol head, and (if present) decoder on a (dim, batch) block."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[0] == 1 and net.input_dim != 1:
        x = x.T
    if x.shape[0] != net.input_dim:
        raise ValueError(f"input dim {x.shape[0]} != first layer dim {net.input_dim}")
    enc_pre, enc_act = [], []
    a = x
    for layer in net.encoder:
        z = layer.weight @ a
        a = layer.act(z)
        enc_pre.append(z)
        enc_act.append(a)
    s_pre = net.s_layer.weight @ a
    s_out = net.s_layer.act(s_pre)
    dec_pre, dec_act = [], []
    d = a
    for layer in net.decoder:
        z = layer.weight @ d
        d = layer.act(z)
        dec_pre.append(z)
        dec_act.append(d)
    return ForwardTrace(inputs=x, enc_pre=enc_pre, enc_act=enc_act,
                        s_pre=s_pre, s_out=s_out, dec_pre=dec_pre, dec_act=dec_act)


def combined_loss(trace: ForwardTrace, s_target: np.ndarray,
                  dec_target: np.ndarray | None, lam: float) -> tuple[float, float, float]:
    """(combined, supervised, unsupervised) mean-per-sample squared errors."""
    batch = trace.inputs.shape[1]
    sup = float(np.sum((trace.s_out - s_target) ** 2)) / batch
    if dec_target is None or trace.dec_out is None:
        return sup, sup, 0.0
    unsup = float(np.sum((trace.dec_out - dec_target) ** 2)) / batch
    return sup + lam * unsup, sup, unsup


def backward(net: NetworkParams, trace: ForwardTrace, s_target: np.ndarray,
             dec_target: np.ndarray | None = None, lam: float = 0.0) -> list[np.ndarray]:
    """Gradients of the combined loss, ordered like net.layers().

    Tied layers get the fold of both block appearances (see tie_symmetrize).
    """
    batch = trace.inputs.shape[1]
    s_target = np.atleast_2d(np.asarray(s_target, dtype=np.float64))
    if s_target.shape[0] == 1 and trace.s_out.shape[0] != 1:
        s_target = s_target.T

    # symbol head
    delta_s = (2.0 / batch) * (trace.s_out - s_target) * net.s_layer.act_grad(trace.s_pre)
    grad_s = delta_s @ trace.bottleneck.T
    d_bottleneck = net.s_layer.weight.T @ delta_s

    # decoder chain (contributes lam-weighted gradient; zero lam gates it off)
    dec_grads: list[np.ndarray] = []
    if net.decoder:
        if dec_target is None:
            raise ValueError("decoder present but no reconstruction target given")
        dec_target = np.atleast_2d(np.asarray(dec_target, dtype=np.float64))
        if dec_target.shape[0] == 1 and trace.dec_out.shape[0] != 1:
            dec_target = dec_target.T
        delta = (2.0 * lam / batch) * (trace.dec_out - dec_target)
        for i in range(len(net.decoder) - 1, -1, -1):
            layer = net.decoder[i]
            delta = delta * layer.act_grad(trace.dec_pre[i])
            below = trace.dec_act[i - 1] if i > 0 else trace.bottleneck
            dec_grads.append(delta @ below.T)
            delta = layer.weight.T @ delta
        dec_grads.reverse()
        d_bottleneck = d_bottleneck + delta

    # encoder chain, fed by both heads
    enc_grads: list[np.ndarray] = []
    delta = d_bottleneck
    for i in range(len(net.encoder) - 1, -1, -1):
        layer = net.encoder[i]
        delta = delta * layer.act_grad(trace.enc_pre[i])
        below = trace.enc_act[i - 1] if i > 0 else trace.inputs
        enc_grads.append(delta @ below.T)
        if i > 0:
            delta = layer.weight.T @ delta
    enc_grads.reverse()

    grads = [*enc_grads, grad_s, *dec_grads]
    layers = net.layers()
    return [tie_symmetrize(g) if layers[i].tied else g for i, g in enumerate(grads)]


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: NetworkParams, kind: str = "adam",
                learning_rate: float = 1e-3) -> "OptimizerState":
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        state = cls(kind=kind, learning_rate=learning_rate)
        if kind == "adam":
            state.m = [np.zeros_like(l.weight) for l in net.layers()]
            state.v = [np.zeros_like(l.weight) for l in net.layers()]
        return state


def optimizer_step(net: NetworkParams, grads: list[np.ndarray],
                   state: OptimizerState) -> None:
    """In-place SGD/Adam update; tied layers are re-projected afterwards."""
    layers = net.layers()
    if len(grads) != len(layers):
        raise ValueError("gradient count does not match layer count")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in layer {i} "
                               f"(shape {g.shape}, step {state.step_count})")
    state.step_count += 1
    if state.kind == "sgd":
        for layer, g in zip(layers, grads):
            layer.weight -= state.learning_rate * g
    else:
        t = state.step_count
        bias1 = 1.0 - state.beta1**t
        bias2 = 1.0 - state.beta2**t
        for i, (layer, g) in enumerate(zip(layers, grads)):
            state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
            state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
            m_hat = state.m[i] / bias1
            v_hat = state.v[i] / bias2
            layer.weight -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    for layer in layers:
        project_ties(layer)


def _free_positions(layer: DenseLayer):
    """Index pairs of the independent parameters (top half only when tied)."""
    rows = layer.weight.shape[0] // 2 if layer.tied else layer.weight.shape[0]
    for i in range(rows):
        for j in range(layer.weight.shape[1]):
            yield i, j


def grad_check(net: NetworkParams, inputs: np.ndarray, s_target: np.ndarray,
               dec_target: np.ndarray | None = None, lam: float = 0.0,
               step: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Perturbing a tied parameter moves both of its block appearances, matching
    how tie_symmetrize folds the analytic gradient.
    """
    trace = forward(net, inputs)
    grads = backward(net, trace, s_target, dec_target, lam)

    def loss_now() -> float:
        return combined_loss(forward(net, inputs), s_target, dec_target, lam)[0]

    worst = 0.0
    for li, layer in enumerate(net.layers()):
        w = layer.weight
        for i, j in _free_positions(layer):
            old = w[i, j]
            w[i, j] = old + step
            project_ties(layer)
            up = loss_now()
            w[i, j] = old - step
            project_ties(layer)
            down = loss_now()
            w[i, j] = old
            project_ties(layer)
            numeric = (up - down) / (2.0 * step)
            analytic = grads[li][i, j]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, rel)
    return worst


# -- checkpoint container ----------------------------------------------------
#
# Networks serialize to a flat .npz archive:
#   meta               int array [n_encoder, n_decoder]
#   w{i}               float64 weight of layer i, in net.layers() order
#   act{i}             activation name (string array)
#   tied{i}            0/1 flag
#   alpha{i}, beta{i}  scaled-tanh parameters (stored for every layer)


def save_network(path, net: NetworkParams) -> None:
    payload = {"meta": np.array([len(net.encoder), len(net.decoder)], dtype=np.int64)}
    for i, layer in enumerate(net.layers()):
        payload[f"w{i}"] = layer.weight
        payload[f"act{i}"] = np.array(layer.activation)
        payload[f"tied{i}"] = np.array(int(layer.tied))
        payload[f"alpha{i}"] = np.array(layer.alpha)
        payload[f"beta{i}"] = np.array(layer.beta)
    np.savez(path, **payload)


def load_network(path) -> NetworkParams:
    with np.load(path) as data:
        n_enc, n_dec = (int(v) for v in data["meta"])
        layers = []
        for i in range(n_enc + 1 + n_dec):
            layers.append(DenseLayer(
                weight=np.array(data[f"w{i}"], dtype=np.float64),
                activation=str(data[f"act{i}"]),
                tied=bool(int(data[f"tied{i}"])),
                alpha=float(data[f"alpha{i}"]),
                beta=float(data[f"beta{i}"]),
            ))
    return NetworkParams(encoder=layers[:n_enc], s_layer=layers[n_enc],
                         decoder=layers[n_enc + 1:])
