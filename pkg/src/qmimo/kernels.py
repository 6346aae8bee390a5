"""Fused training kernels for the standard equalizer template.

The per-subcarrier networks are tiny, so a Python-level epoch loop spends
most of its time on call overhead. The whole optimization loop (forward,
backward, Adam/SGD update, beta sweep, plateau stop) is therefore a single
kernel compiled with numba when available. The identical source also runs
as plain numpy, selected by the QMIMO_NUMBA environment variable:

    QMIMO_NUMBA=0   force the pure-numpy path
    QMIMO_NUMBA=1   require numba (ImportError if missing)
    unset           use numba when importable

Both paths are built by `_build(jit)` from one function body, so they cannot
drift apart. `qmimo bench` times one against the other.

Weight layout (column-vector convention, W @ x):
    w1 (12K, 2R)  w2 (6K, 12K)  w3 (2K, 6K)   ReLU encoder
    ws (2K, 2K)                                scaled-tanh symbol head
    w4 (6K, 2K)   w5 (12K, 6K)  w6 (2R, 12K)  ReLU decoder (FDNN only)
The reconstruction target of the decoder is the network input itself.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "QMIMO_NUMBA"

STATUS_OK = 0
STATUS_NONFINITE = 1


def _numba_requested() -> bool:
    flag = os.environ.get(_ENV_FLAG, "").strip()
    if flag == "0":
        return False
    if flag == "1":
        import numba  # noqa: F401  fail loudly when explicitly required

        return True
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _build(jit: bool):
    """Construct the kernel pair (train, forward_head) for one backend."""
    if jit:
        from numba import njit

        deco = njit(cache=True, fastmath=False)
    else:
        def deco(fn):
            return fn

    @deco
    def tie_sym(g):
        # fold both block appearances of each tied parameter, then mirror
        ho = g.shape[0] // 2
        hi = g.shape[1] // 2
        ga = g[:ho, :hi] + g[ho:, hi:]
        gb = g[:ho, hi:] - g[ho:, :hi]
        out = np.empty_like(g)
        out[:ho, :hi] = ga
        out[:ho, hi:] = gb
        out[ho:, :hi] = -gb
        out[ho:, hi:] = ga
        return out

    @deco
    def project(w):
        ho = w.shape[0] // 2
        hi = w.shape[1] // 2
        w[ho:, :hi] = -w[:ho, hi:]
        w[ho:, hi:] = w[:ho, :hi]

    @deco
    def update(w, g, m, v, adam, lr, b1, b2, eps, bias1, bias2):
        if adam:
            m[:, :] = b1 * m + (1.0 - b1) * g
            v[:, :] = b2 * v + (1.0 - b2) * (g * g)
            w -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
        else:
            w -= lr * g

    @deco
    def relu_mask(z):
        return np.where(z > 0.0, 1.0, 0.0)

    @deco
    def forward_head(w1, w2, w3, ws, alpha, beta, x):
        """Encoder + symbol head outputs for a (2R, T) block."""
        a1 = np.maximum(w1 @ x, 0.0)
        a2 = np.maximum(w2 @ a1, 0.0)
        a3 = np.maximum(w3 @ a2, 0.0)
        return alpha * np.tanh(beta * (ws @ a3))

    @deco
    def train(w1, w2, w3, ws, w4, w5, w6,
              m1, m2, m3, ms, m4, m5, m6,
              v1, v2, v3, vs, v4, v5, v6,
              x, s_tgt,
              has_decoder, tied, lam,
              alpha, beta0, beta_grid, sweep_every, sweep_per_batch,
              adam, lr, b1, b2, eps,
              max_epochs, plateau_tol, patience, batch_size,
              loss_hist, beta_hist):
        n_pilot = x.shape[1]
        if batch_size <= 0 or batch_size > n_pilot:
            batch_size = n_pilot
        n_batches = (n_pilot + batch_size - 1) // batch_size
        beta = beta0
        step = 0
        best = 1e300
        stale = 0
        epochs_run = 0
        status = STATUS_OK
        for epoch in range(max_epochs):
            ep_comb = 0.0
            ep_sup = 0.0
            ep_unsup = 0.0
            for b in range(n_batches):
                lo = b * batch_size
                hi = min(lo + batch_size, n_pilot)
                nb = float(hi - lo)
                xb = np.ascontiguousarray(x[:, lo:hi])
                sb = np.ascontiguousarray(s_tgt[:, lo:hi])

                z1 = w1 @ xb
                a1 = np.maximum(z1, 0.0)
                z2 = w2 @ a1
                a2 = np.maximum(z2, 0.0)
                z3 = w3 @ a2
                a3 = np.maximum(z3, 0.0)
                zs = ws @ a3

                # beta sweep on the current batch, parameters frozen; the
                # encoder output does not depend on beta so zs is reused
                if sweep_per_batch or (b == 0 and epoch % sweep_every == 0):
                    best_loss = np.inf
                    for gi in range(beta_grid.shape[0]):
                        cand = beta_grid[gi]
                        cand_out = alpha * np.tanh(cand * zs)
                        cand_loss = np.sum((cand_out - sb) ** 2) / nb
                        if cand_loss < best_loss:
                            best_loss = cand_loss
                            beta = cand

                th = np.tanh(beta * zs)
                s_out = alpha * th
                sup = np.sum((s_out - sb) ** 2) / nb
                unsup = 0.0

                ds = (2.0 / nb) * (s_out - sb) * (alpha * beta * (1.0 - th * th))
                g_ws = ds @ a3.T
                d3 = ws.T @ ds

                if has_decoder:
                    z4 = w4 @ a3
                    a4 = np.maximum(z4, 0.0)
                    z5 = w5 @ a4
                    a5 = np.maximum(z5, 0.0)
                    z6 = w6 @ a5
                    a6 = np.maximum(z6, 0.0)
                    unsup = np.sum((a6 - xb) ** 2) / nb
                    d6 = (2.0 * lam / nb) * (a6 - xb) * relu_mask(z6)
                    g6 = d6 @ a5.T
                    d5 = (w6.T @ d6) * relu_mask(z5)
                    g5 = d5 @ a4.T
                    d4 = (w5.T @ d5) * relu_mask(z4)
                    g4 = d4 @ a3.T
                    d3 = d3 + w4.T @ d4

                d3 = d3 * relu_mask(z3)
                g3 = d3 @ a2.T
                d2 = (w3.T @ d3) * relu_mask(z2)
                g2 = d2 @ a1.T
                d1 = (w2.T @ d2) * relu_mask(z1)
                g1 = d1 @ xb.T

                if tied:
                    g1 = tie_sym(g1)
                    g2 = tie_sym(g2)
                    g3 = tie_sym(g3)

                step += 1
                bias1 = 1.0 - b1**step
                bias2 = 1.0 - b2**step
                update(w1, g1, m1, v1, adam, lr, b1, b2, eps, bias1, bias2)
                update(w2, g2, m2, v2, adam, lr, b1, b2, eps, bias1, bias2)
                update(w3, g3, m3, v3, adam, lr, b1, b2, eps, bias1, bias2)
                update(ws, g_ws, ms, vs, adam, lr, b1, b2, eps, bias1, bias2)
                if tied:
                    project(w1)
                    project(w2)
                    project(w3)
                if has_decoder:
                    if tied:
                        g4 = tie_sym(g4)
                        g5 = tie_sym(g5)
                        g6 = tie_sym(g6)
                    update(w4, g4, m4, v4, adam, lr, b1, b2, eps, bias1, bias2)
                    update(w5, g5, m5, v5, adam, lr, b1, b2, eps, bias1, bias2)
                    update(w6, g6, m6, v6, adam, lr, b1, b2, eps, bias1, bias2)
                    if tied:
                        project(w4)
                        project(w5)
                        project(w6)

                ep_sup += sup
                ep_unsup += unsup
                ep_comb += sup + lam * unsup

            ep_comb /= n_batches
            ep_sup /= n_batches
            ep_unsup /= n_batches
            loss_hist[epoch, 0] = ep_comb
            loss_hist[epoch, 1] = ep_sup
            loss_hist[epoch, 2] = ep_unsup
            beta_hist[epoch] = beta
            epochs_run = epoch + 1
            if not np.isfinite(ep_comb):
                status = STATUS_NONFINITE
                break
            if (best - ep_comb) / max(best, 1e-300) < plateau_tol:
                stale += 1
                if stale >= patience:
                    break
            else:
                stale = 0
            if ep_comb < best:
                best = ep_comb
        return epochs_run, beta, status

    return train, forward_head


_KERNELS: dict[str, tuple] = {}


def backend() -> str:
    """Active backend name, resolved once from the environment."""
    if "active" not in _KERNELS:
        _KERNELS["active"] = ("numba",) if _numba_requested() else ("numpy",)
    return _KERNELS["active"][0]


def get_kernels(force: str | None = None):
    """(train, forward_head) pair for `force` or for the active backend."""
    name = force or backend()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name not in _KERNELS:
        _KERNELS[name] = _build(jit=(name == "numba"))
    return _KERNELS[name]
