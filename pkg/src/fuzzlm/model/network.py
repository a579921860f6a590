"""Forward and backward passes of the stacked (optionally bidirectional) LSTM.

Many-to-one: a batch of length-d symbol windows goes in, one next-symbol
distribution per window comes out.  Only the final hidden state of the top
layer feeds the output projection; for bidirectional models the two
directions' final states are merged by element-wise sum, and stacked layers
receive the per-timestep sum of both directions.

All arrays are time-major (d, B, ...) so each step touches contiguous
memory.  The backward pass writes pre-activation gradients in place over the
cached gate activations, so a cache is consumed by the backward call that
uses it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .params import CellParams, ModelParams, ModelSpec

PROB_FLOOR = 1e-12


def _sigmoid_inplace(x: np.ndarray) -> None:
    """Logistic sigmoid, in place.  exp overflow saturates cleanly to 0."""
    np.negative(x, out=x)
    with np.errstate(over="ignore"):
        np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)

@dataclass
class DirectionCache:
    gates: np.ndarray   # (d, B, 4u) post-activation, indexed by original time
    cell: np.ndarray    # (d, B, u) cell states
    hidden: np.ndarray  # (d, B, u)


@dataclass
class LayerCache:
    directions: list[DirectionCache]
    layer_input: np.ndarray          # indices (d, B) for layer 0, else (d, B, u)
    dropout_mask: np.ndarray | None  # mask applied to this layer's output


@dataclass
class ForwardCache:
    layers: list[LayerCache]
    h_final: np.ndarray  # (B, u)
    probs: np.ndarray    # (B, V)
    consumed: bool = False


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def loss(dist: np.ndarray, label: int) -> float:
    """Cross-entropy -ln p(label) with a probability floor of 1e-12."""
    return float(-np.log(max(float(dist[label]), PROB_FLOOR)))


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch of distributions."""
    p = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p.astype(np.float64), PROB_FLOOR)).mean())


def _direction_forward(
    cell: CellParams, x_proj: np.ndarray, forward_dir: bool, keep_gates: bool
) -> DirectionCache:
    """Run one direction of one layer.  ``x_proj`` is (d, B, 4u) with bias added.

    Results are stored at original time indices, so ``hidden[t]`` for the
    backward direction is the state having consumed x[d-1..t].  The gate
    array aliases ``x_proj`` (activations overwrite the pre-activations).
    """
    d, B, u4 = x_proj.shape
    u = u4 // 4
    s3 = 3 * u
    dtype = x_proj.dtype
    C = np.empty((d, B, u), dtype=dtype)
    H = np.empty((d, B, u), dtype=dtype)
    tmp = np.empty((B, u), dtype=dtype)
    zx = np.empty((B, u4), dtype=dtype)
    order = range(d) if forward_dir else range(d - 1, -1, -1)
    prev_t = None
    for t in order:
        z = x_proj[t]
        if prev_t is not None:
            np.dot(H[prev_t], cell.wh, out=zx)
            z += zx
        _sigmoid_inplace(z[:, :s3])
        np.tanh(z[:, s3:], out=z[:, s3:])
        i_ = z[:, :u]
        f_ = z[:, u : 2 * u]
        o_ = z[:, 2 * u : s3]
        g_ = z[:, s3:]
        ct = C[t]
        if prev_t is not None:
            np.multiply(f_, C[prev_t], out=ct)
        else:
            ct.fill(0)
        np.multiply(i_, g_, out=tmp)
        ct += tmp
        np.tanh(ct, out=tmp)
        np.multiply(o_, tmp, out=H[t])
        prev_t = t
    return DirectionCache(gates=x_proj if keep_gates else None, cell=C, hidden=H)


def _layer_x_proj(cell: CellParams, layer_input: np.ndarray, vocab_size: int) -> np.ndarray:
    """Input projection plus bias for a whole layer, (d, B, 4u)."""
    if layer_input.ndim == 2:  # symbol indices (d, B)
        xp = cell.wx[layer_input]  # gather rows
    else:
        d, B, in_dim = layer_input.shape
        xp = (layer_input.reshape(d * B, in_dim) @ cell.wx).reshape(
            d, B, cell.wx.shape[1]
        )
    xp += cell.b
    return xp


def forward_batch(
    params: ModelParams,
    windows: np.ndarray,
    *,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
    keep_cache: bool = True,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Probabilities (B, V) for a batch of length-d windows of symbol indices.

    With ``train=True`` dropout is applied between stacked layers (inverted
    scaling) using ``dropout_rng``.  ``keep_cache=False`` drops what only the
    backward pass needs (inference mode).
    """
    spec = params.spec
    windows = np.asarray(windows)
    if windows.ndim == 1:
        windows = windows[None, :]
    if windows.shape[1] != spec.window:
        raise ContractViolation(
            f"window length {windows.shape[1]} != model window {spec.window}"
        )
    if windows.size and (windows.min() < 0 or windows.max() >= spec.vocab_size):
        raise ContractViolation("symbol index outside vocabulary")
    if train and spec.dropout_p > 0 and dropout_rng is None:
        raise ContractViolation("training with dropout requires a dropout rng")

    dtype = params.dtype
    d = spec.window
    seq = windows.T.copy()  # (d, B) time-major indices
    layer_caches = []
    h_final = None
    for l, layer_cells in enumerate(params.cells):
        layer_input = seq
        dir_caches = []
        for dir_idx, cell in enumerate(layer_cells):
            xp = _layer_x_proj(cell, layer_input, spec.vocab_size)
            dir_caches.append(
                _direction_forward(cell, xp, forward_dir=(dir_idx == 0), keep_gates=keep_cache)
            )
        last = l == spec.layers - 1
        if last:
            if spec.bidirectional:
                h_final = dir_caches[0].hidden[d - 1] + dir_caches[1].hidden[0]
            else:
                h_final = dir_caches[0].hidden[d - 1]
            mask = None
        else:
            if spec.bidirectional:
                merged = dir_caches[0].hidden + dir_caches[1].hidden
            else:
                merged = dir_caches[0].hidden
            mask = None
            if train and spec.dropout_p > 0:
                keep = 1.0 - spec.dropout_p
                mask = (dropout_rng.random(merged.shape) < keep).astype(dtype)
                mask /= keep  # inverted scaling
                merged = merged * mask
            seq = merged
        layer_caches.append(
            LayerCache(directions=dir_caches, layer_input=layer_input, dropout_mask=mask)
        )

    logits = h_final @ params.wv + params.c
    probs = softmax(logits)
    cache = ForwardCache(layers=layer_caches, h_final=h_final, probs=probs) if keep_cache else None
    return probs, cache


def forward(
    params: ModelParams,
    x: np.ndarray,
    *,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Single-window forward pass; returns (distribution over V, cache)."""
    probs, cache = forward_batch(
        params, np.asarray(x)[None, :], train=train, dropout_rng=dropout_rng
    )
    return probs[0], cache


def predict_probs(params: ModelParams, windows: np.ndarray) -> np.ndarray:
    """Inference-only batched forward; no cache is retained."""
    probs, _ = forward_batch(params, windows, keep_cache=False)
    return probs


def _direction_backward(
    cell: CellParams,
    dcache: DirectionCache,
    dH_up: np.ndarray | None,
    dh_last: np.ndarray | None,
    layer_input: np.ndarray,
    vocab_size: int,
    forward_dir: bool,
    need_dx: bool,
) -> tuple[CellParams, np.ndarray | None]:
    """Backpropagate one direction through time.

    ``dH_up`` holds upstream gradients per original time index; for a
    many-to-one top layer it is None and ``dh_last`` is the gradient hitting
    the direction's final state.  The cached gate activations are overwritten
    with pre-activation gradients.  Returns gradients shaped like the cell
    plus the gradient w.r.t. the layer input (None when ``need_dx`` is false).
    """
    G, C, H = dcache.gates, dcache.cell, dcache.hidden
    d, B, u4 = G.shape
    u = u4 // 4
    s3 = 3 * u
    dtype = G.dtype
    if dh_last is not None:
        dh = dh_last.astype(dtype, copy=True)
    else:
        dh = np.zeros((B, u), dtype=dtype)
    dc = np.zeros((B, u), dtype=dtype)
    t1 = np.empty((B, u), dtype=dtype)
    t3 = np.empty((B, s3), dtype=dtype)
    tc = np.empty((B, u), dtype=dtype)
    tmp = np.empty((B, u), dtype=dtype)
    ibuf = np.empty((B, u), dtype=dtype)
    fbuf = np.empty((B, u), dtype=dtype)
    wh_t = np.ascontiguousarray(cell.wh.T)
    # Time order is the reverse of the processing order.
    order = range(d - 1, -1, -1) if forward_dir else range(d)
    for t in order:
        g = G[t]
        if dH_up is not None:
            np.add(dh, dH_up[t], out=dh)
        ibuf[:] = g[:, :u]
        fbuf[:] = g[:, u : 2 * u]
        o_ = g[:, 2 * u : s3]
        g_ = g[:, s3:]
        np.tanh(C[t], out=tc)
        prev_t = (t - 1 if forward_dir else t + 1)
        has_prev = 0 <= prev_t < d
        dz = g  # overwrite gates with pre-activation grads
        di = dz[:, :u]
        df = dz[:, u : 2 * u]
        do = dz[:, 2 * u : s3]
        dg = dz[:, s3:]
        # dc += dh * o * (1 - tanh(c)^2)
        np.multiply(tc, tc, out=t1)
        np.subtract(1.0, t1, out=t1)
        np.multiply(t1, o_, out=t1)
        np.multiply(t1, dh, out=t1)
        np.add(dc, t1, out=dc)
        np.multiply(dh, tc, out=tmp)  # post-activation do
        # activation derivatives, computed before the overwrite
        gs = g[:, :s3]
        np.multiply(gs, gs, out=t3)
        np.subtract(gs, t3, out=t3)  # sigm * (1 - sigm)
        np.multiply(g_, g_, out=t1)
        np.subtract(1.0, t1, out=t1)  # 1 - tanh^2
        np.multiply(dc, g_, out=di)
        if has_prev:
            np.multiply(dc, C[prev_t], out=df)
        else:
            df.fill(0)
        do[:] = tmp
        np.multiply(dc, ibuf, out=dg)
        np.multiply(dz[:, :s3], t3, out=dz[:, :s3])
        np.multiply(dg, t1, out=dg)
        np.dot(dz, wh_t, out=dh)
        np.multiply(dc, fbuf, out=dc)
    dZ_flat = G.reshape(d * B, u4)
    db = dZ_flat.sum(axis=0)
    # dwh: sum over steps of h_prev^T dz; the first processed step has no h_prev.
    if d > 1:
        if forward_dir:
            h_prev = H[: d - 1].reshape((d - 1) * B, u)
            dz_part = G[1:].reshape((d - 1) * B, u4)
        else:
            h_prev = H[1:].reshape((d - 1) * B, u)
            dz_part = G[: d - 1].reshape((d - 1) * B, u4)
        dwh = h_prev.T @ dz_part
    else:
        dwh = np.zeros_like(cell.wh)
    if layer_input.ndim == 2:  # symbol indices: one-hot GEMM
        n = d * B
        onehot = np.zeros((n, vocab_size), dtype=dtype)
        onehot[np.arange(n), layer_input.reshape(n)] = 1
        dwx = onehot.T @ dZ_flat
    else:
        dwx = layer_input.reshape(d * B, -1).T @ dZ_flat
    dx = None
    if need_dx:
        dx = (dZ_flat @ cell.wx.T).reshape(d, B, -1)
    return CellParams(wx=dwx, wh=dwh, b=db), dx


def backward_batch(
    params: ModelParams, cache: ForwardCache, labels: np.ndarray, *, mean: bool = True
) -> ModelParams:
    """Exact loss gradients for every tensor; consumes the cache.

    With ``mean=True`` gradients are for the batch-mean cross-entropy,
    otherwise for the summed loss (a single-example batch gives the plain
    per-example gradient either way).
    """
    if cache.consumed:
        raise ContractViolation("forward cache was already consumed by a backward pass")
    cache.consumed = True
    spec = params.spec
    labels = np.atleast_1d(np.asarray(labels))
    B = cache.probs.shape[0]
    if labels.shape[0] != B:
        raise ContractViolation("labels do not match the cached batch")
    d = spec.window
    dtype = params.dtype

    dlogits = cache.probs.astype(dtype, copy=True)
    dlogits[np.arange(B), labels] -= 1
    if mean and B > 1:
        dlogits /= B

    grads = ModelParams(spec=spec, cells=[], wv=None, c=None)
    grads.wv = cache.h_final.T @ dlogits
    grads.c = dlogits.sum(axis=0)
    dh_final = dlogits @ params.wv.T

    # Upstream gradient entering the top layer: the head gradient hits each
    # direction's final state only; lower layers get a full (d, B, u) signal.
    top = spec.layers - 1
    dseq = None
    grads.cells = [None] * spec.layers
    for l in range(top, -1, -1):
        lcache = cache.layers[l]
        if l == top:
            dH_up, dh_last = None, dh_final
        else:
            if lcache.dropout_mask is not None:
                dseq *= lcache.dropout_mask
            dH_up, dh_last = dseq, None  # sum merge: both directions share it
        need_dx = l > 0
        layer_grads = []
        dx_total = None
        for dir_idx, cell in enumerate(params.cells[l]):
            cell_grads, dx = _direction_backward(
                cell,
                lcache.directions[dir_idx],
                dH_up,
                dh_last,
                lcache.layer_input,
                spec.vocab_size,
                forward_dir=(dir_idx == 0),
                need_dx=need_dx,
            )
            layer_grads.append(cell_grads)
            if need_dx:
                dx_total = dx if dx_total is None else dx_total + dx
        grads.cells[l] = layer_grads
        dseq = dx_total
    return grads


def backward(params: ModelParams, cache: ForwardCache, label: int) -> ModelParams:
    """Gradients for a single cached example."""
    return backward_batch(params, cache, np.asarray([label]))
