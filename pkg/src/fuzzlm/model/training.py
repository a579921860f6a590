"""Adam optimizer, evaluation metrics and the epoch training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..corpus import SymbolVocabulary, WindowedDataset
from ..errors import ContractViolation, GradientError
from .network import PROB_FLOOR, backward_batch, forward_batch
from .params import ModelParams, ModelSpec, init_params

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 256


@dataclass
class AdamState:
    """First/second moment estimates, one pair per parameter tensor."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m=[np.zeros_like(t) for t in params.tensors()],
            v=[np.zeros_like(t) for t in params.tensors()],
        )


def adam_step(
    params: ModelParams, grads: ModelParams, state: AdamState, lr: float
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, applied in place on ``params``.

    Aborts (raising ``GradientError``) before touching any tensor if a
    gradient contains NaN or Inf.
    """
    g_tensors = grads.tensors()
    p_tensors = params.tensors()
    if len(g_tensors) != len(p_tensors):
        raise ContractViolation("gradient structure does not match parameters")
    for name_grad, g in zip(grads.named_tensors(), g_tensors):
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in {name_grad[0]}; step aborted")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(p_tensors, g_tensors, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class EvalMetrics:
    accuracy: float
    error: float       # mean cross-entropy, nats
    perplexity: float  # 2 ** (mean base-2 cross-entropy)

    def finite(self) -> bool:
        return all(np.isfinite([self.accuracy, self.error, self.perplexity]))


def evaluate(
    params: ModelParams, dataset: WindowedDataset, batch_size: int = DEFAULT_BATCH_SIZE
) -> EvalMetrics:
    """Accuracy, mean cross-entropy and perplexity over a dataset.

    Accuracy counts argmax hits; perplexity follows the base-2 definition,
    accumulated in float64.
    """
    n = len(dataset)
    if n == 0:
        raise ContractViolation("cannot evaluate on an empty dataset")
    hits = 0
    nll_sum = 0.0  # natural log
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        windows, labels = dataset.batch(idx)
        probs, _ = forward_batch(params, windows, keep_cache=False)
        hits += int((probs.argmax(axis=1) == labels).sum())
        p = np.maximum(probs[np.arange(len(labels)), labels].astype(np.float64), PROB_FLOOR)
        nll_sum += float(-np.log(p).sum())
    mean_nll = nll_sum / n
    perplexity = float(2.0 ** (mean_nll / np.log(2.0)))
    return EvalMetrics(accuracy=hits / n, error=mean_nll, perplexity=perplexity)


@dataclass
class Checkpoint:
    """Everything needed to resume or deploy a model after one epoch."""

    spec: ModelSpec
    params: ModelParams
    vocabulary: SymbolVocabulary
    epoch: int
    metrics: EvalMetrics


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint] = field(default_factory=list)
    diverged: bool = False


def train(
    dataset: WindowedDataset,
    spec: ModelSpec,
    *,
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    validation: WindowedDataset | None = None,
    vocabulary: SymbolVocabulary | None = None,
    dtype=np.float32,
    log=None,
) -> TrainResult:
    """Train a fresh model for ``epochs`` epochs; one checkpoint per epoch.

    Mini-batch order is a per-epoch permutation drawn from ``seed``; dropout
    masks come from a second stream derived from the same seed, so the whole
    trajectory is reproducible.  If validation metrics become non-finite
    training stops and the earlier checkpoints are kept.

    ``validation`` defaults to the training set; ``log`` is called with one
    line per epoch.
    """
    if len(dataset) == 0:
        raise ContractViolation("cannot train on an empty dataset")
    if validation is None:
        validation = dataset
    if vocabulary is None:
        vocabulary = SymbolVocabulary(range(spec.vocab_size))
    root = np.random.SeedSequence(seed)
    order_seq, dropout_seq, init_seq = root.spawn(3)
    params = init_params(spec, np.random.default_rng(init_seq).integers(2**31), dtype)
    state = AdamState.for_params(params)
    order_rng = np.random.default_rng(order_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    result = TrainResult()
    n = len(dataset)
    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            windows, labels = dataset.batch(idx)
            probs, cache = forward_batch(
                params, windows, train=True, dropout_rng=dropout_rng
            )
            p = np.maximum(
                probs[np.arange(len(labels)), labels].astype(np.float64), PROB_FLOOR
            )
            epoch_loss += float(-np.log(p).sum())
            grads = backward_batch(params, cache, labels)
            params, state = adam_step(params, grads, state, lr)
        metrics = evaluate(params, validation, batch_size)
        line = (
            f"epoch {epoch} loss {epoch_loss / n:.4f} "
            f"val_acc {metrics.accuracy:.4f} val_err {metrics.error:.4f} "
            f"val_ppl {metrics.perplexity:.4f}"
        )
        logger.info(line)
        if log is not None:
            log(line)
        if not metrics.finite() or not params.all_finite():
            logger.warning("training diverged at epoch %d; keeping prior checkpoints", epoch)
            result.diverged = True
            return result
        result.checkpoints.append(
            Checkpoint(
                spec=spec,
                params=params.copy(),
                vocabulary=vocabulary,
                epoch=epoch,
                metrics=metrics,
            )
        )
    return result


def best_checkpoint(result: TrainResult) -> Checkpoint:
    """Checkpoint with the minimum validation error."""
    if not result.checkpoints:
        raise ContractViolation("no checkpoints to choose from")
    return min(result.checkpoints, key=lambda ck: ck.metrics.error)
