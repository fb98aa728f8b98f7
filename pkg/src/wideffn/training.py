"""Optimization: inverse-sqrt schedule, Adam, and the training loop.

Batches are index groups over the corpus; each sentence runs at its own
length (no padding), and the batch loss is the token-weighted mean of the
per-pair losses, which equals the mean negative log-likelihood over all
predicted positions in the batch.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .counting import count_params
from .errors import ConfigError, NumericError
from .sharing import FFNStrategy
from .store import ParamStore
from .tensor import ComputeTape, add, recording, scale
from .transformer import TransformerModel, build_model
from .vocab import Corpus


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 7e-4
    warmup_steps: int = 4000

    def __post_init__(self):
        if self.base_lr <= 0 or self.warmup_steps < 1:
            raise ConfigError("schedule needs base_lr > 0 and warmup_steps >= 1")


def lr_at(schedule: Schedule, step: int) -> float:
    """Linear warmup to base_lr at warmup_steps, then inverse-sqrt decay."""
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    w = schedule.warmup_steps
    return schedule.base_lr * min(step * w**-1.5, step**-0.5) / w**-0.5


class AdamState:
    """First/second moment buffers per physical tensor plus the step count."""

    def __init__(self, store: ParamStore, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.physical.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.physical.items()}


def adam_step(store: ParamStore, state: AdamState, lr: float):
    """One Adam update over the store's physical tensors.

    Aborts (without mutating anything) if any gradient is non-finite.
    Tensors whose grad is None are treated as zero-gradient.
    """
    for name, p in store.physical.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in store.physical.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / np.float32(c1)
        v_hat = v / np.float32(c2)
        p.data -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(state.eps))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for at in range(0, n, batch_size):
        yield order[at : at + batch_size]


def train(model: TransformerModel, corpus: Corpus, steps: int, batch_size: int,
          seed: int = 0, schedule: Schedule | None = None,
          state: AdamState | None = None) -> list[float]:
    """Run `steps` optimizer updates; returns the per-step batch losses.

    Deterministic given (model parameters, corpus, steps, batch_size, seed):
    batch order and dropout draw from generators derived from `seed`.
    steps=0 returns [] and touches nothing.
    """
    if steps < 0 or batch_size < 1:
        raise ConfigError("need steps >= 0 and batch_size >= 1")
    if len(corpus) == 0:
        raise ConfigError("empty corpus")
    if schedule is None:
        schedule = Schedule()
    if state is None:
        state = AdamState(model.store)
    shuffle_rng = np.random.default_rng([seed, 0])
    dropout_rng = np.random.default_rng([seed, 1])
    losses: list[float] = []
    step = 0
    while step < steps:
        for batch in _batches(len(corpus), batch_size, shuffle_rng):
            if step >= steps:
                break
            step += 1
            model.store.zero_grad()
            tape = ComputeTape()
            with recording(tape):
                weighted = None
                n_tokens = 0
                for idx in batch:
                    src, tgt = corpus.pairs[int(idx)]
                    loss_i, n_i = model.loss_for_pair(src, tgt, train=True, rng=dropout_rng)
                    n_tokens += n_i
                    piece = scale(loss_i, float(n_i))
                    weighted = piece if weighted is None else add(weighted, piece)
                batch_loss = scale(weighted, 1.0 / n_tokens)
            tape.backward(batch_loss)
            adam_step(model.store, state, lr_at(schedule, state.t + 1))
            losses.append(float(batch_loss.data))
    return losses


def token_accuracy(model: TransformerModel, corpus: Corpus, limit: int | None = None) -> float:
    """Teacher-forced next-token accuracy over the corpus (or its first
    `limit` pairs)."""
    pairs = corpus.pairs if limit is None else corpus.pairs[:limit]
    if not pairs:
        raise ConfigError("empty corpus")
    hit = 0
    total = 0
    for src, tgt in pairs:
        pred, gold = model.predictions_for_pair(src, tgt)
        hit += sum(int(p == g) for p, g in zip(pred, gold))
        total += len(gold)
    return hit / total


def ffn_dim_sweep(base_config: ModelConfig, side: str, dims: list[int], corpus: Corpus,
                  steps: int, batch_size: int, seed: int = 0,
                  schedule: Schedule | None = None) -> list[dict]:
    """Train one fresh model per FFN width on the chosen side.

    Width 0 removes that side's FFNs (NoOp); any other width rewidths the
    side's Individual FFNs. Rows report the width, side, teacher-forced
    token accuracy, and exact parameter count. dims=[base d_ff] reproduces
    the unmodified baseline run.
    """
    if side not in ("encoder", "decoder"):
        raise ConfigError(f"side must be 'encoder' or 'decoder', got {side!r}")
    base_config = base_config.validate()
    attr = "enc_ffn" if side == "encoder" else "dec_ffn"
    strategy = getattr(base_config.sharing, attr)
    if strategy.kind != "Individual":
        raise ConfigError("width sweeps are defined over Individual FFN stacks")
    rows = []
    for dim in dims:
        if dim < 0:
            raise ConfigError(f"negative width {dim}")
        if dim == 0:
            sharing = dataclasses.replace(base_config.sharing, **{attr: FFNStrategy("NoOp")})
            cfg = dataclasses.replace(base_config, sharing=sharing)
        else:
            key = "d_ff_enc" if side == "encoder" else "d_ff_dec"
            cfg = dataclasses.replace(base_config, **{key: dim})
        cfg = cfg.validate()
        model = build_model(cfg, seed=seed)
        train(model, corpus, steps=steps, batch_size=batch_size, seed=seed, schedule=schedule)
        acc = token_accuracy(model, corpus)
        total, _ = count_params(cfg)
        rows.append({
            "d_ff": dim,
            "side": side,
            "token_accuracy": acc,
            "params": total,
            "noop": dim == 0,
        })
    return rows
