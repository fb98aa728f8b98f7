"""Transformer blocks, the deterministic builder, and forward passes.

Post-norm residual blocks throughout: sublayer output is
layer_norm(x + f(x)). A NoOp FFN removes the whole sublayer, residual and
normalization included, so the layer output is exactly the attention
output. Sharing works by aliasing: shared blocks hold the same Tensor
objects, so the tape accumulates their gradients automatically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, DataError
from .sharing import resolve_ffn_assignment
from .store import ParamStore
from .tensor import (
    Tensor,
    add,
    add_bias,
    concat_cols,
    cross_entropy,
    dropout,
    embedding_lookup,
    layer_norm,
    mask_fill,
    matmul,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    transpose,
)
from .vocab import BOS, EOS, PAD

ATTN_PARTS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln_gain", "ln_bias")
FFN_PARTS = ("w1", "b1", "w2", "b2", "ln_gain", "ln_bias")


@dataclass
class AttentionBlock:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


@dataclass
class FFNBlock:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


def _xavier(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)).astype(np.float32))


def _make_attention(store: ParamStore, rng, prefix: str, d: int) -> AttentionBlock:
    parts = {
        "wq": _xavier(rng, d, d), "bq": Tensor(np.zeros(d, dtype=np.float32)),
        "wk": _xavier(rng, d, d), "bk": Tensor(np.zeros(d, dtype=np.float32)),
        "wv": _xavier(rng, d, d), "bv": Tensor(np.zeros(d, dtype=np.float32)),
        "wo": _xavier(rng, d, d), "bo": Tensor(np.zeros(d, dtype=np.float32)),
        "ln_gain": Tensor(np.ones(d, dtype=np.float32)),
        "ln_bias": Tensor(np.zeros(d, dtype=np.float32)),
    }
    for name in ATTN_PARTS:
        store.add(f"{prefix}.{name}", parts[name])
    return AttentionBlock(**parts)


def _make_ffn(store: ParamStore, rng, prefix: str, d: int, width: int) -> FFNBlock:
    parts = {
        "w1": _xavier(rng, d, width), "b1": Tensor(np.zeros(width, dtype=np.float32)),
        "w2": _xavier(rng, width, d), "b2": Tensor(np.zeros(d, dtype=np.float32)),
        "ln_gain": Tensor(np.ones(d, dtype=np.float32)),
        "ln_bias": Tensor(np.zeros(d, dtype=np.float32)),
    }
    for name in FFN_PARTS:
        store.add(f"{prefix}.{name}", parts[name])
    return FFNBlock(**parts)


def _bind_block(store: ParamStore, logical_prefix: str, canonical_prefix: str, parts):
    for name in parts:
        store.bind(f"{logical_prefix}.{name}", f"{canonical_prefix}.{name}")


def sinusoidal_positions(n_positions: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos position table, shape (n_positions, d_model), float32."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    idx = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / d_model)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


def causal_mask(n: int) -> np.ndarray:
    """keep[i, j] is True when position i may attend to position j <= i."""
    return np.tril(np.ones((n, n), dtype=bool))


def prefix_lm_mask(prefix_len: int, suffix_len: int) -> np.ndarray:
    """Bidirectional visibility inside the prefix, causal over the suffix."""
    if prefix_len < 0 or suffix_len < 1:
        raise ConfigError(f"bad prefix mask sizes ({prefix_len}, {suffix_len})")
    n = prefix_len + suffix_len
    keep = causal_mask(n)
    keep[:, :prefix_len] = True
    return keep


class TransformerModel:
    """A built model: config, parameter store, and resolved blocks."""

    def __init__(self, config: ModelConfig, store: ParamStore, embedding: Tensor,
                 enc_attn, enc_ffn, dec_self, dec_cross, dec_ffn):
        self.config = config
        self.store = store
        self.embedding = embedding
        self.enc_attn: list[AttentionBlock] = enc_attn
        self.enc_ffn: list[FFNBlock | None] = enc_ffn
        self.dec_self: list[AttentionBlock] = dec_self
        self.dec_cross: list[AttentionBlock | None] = dec_cross
        self.dec_ffn: list[FFNBlock | None] = dec_ffn

    # -- decode protocol -------------------------------------------------

    def encode(self, src_tokens: list[int]) -> Tensor | None:
        if self.config.architecture == "decoder-only":
            return None
        out, _ = encoder_forward(self, list(src_tokens) + [EOS])
        return out

    def step_logits(self, enc_ctx, src_tokens: list[int], prefix: list[int]) -> np.ndarray:
        """Next-token logits after the given generated prefix."""
        if self.config.architecture == "decoder-only":
            seq = list(src_tokens) + [EOS, BOS] + list(prefix)
            logits, _ = decoder_forward(self, None, seq, prefix_len=len(src_tokens) + 1)
        else:
            logits, _ = decoder_forward(self, enc_ctx, [BOS] + list(prefix))
        return np.asarray(logits.data[-1], dtype=np.float32)

    # -- training protocol ------------------------------------------------

    def loss_for_pair(self, src: list[int], tgt: list[int], train: bool = False,
                      rng: np.random.Generator | None = None):
        """Teacher-forced loss for one pair; returns (loss, n_predictions).

        Encoder-decoder: encoder sees src + <eos>, decoder sees <bos> + tgt
        and predicts tgt + <eos>. Decoder-only: one sequence
        src + <eos> + <bos> + tgt with the source span (incl. <eos>)
        bidirectional; loss covers the target span plus the final <eos>.
        """
        if self.config.architecture == "decoder-only":
            seq = list(src) + [EOS, BOS] + list(tgt)
            prefix_len = len(src) + 1
            labels = [PAD] * prefix_len + list(tgt) + [EOS]
            logits, _ = decoder_forward(self, None, seq, prefix_len=prefix_len,
                                        train=train, rng=rng)
            loss = cross_entropy(logits, labels, ignore_index=PAD)
            return loss, len(tgt) + 1
        enc_out, _ = encoder_forward(self, list(src) + [EOS], train=train, rng=rng)
        logits, _ = decoder_forward(self, enc_out, [BOS] + list(tgt), train=train, rng=rng)
        labels = list(tgt) + [EOS]
        loss = cross_entropy(logits, labels, ignore_index=PAD)
        return loss, len(labels)

    def predictions_for_pair(self, src: list[int], tgt: list[int]):
        """Teacher-forced argmax ids and gold labels for accuracy counting."""
        if self.config.architecture == "decoder-only":
            seq = list(src) + [EOS, BOS] + list(tgt)
            prefix_len = len(src) + 1
            logits, _ = decoder_forward(self, None, seq, prefix_len=prefix_len)
            rows = np.asarray(logits.data)[prefix_len:]
            labels = list(tgt) + [EOS]
        else:
            enc_out, _ = encoder_forward(self, list(src) + [EOS])
            logits, _ = decoder_forward(self, enc_out, [BOS] + list(tgt))
            rows = np.asarray(logits.data)
            labels = list(tgt) + [EOS]
        return rows.argmax(axis=1).tolist(), labels


def build_model(config: ModelConfig, seed: int = 0) -> TransformerModel:
    """Materialize parameters in a fixed creation order and wire aliases."""
    config = config.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d = config.d_model

    embedding = store.add("embedding", _xavier(rng, config.vocab_size, d))
    for site in ("src_embed", "tgt_embed", "out_proj"):
        store.bind(site, "embedding")

    def attn_stack(side: str, kind: str, n_layers: int, sharing_rule: str):
        n_phys = 1 if sharing_rule == "SharedAll" else n_layers
        blocks = [_make_attention(store, rng, f"{side}.{kind}{m}", d) for m in range(n_phys)]
        per_layer = []
        for i in range(n_layers):
            m = 0 if sharing_rule == "SharedAll" else i
            _bind_block(store, f"{side}.layer{i}.{kind}", f"{side}.{kind}{m}", ATTN_PARTS)
            per_layer.append(blocks[m])
        return per_layer

    def ffn_stack(side: str, n_layers: int, strategy, width: int, canonical_side: str | None = None):
        assignment = resolve_ffn_assignment(strategy, n_layers)
        if not assignment:
            return [None] * n_layers, []
        n_phys = max(assignment) + 1
        cside = canonical_side or side
        blocks = [_make_ffn(store, rng, f"{cside}.ffn{m}", d, width) for m in range(n_phys)]
        per_layer = []
        for i, m in enumerate(assignment):
            _bind_block(store, f"{side}.layer{i}.ffn", f"{cside}.ffn{m}", FFN_PARTS)
            per_layer.append(blocks[m])
        return per_layer, blocks

    sharing = config.sharing
    enc_attn, enc_ffn = [], []
    if config.n_enc > 0:
        enc_attn = attn_stack("enc", "sa", config.n_enc, sharing.enc_self_attn)
        if sharing.tie_enc_dec_ffn:
            enc_ffn, tied_blocks = ffn_stack(
                "enc", config.n_enc, sharing.enc_ffn, config.ffn_width("enc"),
                canonical_side="encdec",
            )
        else:
            enc_ffn, _ = ffn_stack("enc", config.n_enc, sharing.enc_ffn, config.ffn_width("enc"))

    dec_self = attn_stack("dec", "sa", config.n_dec, sharing.dec_self_attn)
    dec_cross: list[AttentionBlock | None]
    if config.architecture == "encoder-decoder":
        dec_cross = attn_stack("dec", "ca", config.n_dec, sharing.dec_cross_attn)
    else:
        dec_cross = [None] * config.n_dec

    if sharing.tie_enc_dec_ffn:
        # Decoder layers alias the single encoder/decoder FFN made above.
        dec_ffn = []
        for i in range(config.n_dec):
            _bind_block(store, f"dec.layer{i}.ffn", "encdec.ffn0", FFN_PARTS)
            dec_ffn.append(tied_blocks[0])
    else:
        dec_ffn, _ = ffn_stack("dec", config.n_dec, sharing.dec_ffn, config.ffn_width("dec"))

    return TransformerModel(config, store, embedding, enc_attn, enc_ffn,
                            dec_self, dec_cross, dec_ffn)


def attention_forward(q_in: Tensor, k_in: Tensor, v_in: Tensor, block: AttentionBlock,
                      mask: np.ndarray | None = None, *, heads: int = 1,
                      dropout_p: float = 0.0, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Multi-head attention sublayer: projection, residual from q_in, norm.

    A fully masked score row degrades to a uniform attention row, because
    max subtraction inside the softmax cancels the shared fill value.
    """
    d = q_in.shape[1]
    if d % heads != 0:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    q = add_bias(matmul(q_in, block.wq), block.bq)
    k = add_bias(matmul(k_in, block.wk), block.bk)
    v = add_bias(matmul(v_in, block.wv), block.bv)
    if mask is not None and mask.shape != (q_in.shape[0], k_in.shape[0]):
        raise ConfigError(f"mask shape {mask.shape} vs scores ({q_in.shape[0]}, {k_in.shape[0]})")
    outs = []
    inv_sqrt = 1.0 / math.sqrt(dh)
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = q, k, v
        else:
            qh = slice_cols(q, h * dh, (h + 1) * dh)
            kh = slice_cols(k, h * dh, (h + 1) * dh)
            vh = slice_cols(v, h * dh, (h + 1) * dh)
        scores = scale(matmul(qh, transpose(kh)), inv_sqrt)
        if mask is not None:
            scores = mask_fill(scores, mask)
        weights = softmax_rows(scores)
        outs.append(matmul(weights, vh))
    merged = outs[0] if heads == 1 else concat_cols(outs)
    proj = add_bias(matmul(merged, block.wo), block.bo)
    if train and dropout_p > 0.0:
        proj = dropout(proj, dropout_p, rng)
    return layer_norm(add(q_in, proj), block.ln_gain, block.ln_bias)


def ffn_forward(x: Tensor, block: FFNBlock | None, *, dropout_p: float = 0.0,
                train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Position-wise FFN sublayer; block None is the exact identity."""
    if block is None:
        return x
    h = relu(add_bias(matmul(x, block.w1), block.b1))
    y = add_bias(matmul(h, block.w2), block.b2)
    if train and dropout_p > 0.0:
        y = dropout(y, dropout_p, rng)
    return layer_norm(add(x, y), block.ln_gain, block.ln_bias)


def _embed(model: TransformerModel, ids: list[int], train: bool, rng) -> Tensor:
    cfg = model.config
    if len(ids) == 0:
        raise DataError("empty token sequence")
    if len(ids) > cfg.max_len:
        raise DataError(f"sequence length {len(ids)} exceeds max_len {cfg.max_len}")
    x = embedding_lookup(model.embedding, ids)
    x = scale(x, math.sqrt(cfg.d_model))
    x = add(x, Tensor(sinusoidal_positions(len(ids), cfg.d_model)))
    if train and cfg.dropout > 0.0:
        x = dropout(x, cfg.dropout, rng)
    return x


def encoder_forward(model: TransformerModel, src_ids: list[int], train: bool = False,
                    rng: np.random.Generator | None = None):
    """Run the encoder stack; returns (output, taps keyed '<i>.sa'/'<i>.ffn')."""
    cfg = model.config
    if cfg.architecture != "encoder-decoder":
        raise ConfigError("model has no encoder")
    x = _embed(model, src_ids, train, rng)
    taps: dict[str, Tensor] = {}
    for i in range(cfg.n_enc):
        x = attention_forward(x, x, x, model.enc_attn[i], mask=None, heads=cfg.heads,
                              dropout_p=cfg.dropout, train=train, rng=rng)
        taps[f"{i}.sa"] = x
        block = model.enc_ffn[i]
        if block is not None:
            x = ffn_forward(x, block, dropout_p=cfg.dropout, train=train, rng=rng)
            taps[f"{i}.ffn"] = x
    return x, taps


def decoder_forward(model: TransformerModel, enc_out: Tensor | None, ids: list[int],
                    prefix_len: int = 0, train: bool = False,
                    rng: np.random.Generator | None = None):
    """Run the decoder stack to vocabulary logits.

    Encoder-decoder mode needs enc_out and uses a causal self mask;
    decoder-only mode needs enc_out None and uses a prefix mask when
    prefix_len > 0. Returns (logits, taps keyed '<i>.sa'/'<i>.ca'/'<i>.ffn').
    """
    cfg = model.config
    if cfg.architecture == "encoder-decoder":
        if enc_out is None:
            raise ConfigError("encoder-decoder model needs encoder output")
    else:
        if enc_out is not None:
            raise ConfigError("decoder-only model takes no encoder output")
    x = _embed(model, ids, train, rng)
    n = len(ids)
    if prefix_len > 0:
        if prefix_len >= n:
            raise ConfigError(f"prefix_len {prefix_len} must leave a suffix in {n} positions")
        mask = prefix_lm_mask(prefix_len, n - prefix_len)
    else:
        mask = causal_mask(n)
    taps: dict[str, Tensor] = {}
    for i in range(cfg.n_dec):
        x = attention_forward(x, x, x, model.dec_self[i], mask=mask, heads=cfg.heads,
                              dropout_p=cfg.dropout, train=train, rng=rng)
        taps[f"{i}.sa"] = x
        if model.dec_cross[i] is not None:
            x = attention_forward(x, enc_out, enc_out, model.dec_cross[i], mask=None,
                                  heads=cfg.heads, dropout_p=cfg.dropout, train=train, rng=rng)
            taps[f"{i}.ca"] = x
        block = model.dec_ffn[i]
        if block is not None:
            x = ffn_forward(x, block, dropout_p=cfg.dropout, train=train, rng=rng)
            taps[f"{i}.ffn"] = x
    logits = matmul(x, transpose(model.embedding))
    return logits, taps
