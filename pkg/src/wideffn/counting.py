"""Exact parameter arithmetic, computed from the config alone.

Counts never materialize tensors, so table-scale models (hundreds of
millions of parameters) cost microseconds. build_model must agree with
these numbers exactly; the test suite cross-checks the census at small
shapes for every preset.

Breakdown convention: the named buckets (embedding, *_attn, *_ffn) hold
matrix entries only; every layer-norm gain/bias pair lands in
'layer_norms' and every projection/FFN bias in 'biases'. A tied
encoder-decoder FFN is attributed to 'enc_ffn'.
"""

from __future__ import annotations

import dataclasses

from .config import ModelConfig, SharingSpec
from .errors import ConfigError

BREAKDOWN_KEYS = (
    "embedding",
    "enc_attn",
    "enc_ffn",
    "dec_self_attn",
    "dec_cross_attn",
    "dec_ffn",
    "layer_norms",
    "biases",
)


def _attn_physical(rule: str, n_layers: int) -> int:
    if n_layers == 0:
        return 0
    return 1 if rule == "SharedAll" else n_layers


def count_params(config: ModelConfig) -> tuple[int, dict[str, int]]:
    """Total parameter count and its breakdown for one configuration."""
    config = config.validate()
    d = config.d_model
    sharing = config.sharing
    out = {key: 0 for key in BREAKDOWN_KEYS}
    out["embedding"] = config.vocab_size * d

    def add_attention(bucket: str, n_phys: int):
        out[bucket] += n_phys * 4 * d * d
        out["biases"] += n_phys * 4 * d
        out["layer_norms"] += n_phys * 2 * d

    def add_ffn(bucket: str, n_phys: int, width: int):
        out[bucket] += n_phys * 2 * d * width
        out["biases"] += n_phys * (width + d)
        out["layer_norms"] += n_phys * 2 * d

    if config.n_enc > 0:
        add_attention("enc_attn", _attn_physical(sharing.enc_self_attn, config.n_enc))
        if not sharing.tie_enc_dec_ffn:
            n_phys = sharing.enc_ffn.n_physical(config.n_enc)
            add_ffn("enc_ffn", n_phys, config.ffn_width("enc"))

    add_attention("dec_self_attn", _attn_physical(sharing.dec_self_attn, config.n_dec))
    if config.architecture == "encoder-decoder":
        add_attention("dec_cross_attn", _attn_physical(sharing.dec_cross_attn, config.n_dec))

    if sharing.tie_enc_dec_ffn:
        add_ffn("enc_ffn", 1, config.ffn_width("enc"))
    else:
        n_phys = sharing.dec_ffn.n_physical(config.n_dec)
        add_ffn("dec_ffn", n_phys, config.ffn_width("dec"))

    return sum(out.values()), out


def baseline_of(config: ModelConfig) -> ModelConfig:
    """Same shape with Individual FFNs/attention everywhere, no shared width."""
    return dataclasses.replace(
        config, sharing=SharingSpec(), d_ff_shared=None
    ).validate()


def percent_of_baseline(config: ModelConfig) -> float:
    """Parameter count as a percentage of the unshared same-shape model."""
    total, _ = count_params(config)
    base_total, _ = count_params(baseline_of(config))
    return 100.0 * total / base_total


def one_wide_dff(config: ModelConfig) -> int:
    """Width that spends one side's whole shared-FFN budget in a single FFN:
    (n_enc + n_dec) * d_ff."""
    if config.architecture != "encoder-decoder":
        raise ConfigError("the widened single-FFN width is defined for encoder-decoder models")
    return (config.n_enc + config.n_dec) * config.d_ff


def shared_side_savings(n_layers: int, d_model: int, width: int) -> dict[str, int]:
    """Parameters removed when one side's N individual FFNs collapse to one.

    'matrices' is the widely quoted (N-1)(2*d*w + w + d) term split into its
    matrix and bias parts; collapsing also removes N-1 layer-norm pairs, so
    the exact total includes a (N-1)*2*d term.
    """
    if n_layers < 1:
        raise ConfigError("need at least one layer")
    folds = n_layers - 1
    matrices = folds * 2 * d_model * width
    biases = folds * (width + d_model)
    layer_norms = folds * 2 * d_model
    return {
        "matrices": matrices,
        "biases": biases,
        "layer_norms": layer_norms,
        "total": matrices + biases + layer_norms,
    }
