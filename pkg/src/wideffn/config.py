"""Model configuration, validation, and the named experiment presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .sharing import FFNStrategy, resolve_ffn_assignment

ARCHITECTURES = ("encoder-decoder", "decoder-only")
ATTN_KINDS = ("Individual", "SharedAll")


@dataclass(frozen=True)
class SharingSpec:
    """Per-side FFN strategies plus attention sharing switches."""

    enc_ffn: FFNStrategy = FFNStrategy("Individual")
    dec_ffn: FFNStrategy = FFNStrategy("Individual")
    tie_enc_dec_ffn: bool = False
    enc_self_attn: str = "Individual"
    dec_self_attn: str = "Individual"
    dec_cross_attn: str = "Individual"

    @staticmethod
    def from_dict(d: dict) -> "SharingSpec":
        d = dict(d)
        kwargs = {}
        for side in ("enc_ffn", "dec_ffn"):
            if side in d:
                kwargs[side] = FFNStrategy.parse(d.pop(side))
        for key in ("tie_enc_dec_ffn", "enc_self_attn", "dec_self_attn", "dec_cross_attn"):
            if key in d:
                kwargs[key] = d.pop(key)
        if d:
            raise ConfigError(f"unknown sharing keys: {sorted(d)}")
        return SharingSpec(**kwargs)

    def to_dict(self) -> dict:
        return {
            "enc_ffn": str(self.enc_ffn),
            "dec_ffn": str(self.dec_ffn),
            "tie_enc_dec_ffn": self.tie_enc_dec_ffn,
            "enc_self_attn": self.enc_self_attn,
            "dec_self_attn": self.dec_self_attn,
            "dec_cross_attn": self.dec_cross_attn,
        }


@dataclass(frozen=True)
class ModelConfig:
    """Shape and sharing description of one model.

    d_ff is the default FFN width. Layers governed by a shared strategy use
    d_ff_shared instead (None means same as d_ff); Individual layers on one
    side can be rewidthed through d_ff_enc / d_ff_dec, which exists so width
    sweeps can touch a single side.
    """

    n_enc: int = 6
    n_dec: int = 6
    d_model: int = 512
    d_ff: int = 2048
    heads: int = 8
    vocab_size: int = 32000
    max_len: int = 512
    dropout: float = 0.1
    architecture: str = "encoder-decoder"
    sharing: SharingSpec = field(default_factory=SharingSpec)
    d_ff_shared: int | None = None
    d_ff_enc: int | None = None
    d_ff_dec: int | None = None

    def validate(self) -> "ModelConfig":
        """Check invariants; returns a normalized copy."""
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}")
        if self.architecture == "decoder-only":
            if self.n_enc != 0:
                raise ConfigError("decoder-only models must have n_enc == 0")
            if self.sharing.tie_enc_dec_ffn:
                raise ConfigError("tie_enc_dec_ffn needs an encoder")
        else:
            if self.n_enc < 1 or self.n_dec < 1:
                raise ConfigError("encoder-decoder models need n_enc >= 1 and n_dec >= 1")
        if self.n_dec < 1:
            raise ConfigError("need n_dec >= 1")
        if self.d_model < 1 or self.heads < 1:
            raise ConfigError("d_model and heads must be positive")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover 4 reserved ids plus content")
        if self.max_len < 1:
            raise ConfigError("max_len must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.d_ff < 1:
            raise ConfigError("d_ff must be positive; express a removed FFN as NoOp")
        for name in ("d_ff_enc", "d_ff_dec"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive; express width 0 as NoOp")
        if self.d_ff_shared is not None and self.d_ff_shared < 0:
            raise ConfigError("d_ff_shared must be >= 0")
        sharing = self.sharing
        for kind_name in ("enc_self_attn", "dec_self_attn", "dec_cross_attn"):
            if getattr(sharing, kind_name) not in ATTN_KINDS:
                raise ConfigError(f"{kind_name} must be one of {ATTN_KINDS}")
        if sharing.tie_enc_dec_ffn:
            if sharing.enc_ffn.kind != "SharedAll" or sharing.dec_ffn.kind != "SharedAll":
                raise ConfigError("tie_enc_dec_ffn requires SharedAll on both sides")
        # A shared width of exactly 0 means the shared FFN degenerates to NoOp.
        enc_ffn, dec_ffn = sharing.enc_ffn, sharing.dec_ffn
        if self.d_ff_shared == 0:
            tie = sharing.tie_enc_dec_ffn
            if enc_ffn.is_shared:
                enc_ffn = FFNStrategy("NoOp")
                tie = False
            if dec_ffn.is_shared:
                dec_ffn = FFNStrategy("NoOp")
                tie = False
            sharing = dataclasses.replace(
                sharing, enc_ffn=enc_ffn, dec_ffn=dec_ffn, tie_enc_dec_ffn=tie
            )
        # Surface group-count errors now rather than at build time.
        if self.n_enc > 0:
            resolve_ffn_assignment(sharing.enc_ffn, self.n_enc)
        resolve_ffn_assignment(sharing.dec_ffn, self.n_dec)
        return dataclasses.replace(self, sharing=sharing)

    def ffn_width(self, side: str) -> int:
        """Effective FFN width for the given side ('enc' or 'dec')."""
        if side not in ("enc", "dec"):
            raise ConfigError(f"side must be 'enc' or 'dec', got {side!r}")
        strategy = self.sharing.enc_ffn if side == "enc" else self.sharing.dec_ffn
        if strategy.kind == "NoOp":
            return 0
        if strategy.is_shared:
            return self.d_ff if self.d_ff_shared is None else self.d_ff_shared
        override = self.d_ff_enc if side == "enc" else self.d_ff_dec
        return self.d_ff if override is None else override

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sharing"] = self.sharing.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if "sharing" in d and not isinstance(d["sharing"], SharingSpec):
            d["sharing"] = SharingSpec.from_dict(d["sharing"])
        return ModelConfig(**d)


def transformer_big(vocab_size: int = 32000) -> ModelConfig:
    return ModelConfig(n_enc=6, n_dec=6, d_model=1024, d_ff=4096, heads=16, vocab_size=vocab_size)


def transformer_base(vocab_size: int = 32000) -> ModelConfig:
    return ModelConfig(n_enc=6, n_dec=6, d_model=512, d_ff=2048, heads=8, vocab_size=vocab_size)


def deep_enc_shallow_dec(vocab_size: int = 32000) -> ModelConfig:
    return ModelConfig(n_enc=12, n_dec=2, d_model=1024, d_ff=4096, heads=16, vocab_size=vocab_size)


def decoder_only_big(vocab_size: int = 32000) -> ModelConfig:
    return ModelConfig(
        n_enc=0, n_dec=12, d_model=1024, d_ff=4096, heads=16,
        vocab_size=vocab_size, architecture="decoder-only",
    )


# Named sharing presets. Each maps to (enc strategy, dec strategy, tie flag);
# OneWideFFN additionally sets the shared width to (n_enc + n_dec) * d_ff.
PRESETS = {
    "baseline": ("Individual", "Individual", False),
    "SharedEnc": ("SharedAll", "Individual", False),
    "SharedDec": ("Individual", "SharedAll", False),
    "SharedEncSharedDec": ("SharedAll", "SharedAll", False),
    "SharedEncDec": ("SharedAll", "SharedAll", True),
    "NoEnc": ("NoOp", "Individual", False),
    "NoDec": ("Individual", "NoOp", False),
    "NoEncNoDec": ("NoOp", "NoOp", False),
    "SharedEncNoDec": ("SharedAll", "NoOp", False),
    "NoEncSharedDec": ("NoOp", "SharedAll", False),
    "OneWideFFN": ("SharedAll", "NoOp", False),
}

# Presets that only touch the decoder side are the ones a decoder-only
# model can express.
DECODER_ONLY_PRESETS = ("baseline", "SharedDec", "NoDec")


def apply_preset(config: ModelConfig, name: str) -> ModelConfig:
    """Return a copy of `config` with the named sharing preset applied."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid: {sorted(PRESETS)}")
    if config.architecture == "decoder-only" and name not in DECODER_ONLY_PRESETS:
        raise ConfigError(
            f"preset {name!r} touches the encoder side; decoder-only models "
            f"support {DECODER_ONLY_PRESETS}"
        )
    enc, dec, tie = PRESETS[name]
    if config.architecture == "decoder-only":
        enc_rule = "Individual"
        dec_rule = {"baseline": "Individual", "SharedDec": "SharedAll", "NoDec": "NoOp"}[name]
        sharing = dataclasses.replace(
            config.sharing,
            enc_ffn=FFNStrategy.parse(enc_rule),
            dec_ffn=FFNStrategy.parse(dec_rule),
            tie_enc_dec_ffn=False,
        )
        return dataclasses.replace(config, sharing=sharing).validate()
    sharing = dataclasses.replace(
        config.sharing,
        enc_ffn=FFNStrategy.parse(enc),
        dec_ffn=FFNStrategy.parse(dec),
        tie_enc_dec_ffn=tie,
    )
    out = dataclasses.replace(config, sharing=sharing)
    if name == "OneWideFFN":
        out = dataclasses.replace(out, d_ff_shared=(config.n_enc + config.n_dec) * config.d_ff)
    return out.validate()
