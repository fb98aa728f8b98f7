"""Representation similarity: linear CKA and local neighborhood overlap.

Activation matrices are n_sentences x d_model, one row per sentence (mean
over that sentence's positions), collected with dropout off and the
decoder force-decoding the reference. Cross-model pairings insist on an
identical probe corpus, enforced through a content hash carried on every
ActivationMatrix.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .transformer import TransformerModel, decoder_forward, encoder_forward
from .vocab import BOS, EOS, Corpus

log = logging.getLogger(__name__)


@dataclass
class ActivationMatrix:
    values: np.ndarray  # (n_sentences, width) float32
    module_name: str
    model_id: str
    corpus_hash: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DataError(f"activation matrix must be rank 2, got {self.values.shape}")


def collect_activations(model: TransformerModel, corpus: Corpus, side: str,
                        model_id: str = "model", limit: int | None = None
                        ) -> dict[str, ActivationMatrix]:
    """Sentence-mean activations per tapped module on one side.

    side 'encoder' taps '<i>.sa'/'<i>.ffn'; side 'decoder' taps
    '<i>.sa'/'<i>.ca'/'<i>.ffn'. The decoder is teacher-forced on the
    reference target. Rows follow corpus order.
    """
    if side not in ("encoder", "decoder"):
        raise ConfigError(f"side must be 'encoder' or 'decoder', got {side!r}")
    if side == "encoder" and model.config.architecture != "encoder-decoder":
        raise ConfigError("decoder-only model has no encoder side")
    pairs = corpus.pairs if limit is None else corpus.pairs[:limit]
    if not pairs:
        raise DataError("empty corpus")
    rows: dict[str, list[np.ndarray]] = {}
    for src, tgt in pairs:
        if side == "encoder":
            _, taps = encoder_forward(model, list(src) + [EOS])
        elif model.config.architecture == "encoder-decoder":
            enc_out, _ = encoder_forward(model, list(src) + [EOS])
            _, taps = decoder_forward(model, enc_out, [BOS] + list(tgt))
        else:
            seq = list(src) + [EOS, BOS] + list(tgt)
            _, taps = decoder_forward(model, None, seq, prefix_len=len(src) + 1)
        for name, tensor in taps.items():
            rows.setdefault(name, []).append(tensor.data.mean(axis=0))
    corpus_hash = corpus.content_hash()
    return {
        name: ActivationMatrix(np.stack(vals), name, model_id, corpus_hash)
        for name, vals in rows.items()
    }


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, ActivationMatrix) else np.asarray(x)


def linear_cka(a, b) -> float:
    """Linear CKA between two activation sets with matched rows.

    Columns are mean-centered internally; the statistic is
    ||A^T B||_F^2 / (||A^T A||_F * ||B^T B||_F), invariant to orthogonal
    maps and isotropic scaling of either side. Degenerate (all-constant)
    inputs give 0.
    """
    a = _values(a).astype(np.float64)
    b = _values(b).astype(np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DataError("linear_cka needs rank-2 inputs")
    if a.shape[0] != b.shape[0]:
        raise DataError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    a = a - a.mean(axis=0, keepdims=True)
    b = b - b.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(a.T @ b) ** 2
    norm_a = np.linalg.norm(a.T @ a)
    norm_b = np.linalg.norm(b.T @ b)
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(cross / (norm_a * norm_b))


def knn(space, query_index: int, k: int) -> list[int]:
    """Indices of the k nearest rows to row `query_index` in cosine distance.

    The query row itself is excluded. Ties in distance break toward the
    lower index; all-zero rows sit at distance 1 from everything (a warning
    is logged once per call when any are present).
    """
    x = _values(space).astype(np.float64)
    n = x.shape[0]
    if not 0 <= query_index < n:
        raise ConfigError(f"query index {query_index} out of range for {n} rows")
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k must be in [1, {n - 1}], got {k}")
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    if zero.any():
        log.warning("knn: %d all-zero rows treated as distance 1 from everything", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    unit = x / safe[:, None]  # zero rows stay zero -> cosine similarity 0
    sims = unit @ unit[query_index]
    dist = 1.0 - sims
    dist[query_index] = np.inf
    order = np.lexsort((np.arange(n), dist))
    return order[:k].tolist()


def default_k(n: int) -> int:
    """Neighborhood size: 5% of the probe set, at least 1."""
    return max(1, math.ceil(0.05 * n))


def lns(a, b, k: int | None = None) -> float:
    """Local neighborhood similarity: mean Jaccard overlap of k-NN sets.

    Both spaces must describe the same sentences in the same order; when
    ActivationMatrix metadata is available the corpus hashes must agree.
    """
    if isinstance(a, ActivationMatrix) and isinstance(b, ActivationMatrix):
        if a.corpus_hash != b.corpus_hash:
            raise DataError("activation matrices come from different corpora")
    va, vb = _values(a), _values(b)
    if va.shape[0] != vb.shape[0]:
        raise DataError(f"row counts differ: {va.shape[0]} vs {vb.shape[0]}")
    n = va.shape[0]
    if n < 2:
        raise DataError("need at least 2 rows for neighborhoods")
    if k is None:
        k = default_k(n)
    total = 0.0
    for i in range(n):
        sa = set(knn(va, i, k))
        sb = set(knn(vb, i, k))
        total += len(sa & sb) / len(sa | sb)
    return total / n


@dataclass
class SimilarityReport:
    metric: str
    row_labels: list[str]
    col_labels: list[str]
    matrix: np.ndarray
    aggregate: float
    normalized: float | None = None


_SUBLAYER_ORDER = {"sa": 0, "ca": 1, "ffn": 2}


def _label_key(name: str):
    """Sort key: layer order, then sublayer execution order (sa, ca, ffn)."""
    layer, part = name.split(".")
    return int(layer), _SUBLAYER_ORDER[part]


def _layer_outputs(taps: dict[str, ActivationMatrix]) -> dict[int, ActivationMatrix]:
    """Last recorded module of each layer, i.e. the layer output."""
    best: dict[int, tuple[int, ActivationMatrix]] = {}
    for name, mat in taps.items():
        layer, part = name.split(".")
        r = _SUBLAYER_ORDER[part]
        i = int(layer)
        if i not in best or r > best[i][0]:
            best[i] = (r, mat)
    return {i: mat for i, (_, mat) in best.items()}


def _metric_fn(metric: str, k: int | None):
    if metric == "cka":
        return linear_cka
    if metric == "lns":
        return lambda a, b: lns(a, b, k=k)
    raise ConfigError(f"unknown metric {metric!r}; use 'cka' or 'lns'")


def pairwise_layer_similarity(taps_a: dict[str, ActivationMatrix],
                              taps_b: dict[str, ActivationMatrix],
                              metric: str = "cka", k: int | None = None
                              ) -> SimilarityReport:
    """Full module-by-module similarity matrix plus a scalar aggregate.

    The aggregate averages the diagonal over module names present in both
    models. When no names are shared (e.g. one side lost its FFNs) but the
    layer counts agree, corresponding layer outputs are compared instead.
    """
    if not taps_a or not taps_b:
        raise DataError("empty activation tap set")
    fn = _metric_fn(metric, k)
    hashes = {m.corpus_hash for m in taps_a.values()} | {m.corpus_hash for m in taps_b.values()}
    if len(hashes) != 1:
        raise DataError("activation sets come from different corpora")
    rows = sorted(taps_a, key=_label_key)
    cols = sorted(taps_b, key=_label_key)
    matrix = np.zeros((len(rows), len(cols)))
    for i, rn in enumerate(rows):
        for j, cn in enumerate(cols):
            matrix[i, j] = fn(taps_a[rn], taps_b[cn])
    common = [name for name in rows if name in taps_b]
    if common:
        aggregate = float(np.mean([fn(taps_a[n], taps_b[n]) for n in common]))
    else:
        outs_a = _layer_outputs(taps_a)
        outs_b = _layer_outputs(taps_b)
        if sorted(outs_a) != sorted(outs_b):
            raise DataError(
                "no shared module names and layer counts differ; nothing comparable"
            )
        aggregate = float(np.mean([fn(outs_a[i], outs_b[i]) for i in sorted(outs_a)]))
    return SimilarityReport(metric, rows, cols, matrix, aggregate)


def self_similarity(taps: dict[str, ActivationMatrix], metric: str = "cka",
                    k: int | None = None) -> SimilarityReport:
    """Module-by-module similarity of one model against itself."""
    if len(taps) < 2:
        raise DataError("self-similarity needs at least 2 tapped modules")
    report = pairwise_layer_similarity(taps, taps, metric=metric, k=k)
    return report


def normalize_against_benchmark(raw: float, benchmark_raws) -> float:
    """Scale a raw score so the benchmark mean reads as 100."""
    vals = [float(v) for v in benchmark_raws]
    if not vals:
        raise DataError("empty benchmark")
    mean = sum(vals) / len(vals)
    if mean <= 0.0:
        raise DataError(f"benchmark mean must be positive, got {mean}")
    return 100.0 * raw / mean


def save_activation(path: str, mat: ActivationMatrix):
    """Dump: model_id, corpus hash, module name, then n, d and raw float32."""
    def pack(s: str) -> bytes:
        raw = s.encode("utf-8")
        return struct.pack("<H", len(raw)) + raw

    n, d = mat.values.shape
    with open(path, "wb") as f:
        f.write(pack(mat.model_id))
        f.write(pack(mat.corpus_hash))
        f.write(pack(mat.module_name))
        f.write(struct.pack("<II", n, d))
        f.write(np.ascontiguousarray(mat.values, dtype="<f4").tobytes())


def load_activation(path: str) -> ActivationMatrix:
    with open(path, "rb") as f:
        buf = f.read()

    def unpack(at: int) -> tuple[str, int]:
        (ln,) = struct.unpack_from("<H", buf, at)
        at += 2
        return buf[at : at + ln].decode("utf-8"), at + ln

    model_id, at = unpack(0)
    corpus_hash, at = unpack(at)
    module_name, at = unpack(at)
    n, d = struct.unpack_from("<II", buf, at)
    at += 8
    values = np.frombuffer(buf, dtype="<f4", count=n * d, offset=at).reshape(n, d)
    return ActivationMatrix(values.copy(), module_name, model_id, corpus_hash)
