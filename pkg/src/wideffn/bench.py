"""Decoding, latency measurement, and corpus BLEU.

Scoring convention shared by both decoders and score_sequence: a
hypothesis's score is its summed token log-probability divided by the
number of scored steps, where a sequence that genuinely ended includes
its end-of-sequence step and one cut off at the length cap does not.
Beam width 1 reproduces greedy decoding exactly (ties break toward the
lower token id in both).
"""

from __future__ import annotations

import math
import threading
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .transformer import TransformerModel
from .vocab import EOS, Corpus

_MEASURE_LOCK = threading.Lock()


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


def decode_greedy(model: TransformerModel, src: list[int], max_len: int = 32) -> list[int]:
    """Argmax next-token loop; stops at end-of-sequence or after max_len
    generated tokens. The end token is not part of the output."""
    if max_len < 1:
        raise ConfigError("max_len must be positive")
    enc = model.encode(src)
    out: list[int] = []
    for _ in range(max_len):
        logits = model.step_logits(enc, src, out)
        nxt = int(np.argmax(logits))
        if nxt == EOS:
            break
        out.append(nxt)
    return out


def score_sequence(model: TransformerModel, src: list[int], tokens: list[int],
                   ended: bool = True) -> float:
    """Length-normalized log-probability of a decoded continuation."""
    enc = model.encode(src)
    total = 0.0
    steps = 0
    prefix: list[int] = []
    for tok in tokens:
        logp = _log_softmax(model.step_logits(enc, src, prefix))
        total += float(logp[tok])
        steps += 1
        prefix.append(tok)
    if ended:
        logp = _log_softmax(model.step_logits(enc, src, prefix))
        total += float(logp[EOS])
        steps += 1
    if steps == 0:
        raise DataError("nothing to score")
    return total / steps


def decode_beam(model: TransformerModel, src: list[int], beam: int = 5,
                max_len: int = 32) -> list[int]:
    """Beam search returning the best hypothesis by normalized score.

    Live hypotheses carry summed log-probability; finished ones are ranked
    by sum / steps (end step included). All ties resolve by insertion
    order, which is score order then token id, so beam=1 walks exactly the
    greedy path.
    """
    if beam < 1:
        raise ConfigError("beam must be >= 1")
    if max_len < 1:
        raise ConfigError("max_len must be positive")
    enc = model.encode(src)
    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _ in range(max_len):
        candidates: list[tuple[list[int], float, int]] = []
        for tokens, score in live:
            logp = _log_softmax(model.step_logits(enc, src, tokens))
            top = np.argsort(-logp, kind="stable")[:beam]
            for tok in top:
                candidates.append((tokens, score + float(logp[tok]), int(tok)))
        candidates.sort(key=lambda c: -c[1])
        live = []
        for tokens, score, tok in candidates:
            if len(live) == beam:
                break
            if tok == EOS:
                finished.append((tokens, score / (len(tokens) + 1)))
            else:
                live.append((tokens + [tok], score))
        if not live:
            break
    for tokens, score in live:
        finished.append((tokens, score / len(tokens)))
    if not finished:
        raise DataError("beam search produced no hypothesis")
    best = max(range(len(finished)), key=lambda i: finished[i][1])
    return finished[best][0]


@dataclass
class ThroughputReport:
    config_id: str
    batch_size: int
    tokens_per_sec: float
    std: float
    runs: int
    n_batches: int

    def __post_init__(self):
        if self.tokens_per_sec <= 0 or self.std < 0 or self.runs < 2:
            raise DataError("malformed throughput report")


def measure_throughput(model: TransformerModel, corpus: Corpus, batch_size: int = 1,
                       beam: int = 1, runs: int = 5, max_len: int = 32,
                       config_id: str = "model") -> ThroughputReport:
    """Decode the corpus `runs` times on a monotonic clock after one untimed
    warmup pass; reports mean and sample std of generated tokens/second.

    Refuses to run while another measurement is in flight in this process,
    since overlapping measurements would time each other.
    """
    if runs < 2:
        raise ConfigError("need at least 2 timed runs for a std")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    if len(corpus) == 0:
        raise DataError("empty corpus")
    if not _MEASURE_LOCK.acquire(blocking=False):
        raise ConfigError("another throughput measurement is already running")
    try:
        decode = (lambda s: decode_greedy(model, s, max_len=max_len)) if beam == 1 \
            else (lambda s: decode_beam(model, s, beam=beam, max_len=max_len))

        def one_pass() -> int:
            tokens = 0
            for src, _ in corpus.pairs:
                tokens += len(decode(src))
            return tokens

        warm_tokens = one_pass()
        if warm_tokens == 0:
            raise DataError("decoder generated no tokens; nothing to measure")
        rates = []
        for _ in range(runs):
            t0 = time.perf_counter()
            tokens = one_pass()
            dt = time.perf_counter() - t0
            rates.append(tokens / dt)
        mean = float(np.mean(rates))
        std = float(np.std(rates, ddof=1))
        n_batches = math.ceil(len(corpus) / batch_size)
        return ThroughputReport(config_id, batch_size, mean, std, runs, n_batches)
    finally:
        _MEASURE_LOCK.release()


def batch_size_sweep(models: list[tuple[str, TransformerModel]], batch_sizes: list[int],
                     corpus: Corpus, beam: int = 1, runs: int = 5,
                     max_len: int = 32) -> list[dict]:
    """Throughput grid over models x batch sizes.

    The first model is the reference; every row carries the percent delta
    against it at the same batch size (None for the reference itself).
    """
    if not models:
        raise ConfigError("no models to measure")
    rows = []
    for bs in batch_sizes:
        reference = None
        for config_id, model in models:
            report = measure_throughput(model, corpus, batch_size=bs, beam=beam,
                                        runs=runs, max_len=max_len, config_id=config_id)
            if reference is None:
                reference = report.tokens_per_sec
                delta = None
            else:
                delta = 100.0 * (report.tokens_per_sec - reference) / reference
            rows.append({
                "config": config_id,
                "batch_size": bs,
                "tokens_per_sec": report.tokens_per_sec,
                "std": report.std,
                "delta_pct": delta,
                "n_batches": report.n_batches,
            })
    return rows


def _ngram_counts(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references) -> float:
    """Corpus BLEU-4 with clipped precisions and brevity penalty, in [0, 100].

    Inputs are sequences of token lists (strings are whitespace-split).
    Any order with zero total matches zeroes the score.
    """
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise DataError("empty corpus")

    def toks(x):
        return x.split() if isinstance(x, str) else list(x)

    hyp_len = 0
    ref_len = 0
    clipped = [0] * 4
    totals = [0] * 4
    for hyp, ref in zip(hypotheses, references):
        h, r = toks(hyp), toks(ref)
        if not r:
            raise DataError("empty reference")
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            hc = _ngram_counts(h, n)
            rc = _ngram_counts(r, n)
            totals[n - 1] += sum(hc.values())
            clipped[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    if hyp_len == 0:
        return 0.0
    precisions = []
    for c, t in zip(clipped, totals):
        if t == 0 or c == 0:
            return 0.0
        precisions.append(c / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)
