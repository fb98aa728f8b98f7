"""Command line front end.

Verbs: params | train | eval | compare | selfsim | bench | sweep.
Runs are driven by a YAML config file; unknown keys anywhere in the file
are rejected. The WFN_SEED environment variable overrides the config
seed. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.

Every command's CSV/JSON output is byte-reproducible from (config, seed)
except the timing commands, whose CSVs carry a '# nondeterministic:
timing' header line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import yaml

from .bench import batch_size_sweep, corpus_bleu, decode_greedy
from .checkpoint import load_model_checkpoint, save_model_checkpoint
from .config import ModelConfig, apply_preset
from .counting import BREAKDOWN_KEYS, baseline_of, count_params, percent_of_baseline
from .errors import ConfigError, DataError, NumericError, ShapeError, WideFFNError
from .similarity import (
    SimilarityReport,
    collect_activations,
    normalize_against_benchmark,
    pairwise_layer_similarity,
    self_similarity,
)
from .training import Schedule, ffn_dim_sweep, token_accuracy, train
from .transformer import build_model
from .vocab import Corpus, generate_toy_task, load_parallel_corpus


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    training: Schedule = field(default_factory=Schedule)
    steps: int = 200
    batch_size: int = 32
    task: dict | None = None
    corpus: dict | None = None
    beam: int = 1
    decode_max_len: int = 32


_TRAINING_KEYS = {"steps", "batch_size", "base_lr", "warmup_steps"}
_TASK_KEYS = {"kind", "count", "len_range", "vocab_size", "seed"}
_CORPUS_KEYS = {"src", "tgt"}
_DECODE_KEYS = {"beam", "max_len"}
_TOP_KEYS = {"seed", "preset", "model", "training", "task", "corpus", "decode"}


def _check_keys(section: str, d: dict, allowed: set):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}; allowed: {sorted(allowed)}")


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a run file; applies preset expansion and WFN_SEED."""
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys("top-level", doc, _TOP_KEYS)
    model = ModelConfig.from_dict(doc.get("model", {}))
    if "preset" in doc:
        model = apply_preset(model, doc["preset"])
    model = model.validate()
    run = RunConfig(model=model)
    if "seed" in doc:
        run.seed = int(doc["seed"])
    if "WFN_SEED" in os.environ:
        run.seed = int(os.environ["WFN_SEED"])
    training = doc.get("training", {})
    _check_keys("training", training, _TRAINING_KEYS)
    run.steps = int(training.get("steps", run.steps))
    run.batch_size = int(training.get("batch_size", run.batch_size))
    run.training = Schedule(
        base_lr=float(training.get("base_lr", 7e-4)),
        warmup_steps=int(training.get("warmup_steps", 4000)),
    )
    if "task" in doc and "corpus" in doc:
        raise ConfigError("give either a toy task or corpus paths, not both")
    if "task" in doc:
        _check_keys("task", doc["task"], _TASK_KEYS)
        run.task = doc["task"]
    if "corpus" in doc:
        _check_keys("corpus", doc["corpus"], _CORPUS_KEYS)
        run.corpus = doc["corpus"]
    decode = doc.get("decode", {})
    _check_keys("decode", decode, _DECODE_KEYS)
    run.beam = int(decode.get("beam", 1))
    run.decode_max_len = int(decode.get("max_len", 32))
    return run


def build_corpus(run: RunConfig) -> Corpus:
    if run.task is not None:
        task = run.task
        kind = task.get("kind", "copy")
        count = int(task.get("count", 512))
        len_range = tuple(task.get("len_range", (3, 8)))
        vocab_size = int(task.get("vocab_size", run.model.vocab_size))
        if vocab_size != run.model.vocab_size:
            raise ConfigError(
                f"task vocab_size {vocab_size} != model vocab_size {run.model.vocab_size}"
            )
        return generate_toy_task(kind, count, len_range, vocab_size,
                                 seed=int(task.get("seed", run.seed)))
    if run.corpus is not None:
        corpus = load_parallel_corpus(run.corpus["src"], run.corpus["tgt"])
        if corpus.vocab.size > run.model.vocab_size:
            raise ConfigError(
                f"corpus vocab {corpus.vocab.size} exceeds model vocab_size "
                f"{run.model.vocab_size}"
            )
        return corpus
    raise ConfigError("config needs a 'task' or 'corpus' section for this command")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str, header: list[str], rows: list[dict], comment: str | None = None):
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(row.get(col)) for col in header))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def write_matrix_csv(path: str, report: SimilarityReport):
    lines = ["," + ",".join(report.col_labels)]
    for label, row in zip(report.row_labels, report.matrix):
        lines.append(label + "," + ",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


# -- commands ---------------------------------------------------------------


def cmd_params(args) -> int:
    run = load_run_config(args.config)
    cfg = run.model
    total, breakdown = count_params(cfg)
    pct = percent_of_baseline(cfg)
    base_total, _ = count_params(baseline_of(cfg))
    print(f"total parameters: {total:,}")
    print(f"same-shape unshared baseline: {base_total:,}")
    print(f"percent of baseline: {pct:.1f}%")
    print("breakdown:")
    for key in BREAKDOWN_KEYS:
        print(f"  {key:15s} {breakdown[key]:>15,}")
    if args.json:
        payload = {
            "total": total,
            "baseline_total": base_total,
            "percent_of_baseline": pct,
            "breakdown": breakdown,
        }
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"wrote {args.json}")
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    corpus = build_corpus(run)
    model = build_model(run.model, seed=run.seed)
    if args.resume:
        resumed = load_model_checkpoint(args.resume, config=run.model)
        for name, tensor in model.store.physical.items():
            tensor.data[...] = resumed.store.physical[name].data
        print(f"resumed parameters from {args.resume}")
    losses = train(model, corpus, steps=run.steps, batch_size=run.batch_size,
                   seed=run.seed, schedule=run.training)
    save_model_checkpoint(model, args.out)
    loss_csv = args.out + ".loss.csv"
    write_csv(loss_csv, ["step", "loss"],
              [{"step": i + 1, "loss": v} for i, v in enumerate(losses)])
    final = losses[-1] if losses else float("nan")
    print(f"trained {len(losses)} steps; final loss {final:.4f}")
    print(f"wrote {args.out}")
    print(f"wrote {loss_csv}")
    return 0


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    corpus = build_corpus(run)
    model = load_model_checkpoint(args.checkpoint)
    if model.config.vocab_size < corpus.vocab.size:
        raise DataError(
            f"model vocab {model.config.vocab_size} smaller than corpus vocab "
            f"{corpus.vocab.size}"
        )
    pairs = corpus.pairs if args.limit is None else corpus.pairs[: args.limit]
    probe = Corpus(pairs, corpus.vocab)
    acc = token_accuracy(model, probe)
    hyps, refs = [], []
    for src, tgt in probe.pairs:
        out = decode_greedy(model, src, max_len=run.decode_max_len)
        hyps.append(corpus.vocab.decode(out))
        refs.append(corpus.vocab.decode(tgt))
    bleu = corpus_bleu(hyps, refs)
    print(f"token accuracy: {acc:.4f}")
    print(f"greedy BLEU: {bleu:.2f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump({"token_accuracy": acc, "bleu": bleu, "pairs": len(probe.pairs)},
                      f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"wrote {args.json}")
    return 0


def _sides(model) -> list[str]:
    if model.config.architecture == "encoder-decoder":
        return ["encoder", "decoder"]
    return ["decoder"]


def cmd_compare(args) -> int:
    run = load_run_config(args.config)
    corpus = build_corpus(run)
    model_a = load_model_checkpoint(args.a)
    model_b = load_model_checkpoint(args.b)
    if model_a.config.architecture != model_b.config.architecture:
        raise ConfigError("cannot compare models of different architectures")
    benchmarks = [load_model_checkpoint(p) for p in args.benchmark]
    os.makedirs(args.out_dir, exist_ok=True)
    summary = {}
    for side in _sides(model_a):
        taps_a = collect_activations(model_a, corpus, side, model_id="a")
        taps_b = collect_activations(model_b, corpus, side, model_id="b")
        report = pairwise_layer_similarity(taps_a, taps_b, metric=args.metric, k=args.k)
        path = os.path.join(args.out_dir, f"{args.metric}_{side}.csv")
        write_matrix_csv(path, report)
        print(f"wrote {path}")
        entry = {"aggregate": report.aggregate}
        if benchmarks:
            raws = []
            for i, bench in enumerate(benchmarks):
                taps_bench = collect_activations(bench, corpus, side, model_id=f"bench{i}")
                raws.append(
                    pairwise_layer_similarity(taps_a, taps_bench, metric=args.metric,
                                              k=args.k).aggregate
                )
            entry["benchmark_raws"] = raws
            entry["normalized"] = normalize_against_benchmark(report.aggregate, raws)
        summary[side] = entry
    summary_path = os.path.join(args.out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {summary_path}")
    for side, entry in summary.items():
        line = f"{side}: aggregate {entry['aggregate']:.4f}"
        if "normalized" in entry:
            line += f", normalized {entry['normalized']:.1f}"
        print(line)
    return 0


def cmd_selfsim(args) -> int:
    run = load_run_config(args.config)
    corpus = build_corpus(run)
    model = load_model_checkpoint(args.checkpoint)
    os.makedirs(args.out_dir, exist_ok=True)
    for side in _sides(model):
        taps = collect_activations(model, corpus, side, model_id=side)
        report = self_similarity(taps)
        path = os.path.join(args.out_dir, f"selfsim_{side}.csv")
        write_matrix_csv(path, report)
        print(f"wrote {path}")
    return 0


def cmd_bench(args) -> int:
    run = load_run_config(args.config)
    corpus = build_corpus(run)
    models = []
    for path in args.checkpoints:
        label = os.path.splitext(os.path.basename(path))[0]
        models.append((label, load_model_checkpoint(path)))
    batch_sizes = [int(b) for b in args.batch_sizes.split(",") if b]
    if not batch_sizes or any(b < 1 for b in batch_sizes):
        raise ConfigError(f"bad batch sizes {args.batch_sizes!r}")
    rows = batch_size_sweep(models, batch_sizes, corpus, beam=args.beam,
                            runs=args.runs, max_len=run.decode_max_len)
    header = ["config", "batch_size", "tokens_per_sec", "std", "delta_pct", "n_batches"]
    if len(models) == 1:
        header.remove("delta_pct")
    write_csv(args.out, header, rows, comment="nondeterministic: timing")
    print(f"wrote {args.out}")
    for row in rows:
        delta = "" if row["delta_pct"] is None else f"  delta {row['delta_pct']:+.1f}%"
        print(f"{row['config']} batch {row['batch_size']}: "
              f"{row['tokens_per_sec']:.1f} +/- {row['std']:.1f} tok/s{delta}")
    return 0


def cmd_sweep(args) -> int:
    run = load_run_config(args.config)
    corpus = build_corpus(run)
    dims = [int(d) for d in args.dims.split(",") if d]
    if not dims:
        raise ConfigError(f"no dims in {args.dims!r}")
    rows = ffn_dim_sweep(run.model, args.side, dims, corpus, steps=run.steps,
                         batch_size=run.batch_size, seed=run.seed, schedule=run.training)
    write_csv(args.out, ["d_ff", "side", "token_accuracy", "params", "noop"], rows)
    print(f"wrote {args.out}")
    for row in rows:
        print(f"{row['side']} d_ff={row['d_ff']}: accuracy {row['token_accuracy']:.4f}, "
              f"params {row['params']:,}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wideffn",
        description="Toy-scale Transformer lab: FFN sharing, similarity, latency.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="parameter count and breakdown")
    p.add_argument("--config", required=True)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("train", help="train and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="restore parameters from this checkpoint first")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="token accuracy and greedy BLEU")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--limit", type=int, help="evaluate only the first N pairs")
    p.add_argument("--json", help="also write metrics as JSON")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="cross-model similarity matrices")
    p.add_argument("--config", required=True)
    p.add_argument("--a", required=True, help="reference checkpoint")
    p.add_argument("--b", required=True, help="subject checkpoint")
    p.add_argument("--metric", choices=("cka", "lns"), default="cka")
    p.add_argument("--k", type=int, help="neighborhood size for lns (default 5%%)")
    p.add_argument("--benchmark", action="append", default=[],
                   help="benchmark checkpoint (repeatable)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("selfsim", help="within-model similarity matrices")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_selfsim)

    p = sub.add_parser("bench", help="decode throughput sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--batch-sizes", default="1")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", help="FFN width sweep on one side")
    p.add_argument("--config", required=True)
    p.add_argument("--side", choices=("encoder", "decoder"), required=True)
    p.add_argument("--dims", required=True, help="comma-separated widths; 0 removes the FFN")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, NumericError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return getattr(e, "exit_code", 4)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except WideFFNError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
