import json

import pytest
import yaml

from wideffn.cli import load_run_config, main
from wideffn.counting import count_params
from wideffn.errors import ConfigError, NumericError

BASE_DOC = {
    "seed": 3,
    "model": {
        "n_enc": 2, "n_dec": 2, "d_model": 16, "d_ff": 32, "heads": 2,
        "vocab_size": 12, "max_len": 64, "dropout": 0.0,
    },
    "training": {"steps": 3, "batch_size": 4, "base_lr": 0.002, "warmup_steps": 10},
    "task": {"kind": "copy", "count": 6, "len_range": [3, 5], "vocab_size": 12,
             "seed": 1},
    "decode": {"beam": 1, "max_len": 6},
}


def write_config(tmp_path, name="run.yaml", **edits):
    doc = json.loads(json.dumps(BASE_DOC))  # deep copy
    for key, val in edits.items():
        if isinstance(val, dict) and key in doc and isinstance(doc[key], dict):
            doc[key].update(val)
            doc[key] = {k: v for k, v in doc[key].items() if v is not ...}
        elif val is ...:
            doc.pop(key, None)
        else:
            doc[key] = val
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


@pytest.fixture()
def trained_ckpt(tmp_path):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "model.ckpt")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    return cfg, out


# ----------------------------------------------------------------- config IO

def test_run_config_defaults_and_sections(tmp_path):
    run = load_run_config(write_config(tmp_path))
    assert run.seed == 3
    assert run.steps == 3 and run.batch_size == 4
    assert run.training.base_lr == pytest.approx(0.002)
    assert run.beam == 1 and run.decode_max_len == 6
    assert run.model.d_model == 16


def test_run_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="top-level"):
        load_run_config(write_config(tmp_path, typo_section={"a": 1}))
    with pytest.raises(ConfigError, match="training"):
        load_run_config(write_config(tmp_path, training={"momentum": 0.9}))
    with pytest.raises(ConfigError, match="model keys"):
        load_run_config(write_config(tmp_path, model={"n_heads": 2}))


def test_run_config_rejects_task_and_corpus_together(tmp_path):
    with pytest.raises(ConfigError, match="not both"):
        load_run_config(write_config(tmp_path, corpus={"src": "a", "tgt": "b"}))


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    assert load_run_config(cfg).seed == 3
    monkeypatch.setenv("WFN_SEED", "17")
    assert load_run_config(cfg).seed == 17


def test_preset_expansion_in_run_file(tmp_path):
    run = load_run_config(write_config(tmp_path, preset="SharedEnc"))
    assert run.model.sharing.enc_ffn.kind == "SharedAll"
    assert run.model.sharing.dec_ffn.kind == "Individual"


# --------------------------------------------------------------------- verbs

def test_params_verb_prints_and_writes_json(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out_json = str(tmp_path / "params.json")
    assert main(["params", "--config", cfg, "--json", out_json]) == 0
    stdout = capsys.readouterr().out
    assert "total parameters" in stdout
    assert "percent of baseline" in stdout
    payload = json.loads(open(out_json).read())
    run = load_run_config(cfg)
    assert payload["total"] == count_params(run.model)[0]
    assert payload["percent_of_baseline"] == pytest.approx(100.0)
    assert set(payload["breakdown"]) == {
        "embedding", "enc_attn", "enc_ffn", "dec_self_attn", "dec_cross_attn",
        "dec_ffn", "layer_norms", "biases",
    }


def test_train_writes_checkpoint_sidecar_and_losses(tmp_path, trained_ckpt):
    cfg, out = trained_ckpt
    assert (tmp_path / "model.ckpt").exists()
    sidecar = json.loads(open(out + ".config.json").read())
    assert sidecar["d_model"] == 16
    lines = open(out + ".loss.csv").read().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 1 + 3  # header + one row per step


def test_train_is_byte_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    a, b = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    assert main(["train", "--config", cfg, "--out", a]) == 0
    assert main(["train", "--config", cfg, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    assert open(a + ".loss.csv").read() == open(b + ".loss.csv").read()


def test_env_seed_changes_training(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    a, b = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    assert main(["train", "--config", cfg, "--out", a]) == 0
    monkeypatch.setenv("WFN_SEED", "99")
    assert main(["train", "--config", cfg, "--out", b]) == 0
    assert open(a, "rb").read() != open(b, "rb").read()


def test_resume_continues_from_checkpoint(tmp_path, trained_ckpt, capsys):
    cfg, out = trained_ckpt
    out2 = str(tmp_path / "more.ckpt")
    assert main(["train", "--config", cfg, "--out", out2, "--resume", out]) == 0
    assert "resumed parameters" in capsys.readouterr().out
    assert open(out, "rb").read() != open(out2, "rb").read()  # training moved on


def test_eval_verb_reports_metrics(tmp_path, trained_ckpt, capsys):
    cfg, out = trained_ckpt
    metrics = str(tmp_path / "eval.json")
    code = main(["eval", "--config", cfg, "--checkpoint", out, "--limit", "4",
                 "--json", metrics])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "token accuracy" in stdout and "BLEU" in stdout
    payload = json.loads(open(metrics).read())
    assert payload["pairs"] == 4
    assert 0.0 <= payload["token_accuracy"] <= 1.0
    assert 0.0 <= payload["bleu"] <= 100.0


def test_compare_verb_writes_matrices_and_summary(tmp_path, capsys):
    cfg = write_config(tmp_path)
    outs = []
    for seed, name in [(3, "a.ckpt"), (99, "b.ckpt"), (7, "c.ckpt")]:
        path = str(tmp_path / name)
        env_cfg = write_config(tmp_path, name=f"run{seed}.yaml", seed=seed)
        assert main(["train", "--config", env_cfg, "--out", path]) == 0
        outs.append(path)
    out_dir = str(tmp_path / "cmp")
    code = main(["compare", "--config", cfg, "--a", outs[0], "--b", outs[1],
                 "--benchmark", outs[2], "--metric", "cka", "--out-dir", out_dir])
    assert code == 0
    summary = json.loads(open(out_dir + "/summary.json").read())
    for side in ("encoder", "decoder"):
        assert (tmp_path / "cmp" / f"cka_{side}.csv").exists()
        entry = summary[side]
        assert 0.0 <= entry["aggregate"] <= 1.0
        expect = 100.0 * entry["aggregate"] / (
            sum(entry["benchmark_raws"]) / len(entry["benchmark_raws"]))
        assert entry["normalized"] == pytest.approx(expect)
    header = open(out_dir + "/cka_encoder.csv").read().splitlines()[0]
    assert header.split(",")[1:] == ["0.sa", "0.ffn", "1.sa", "1.ffn"]


def test_compare_without_benchmark_has_no_normalized(tmp_path, trained_ckpt):
    cfg, out = trained_ckpt
    out_dir = str(tmp_path / "cmp2")
    assert main(["compare", "--config", cfg, "--a", out, "--b", out,
                 "--out-dir", out_dir]) == 0
    summary = json.loads(open(out_dir + "/summary.json").read())
    assert "normalized" not in summary["encoder"]
    # a model against itself: identical representations
    assert summary["encoder"]["aggregate"] == pytest.approx(1.0)


def test_selfsim_labels_reflect_missing_ffn(tmp_path):
    cfg = write_config(tmp_path, preset="NoDec")
    out = str(tmp_path / "nodec.ckpt")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    out_dir = str(tmp_path / "ss")
    assert main(["selfsim", "--config", cfg, "--checkpoint", out,
                 "--out-dir", out_dir]) == 0
    dec_header = open(out_dir + "/selfsim_decoder.csv").read().splitlines()[0]
    assert "ffn" not in dec_header
    assert "0.sa" in dec_header and "0.ca" in dec_header
    enc_header = open(out_dir + "/selfsim_encoder.csv").read().splitlines()[0]
    assert "0.ffn" in enc_header


def test_bench_verb_csv_shape(tmp_path, trained_ckpt):
    cfg, out = trained_ckpt
    other = str(tmp_path / "other.ckpt")
    cfg2 = write_config(tmp_path, name="run2.yaml", seed=11)
    assert main(["train", "--config", cfg2, "--out", other]) == 0
    csv_path = str(tmp_path / "bench.csv")
    code = main(["bench", "--config", cfg, "--checkpoints", out, other,
                 "--batch-sizes", "1,2", "--runs", "2", "--out", csv_path])
    assert code == 0
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "# nondeterministic: timing"
    assert lines[1] == "config,batch_size,tokens_per_sec,std,delta_pct,n_batches"
    assert len(lines) == 2 + 4  # 2 models x 2 batch sizes
    assert lines[2].startswith("model,1,")
    # reference rows leave the delta column empty
    assert lines[2].split(",")[4] == ""
    assert lines[3].split(",")[4] != ""


def test_bench_single_model_drops_delta_column(tmp_path, trained_ckpt):
    cfg, out = trained_ckpt
    csv_path = str(tmp_path / "solo.csv")
    assert main(["bench", "--config", cfg, "--checkpoints", out,
                 "--batch-sizes", "2", "--runs", "2", "--out", csv_path]) == 0
    lines = open(csv_path).read().splitlines()
    assert lines[1] == "config,batch_size,tokens_per_sec,std,n_batches"


def test_sweep_verb_rows(tmp_path, capsys):
    cfg = write_config(tmp_path)
    csv_path = str(tmp_path / "sweep.csv")
    assert main(["sweep", "--config", cfg, "--side", "decoder",
                 "--dims", "0,16", "--out", csv_path]) == 0
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "d_ff,side,token_accuracy,params,noop"
    assert lines[1].startswith("0,decoder,") and lines[1].endswith(",true")
    assert lines[2].startswith("16,decoder,") and lines[2].endswith(",false")


# ---------------------------------------------------------------- exit codes

def test_exit_code_2_for_config_errors(tmp_path, capsys):
    bad = write_config(tmp_path, training={"momentum": 0.9})
    assert main(["params", "--config", bad]) == 2
    assert "error:" in capsys.readouterr().err
    listy = tmp_path / "list.yaml"
    listy.write_text("- a\n- b\n")
    assert main(["params", "--config", str(listy)]) == 2


def test_exit_code_3_for_missing_files(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["eval", "--config", cfg, "--checkpoint",
                 str(tmp_path / "nope.ckpt")]) == 3
    assert main(["params", "--config", str(tmp_path / "missing.yaml")]) == 3


def test_exit_code_3_for_bad_corpus(tmp_path):
    (tmp_path / "s.txt").write_text("a b\nc\n")
    (tmp_path / "t.txt").write_text("x\n")
    cfg = write_config(tmp_path, task=..., corpus={
        "src": str(tmp_path / "s.txt"), "tgt": str(tmp_path / "t.txt"),
    })
    out = str(tmp_path / "m.ckpt")
    assert main(["train", "--config", cfg, "--out", out]) == 3


def test_exit_code_4_for_numeric_failures(tmp_path, monkeypatch):
    def blow_up(*a, **k):
        raise NumericError("non-finite gradient in test")

    monkeypatch.setattr("wideffn.cli.train", blow_up)
    cfg = write_config(tmp_path)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "m.ckpt")]) == 4


def test_corpus_files_drive_training(tmp_path):
    src = tmp_path / "s.txt"
    tgt = tmp_path / "t.txt"
    src.write_text("a b c\nb c a\nc a b\na c b\n")
    tgt.write_text("a b c\nb c a\nc a b\na c b\n")
    cfg = write_config(tmp_path, task=..., corpus={"src": str(src), "tgt": str(tgt)})
    out = str(tmp_path / "files.ckpt")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    assert main(["eval", "--config", cfg, "--checkpoint", out]) == 0
