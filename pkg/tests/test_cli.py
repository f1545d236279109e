import json
from pathlib import Path

import numpy as np
import pytest

from daf import nn
from daf.cli import main, read_metrics, report_table
from daf.config import ConfigError, RunConfig, parse_config
from daf.model import SPEECH_RNN, DAModel, init_params

SMALL = ["--data.conversations", "6", "--data.length", "4", "--data.duration", "0.1"]
DIMS = ["--model.d_e", "4", "--model.d_tx", "4", "--model.d_sp", "4", "--model.cnn_channels", "4",
        "--model.cnn_width", "3"]


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- configuration ---------------------------------------------------------


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, ""), env={})
    assert cfg.values == RunConfig().values
    assert cfg["run.seed"] is None
    with pytest.raises(ConfigError, match="missing seed"):
        parse_config(_write(tmp_path, ""), env={}, command="train")
    parse_config(_write(tmp_path, ""), env={}, command="featurize")


def test_command_line_overrides_file(tmp_path):
    path = _write(tmp_path, "[train]\nlr = 0.01\nepochs = 3\n")
    assert parse_config(path, env={})["train.lr"] == 0.01
    cfg = parse_config(path, [("lr", "0.001")], env={})
    assert cfg["train.lr"] == 0.001 and cfg["train.epochs"] == 3
    assert parse_config(path, [("train.lr", "0.5")], env={})["lr"] == 0.5


def test_misspelled_key_names_nearest(tmp_path):
    with pytest.raises(ConfigError, match=r"unknown key train\.laerning_rate.*did you mean"):
        parse_config(_write(tmp_path, "[train]\nlaerning_rate = 0.1\n"), env={})
    with pytest.raises(ConfigError, match="did you mean 'train.epochs'"):
        parse_config(None, [("train.epoch", "3")], env={})
    with pytest.raises(ConfigError, match=r"unknown section \[trian\].*\[train\]"):
        parse_config(_write(tmp_path, "[trian]\nlr = 0.1\n"), env={})


def test_type_mismatch_and_ambiguity(tmp_path):
    with pytest.raises(ConfigError, match="type mismatch for train.epochs"):
        parse_config(None, [("train.epochs", "many")], env={})
    with pytest.raises(ConfigError, match="ambiguous key 'mode'"):
        parse_config(None, [("mode", "text")], env={})


def test_seed_from_environment_is_a_fallback(tmp_path):
    assert parse_config(None, env={"DAF_SEED": "7"}, command="train")["run.seed"] == 7
    path = _write(tmp_path, "[run]\nseed = 3\n")
    assert parse_config(path, env={"DAF_SEED": "7"})["run.seed"] == 3
    assert parse_config(None, [("seed", "4")], env={"DAF_SEED": "7"})["run.seed"] == 4


def test_resolved_text_roundtrips(tmp_path):
    cfg = parse_config(None, [("seed", "5"), ("train.lr", "0.1234567890123"), ("paths.corpus", "a b.txt")],
                       env={})
    again = parse_config(_write(tmp_path, cfg.to_text()), env={})
    assert again.values == cfg.values


# -- commands --------------------------------------------------------------


def _run(*args):
    assert main([str(a) for a in args]) == 0


ADAPT_SMALL = ["--adapt.max_iterations", "5", "--adapt.min_iterations", "5", "--adapt.batch_size", "4"]


def _pipeline(root: Path, data=SMALL, dims=DIMS, epochs=2, adapt=ADAPT_SMALL):
    root.mkdir(parents=True, exist_ok=True)
    raw = root / "raw"
    _run("gen-data", "--seed", 1, "--paths.output", raw / "src.txt", "--data.split", "0.5,0.25,0.25", *data)
    _run("gen-data", "--seed", 2, "--paths.output", raw / "trg.txt", "--data.speakers", 3,
         "--data.freq_scale", 1.2, "--data.gain", 0.5, "--data.id_prefix", "trg", *data)
    feats = root / "feats"
    _run("featurize", "--paths.corpus", f"{raw / 'src.train.txt'},{raw / 'src.dev.txt'},{raw / 'trg.txt'}",
         "--paths.output", feats)
    metrics = root / "metrics.jsonl"
    ckpt = root / "model.ckpt"
    _run("train", "--seed", 3, "--paths.corpus", feats / "src.train.txt", "--paths.dev", feats / "src.dev.txt",
         "--paths.checkpoint", ckpt, "--paths.metrics", metrics, "--train.epochs", epochs, "--train.mode", "speech",
         *dims)
    _run("eval", "--paths.checkpoint", ckpt, "--paths.corpus", feats / "trg.txt", "--eval.mode", "speech",
         "--eval.condition", "unadapted", "--paths.metrics", metrics, "--paths.output", root / "unadapted.json")
    _run("adapt", "--seed", 4, "--paths.checkpoint", ckpt, "--paths.source", feats / "src.train.txt",
         "--paths.target", feats / "trg.txt", "--paths.encoder", root / "encoder.ckpt",
         "--paths.trace", root / "trace.csv", "--paths.metrics", metrics,
         *adapt)
    _run("eval", "--paths.checkpoint", ckpt, "--paths.encoder", root / "encoder.ckpt", "--paths.corpus",
         feats / "trg.txt", "--eval.mode", "speech", "--eval.condition", "adapted", "--paths.metrics", metrics,
         "--paths.output", root / "adapted.json")
    _run("report", "--paths.metrics", metrics, "--paths.output", root / "table.txt")
    return root


ARTIFACTS = ["raw/src.txt", "raw/src.train.txt", "raw/trg.txt", "raw/audio/conv0000_000.wav",
             "feats/src.train.txt", "feats/trg.txt", "feats/features/trg0000_000.mfcc", "model.ckpt",
             "model.ckpt.json", "unadapted.json", "encoder.ckpt", "trace.csv", "adapted.json", "table.txt",
             "table.csv"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return _pipeline(tmp_path_factory.mktemp("pipe"))


def test_pipeline_emits_all_artifacts(pipeline, capsys):
    for rel in ARTIFACTS:
        assert (pipeline / rel).is_file(), rel
    for rel in ("raw/src.txt", "feats", "model.ckpt", "unadapted.json", "encoder.ckpt", "table.txt"):
        p = pipeline / rel
        resolved = p / "config.ini" if p.is_dir() else p.with_name(p.name + ".config.ini")
        assert resolved.is_file(), rel
    table = (pipeline / "table.txt").read_text()
    assert "Unadapted" in table and "Domain Adapted" in table and "Speech" in table
    rows = (pipeline / "table.csv").read_text().splitlines()
    assert rows[0] == "Methods,Speech,Text+Speech" and rows[3].startswith("Supervised Learning,-")


def test_metrics_records_are_well_formed(pipeline):
    records = read_metrics([pipeline / "metrics.jsonl"])
    assert {r["command"] for r in records} == {"train", "eval", "adapt"}
    for r in records:
        assert isinstance(r["timestamp"], float) and isinstance(r["metrics"], dict)
    train = [r for r in records if r["command"] == "train"]
    assert [r["step"] for r in train] == [1, 2, "final"]
    assert sum(r["command"] == "adapt" and r["step"] != "final" for r in records) == 5


def _snapshot(root: Path) -> dict:
    return {rel: (root / rel).read_bytes() for rel in ARTIFACTS}


def _strip(records):
    return [{k: v for k, v in r.items() if k != "timestamp"} for r in records]


def test_rerun_from_resolved_configs_is_bit_exact(pipeline):
    before = _snapshot(pipeline)
    metrics = pipeline / "metrics.jsonl"
    first = _strip(read_metrics([metrics]))
    metrics.unlink()
    for rel in ARTIFACTS:
        (pipeline / rel).unlink()
    resolved = [pipeline / "raw/src.txt.config.ini", pipeline / "raw/trg.txt.config.ini",
                pipeline / "feats/config.ini", pipeline / "model.ckpt.config.ini",
                pipeline / "unadapted.json.config.ini", pipeline / "encoder.ckpt.config.ini",
                pipeline / "adapted.json.config.ini", pipeline / "table.txt.config.ini"]
    for path in resolved:
        command = path.read_text().splitlines()[0].split("daf ")[1]
        _run(command, "--config", path)
    assert _snapshot(pipeline) == before
    assert _strip(read_metrics([metrics])) == first


def test_eval_twice_is_identical(pipeline, capsys):
    args = ["eval", "--paths.checkpoint", pipeline / "model.ckpt", "--paths.corpus", pipeline / "feats/trg.txt",
            "--eval.mode", "speech", "--eval.wer", "0.3", "--seed", "9"]
    _run(*args)
    one = capsys.readouterr().out
    _run(*args)
    assert capsys.readouterr().out == one
    assert json.loads(one)["total"] == 24


def test_zero_epochs_keeps_initialization(pipeline, tmp_path, capsys):
    ckpt = tmp_path / "init.ckpt"
    _run("train", "--seed", 11, "--paths.corpus", pipeline / "feats/src.train.txt", "--paths.checkpoint", ckpt,
         "--train.epochs", 0, *DIMS)
    model = DAModel.load(ckpt)
    init = init_params(model.cfg, 11)
    for name in init.names():
        np.testing.assert_array_equal(model.params[name].value, init[name].value)
    _run("eval", "--paths.checkpoint", ckpt, "--paths.corpus", pipeline / "feats/src.train.txt", "--eval.mode",
         "both")
    fresh = DAModel(model.cfg, model.vocab, model.tags, params=init_params(model.cfg, 11))
    from daf.corpus import featurize, load_corpus
    from daf.model import evaluate
    expect = evaluate(fresh, featurize(load_corpus(pipeline / "feats/src.train.txt")), "both").accuracy
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["accuracy"] == expect


def test_errors_are_single_json_lines(tmp_path, capsys):
    assert main(["train", "--paths.corpus", "x.txt", "--paths.checkpoint", "y"]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    rec = json.loads(err)
    assert rec["command"] == "train" and "missing seed" in rec["message"]

    assert main(["eval", "--paths.checkpoint", str(tmp_path / "none.ckpt"), "--paths.corpus", "c.txt"]) == 2
    assert json.loads(capsys.readouterr().err)["command"] == "eval"

    assert main(["gen-data", "--seed", "1", "--data.conversations", "0", "--paths.output",
                 str(tmp_path / "c.txt")]) == 2
    assert json.loads(capsys.readouterr().err)["error"]

    assert main(["report", "--report.moods", "speech"]) == 2
    assert "did you mean" in json.loads(capsys.readouterr().err)["message"]

    bad = tmp_path / "corpus.txt"
    bad.write_text("#tags a b\n#conv c\ns\tzzz\t-\thello\n")
    assert main(["featurize", "--paths.corpus", str(bad), "--paths.output", str(tmp_path / "o")]) == 2
    assert "unknown DA tag" in json.loads(capsys.readouterr().err)["message"]


def test_encoder_dimension_mismatch_fails(pipeline, tmp_path, capsys):
    shapes = [(4, 1), (4, 1), (4,)]
    other = nn.ParameterStore((n, np.zeros(s)) for n, s in zip(SPEECH_RNN, shapes))
    nn.save_checkpoint(tmp_path / "enc.ckpt", other)
    assert main(["eval", "--paths.checkpoint", str(pipeline / "model.ckpt"), "--paths.encoder",
                 str(tmp_path / "enc.ckpt"), "--paths.corpus", str(pipeline / "feats/trg.txt"),
                 "--eval.mode", "speech"]) == 2
    assert "mismatch" in json.loads(capsys.readouterr().err)["message"]


@pytest.mark.slow
def test_pipeline_at_full_toy_scale(tmp_path, capsys):
    root = _pipeline(tmp_path / "full", data=[], dims=[], epochs=10, adapt=[])
    for rel in ARTIFACTS:
        assert (root / rel).is_file(), rel
    records = read_metrics([root / "metrics.jsonl"])
    evals = {r["labels"]["condition"]: r["metrics"]["accuracy"] for r in records if r["command"] == "eval"}
    assert set(evals) == {"unadapted", "adapted"}
    assert all(0.0 <= a <= 1.0 for a in evals.values())
    rows = (root / "table.csv").read_text().splitlines()
    assert rows[0] == "Methods,Speech,Text+Speech"
    assert [r.split(",")[0] for r in rows[1:]] == ["Unadapted", "Domain Adapted", "Supervised Learning"]
    assert rows[1].split(",")[1] == f"{100 * evals['unadapted']:.2f}%"


def test_report_latest_record_wins():
    recs = [{"command": "eval", "metrics": {"accuracy": 0.5}, "labels": {"condition": "adapted", "mode": "speech"}},
            {"command": "eval", "metrics": {"accuracy": 0.25}, "labels": {"condition": "adapted", "mode": "speech"}},
            {"command": "train", "metrics": {"loss": 1.0}}]
    rows = report_table(recs, ["unadapted", "adapted"], ["speech"])
    assert rows == [["Methods", "Speech"], ["Unadapted", "-"], ["Domain Adapted", "25.00%"]]
