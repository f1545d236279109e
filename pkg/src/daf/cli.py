"""``daf`` command line: featurize, gen-data, train, eval, adapt, report.

Every flag is a config key, written ``--section.key value`` (or ``--key value``
when the key name is unique across sections).  Each run writes its resolved
config next to its primary output; ``daf <command> --config that-file``
reproduces the run.  Failures print one JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

from . import nn
from .adapt import AdaptationConfig, AdaptationCorpus, adapt_speaker, write_trace
from .audio import MfccConfig
from .config import SCHEMA, ConfigError, RunConfig, parse_config
from .corpus import CorpusError, build_vocab, featurize, load_corpus, noisy_corpus, save_corpus, split_corpus
from .model import SPEECH_RNN, DAModel, ModelConfig, ModelError, TrainConfig, evaluate, train_model
from .toy import SpeakerProfile, ToyConfig, default_speakers, shifted_speakers, synthesize_toy_corpus

COMMANDS = ("featurize", "gen-data", "train", "eval", "adapt", "report")
EXIT_ERROR = 2


class CommandError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Plumbing


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if not cfg[k]]
    if missing:
        raise ConfigError("missing required " + ", ".join(missing))


def _paths(value: str) -> list[Path]:
    return [Path(p.strip()) for p in value.split(",") if p.strip()]


def _floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in value.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {value!r}") from None


def run_id(cfg: RunConfig) -> str:
    if cfg["run.run_id"]:
        return cfg["run.run_id"]
    return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:12]


def write_resolved(cfg: RunConfig, command: str, primary: Path) -> Path:
    target = primary / "config.ini" if primary.is_dir() else primary.with_name(primary.name + ".config.ini")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(f"# resolved config for: daf {command}\n" + cfg.to_text(), encoding="utf-8")
    return target


class MetricsLog:
    """Append-only line-delimited JSON records."""

    def __init__(self, path: str, rid: str, command: str):
        self.path = Path(path) if path else None
        self.rid, self.command = rid, command
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, step, metrics: dict, **labels) -> None:
        if self.path is None:
            return
        record = {"run_id": self.rid, "command": self.command, "step": step,
                  "metrics": {k: float(v) for k, v in metrics.items()}, "timestamp": time.time()}
        if labels:
            record["labels"] = labels
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(paths) -> list[dict]:
    records = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    raise CommandError(f"{path}:{lineno}: malformed metrics record") from None
                for field in ("run_id", "command", "step", "metrics", "timestamp"):
                    if field not in rec:
                        raise CommandError(f"{path}:{lineno}: metrics record lacks {field!r}")
                records.append(rec)
    return records


def mfcc_config(cfg: RunConfig) -> MfccConfig:
    kw = cfg.section("mfcc")
    kw["n_fft"] = kw["n_fft"] or None
    return MfccConfig(**kw)


def _clip(value: float):
    return value if value > 0 else None


def _load_features(paths, cfg: RunConfig):
    corpora = [featurize(load_corpus(p), mfcc_config(cfg)) for p in paths]
    merged = corpora[0]
    for c in corpora[1:]:
        merged = merged.merged(c)
    return merged


def load_encoder(path, model: DAModel) -> nn.ParameterStore:
    store = nn.load_checkpoint(path)
    for n in SPEECH_RNN:
        if n not in store.names():
            raise ModelError(f"encoder checkpoint lacks {n}")
        if store[n].shape != model.params[n].shape:
            raise ModelError(f"dimension mismatch for {n}")
    return store


# --------------------------------------------------------------------------
# Commands


def speakers_from(cfg: RunConfig) -> list[SpeakerProfile]:
    spec = cfg["data.speakers"].strip()
    if spec.isdigit():
        n = int(spec)
        builtin = default_speakers()
        if not 1 <= n <= len(builtin):
            raise ConfigError(f"data.speakers must be 1..{len(builtin)} or a profile list")
        base = builtin[:n]
    else:
        base = [SpeakerProfile.parse(s) for s in spec.split(",") if s.strip()]
    if cfg["data.gain"] != 1.0 or cfg["data.freq_scale"] != 1.0:
        base = shifted_speakers(base, cfg["data.gain"], cfg["data.freq_scale"], prefix=cfg["data.speaker_prefix"])
    return base


def cmd_gen_data(cfg: RunConfig) -> None:
    _require(cfg, "paths.output")
    seed = cfg.require_seed("gen-data")
    d = cfg.section("data")
    toy = ToyConfig(**{k: d[k] for k in ("num_das", "conversations", "length", "stay_prob", "filler_words",
                                         "keywords_per_da", "min_tokens", "max_tokens", "p_text", "p_audio",
                                         "sample_rate", "duration", "id_prefix")},
                    speakers=speakers_from(cfg))
    out = Path(cfg["paths.output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(synthesize_toy_corpus(toy, seed), out)
    if d["split"]:
        parts = split_corpus(load_corpus(out), _floats(d["split"]), seed=seed)
        for name, part in zip(("train", "dev", "test"), parts):
            save_corpus(part, out.with_name(f"{out.stem}.{name}{out.suffix}"))
    write_resolved(cfg, "gen-data", out)


def cmd_featurize(cfg: RunConfig) -> None:
    _require(cfg, "paths.corpus", "paths.output")
    outdir = Path(cfg["paths.output"])
    outdir.mkdir(parents=True, exist_ok=True)
    mcfg = mfcc_config(cfg)
    for path in _paths(cfg["paths.corpus"]):
        save_corpus(featurize(load_corpus(path), mcfg), outdir / path.name, audio_dir="features")
    write_resolved(cfg, "featurize", outdir)


def cmd_train(cfg: RunConfig) -> None:
    _require(cfg, "paths.corpus", "paths.checkpoint")
    seed = cfg.require_seed("train")
    train = _load_features(_paths(cfg["paths.corpus"]), cfg)
    dev = _load_features(_paths(cfg["paths.dev"]), cfg) if cfg["paths.dev"] else None
    m = cfg.section("model")
    vocab = build_vocab(train, m.pop("min_count"))
    mcfg = ModelConfig(num_das=len(train.tags), vocab_size=len(vocab), n_mfcc=cfg["mfcc.num_coefficients"], **m)
    model = DAModel(mcfg, vocab, train.tags, seed=seed)
    t = cfg.section("train")
    tcfg = TrainConfig(epochs=t["epochs"], lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"],
                       clip_norm=_clip(t["clip_norm"]), seed=seed, mode=t["mode"])
    log = MetricsLog(cfg["paths.metrics"], run_id(cfg), "train")
    train_model(model, train, tcfg, dev=dev, log=lambda r: log.write(r["epoch"], {k: v for k, v in r.items()
                                                                                  if k != "epoch"}))
    ckpt = Path(cfg["paths.checkpoint"])
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    if dev is not None:
        log.write("final", {"dev_accuracy": evaluate(model, dev, tcfg.mode).accuracy}, mode=tcfg.mode)
    write_resolved(cfg, "train", ckpt)


def cmd_eval(cfg: RunConfig) -> dict:
    _require(cfg, "paths.checkpoint", "paths.corpus")
    model = DAModel.load(cfg["paths.checkpoint"])
    corpus = _load_features(_paths(cfg["paths.corpus"]), cfg)
    wer, mode = cfg["eval.wer"], cfg["eval.mode"]
    if wer > 0:
        corpus = noisy_corpus(corpus, wer, cfg.require_seed("eval with eval.wer > 0"), model.vocab.words)
    speech = load_encoder(cfg["paths.encoder"], model) if cfg["paths.encoder"] else None
    result = evaluate(model, corpus, mode, speech=speech)
    out = {**result.as_dict(), "mode": mode, "wer": wer, "condition": cfg["eval.condition"],
           "tags": model.tags}
    MetricsLog(cfg["paths.metrics"], run_id(cfg), "eval").write(
        0, {"accuracy": result.accuracy, "total": result.total},
        condition=cfg["eval.condition"], mode=mode, wer=wer)
    text = json.dumps(out, sort_keys=True)
    if cfg["paths.output"]:
        path = Path(cfg["paths.output"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        write_resolved(cfg, "eval", path)
    print(text)
    return out


def cmd_adapt(cfg: RunConfig) -> None:
    _require(cfg, "paths.checkpoint", "paths.source", "paths.target", "paths.encoder")
    seed = cfg.require_seed("adapt")
    model = DAModel.load(cfg["paths.checkpoint"])
    source = _load_features(_paths(cfg["paths.source"]), cfg)
    target = _load_features(_paths(cfg["paths.target"]), cfg)
    a = cfg.section("adapt")
    a["clip_norm"] = _clip(a["clip_norm"])
    acfg = AdaptationConfig(seed=seed, **a)
    log = MetricsLog(cfg["paths.metrics"], run_id(cfg), "adapt")
    result = adapt_speaker(model, AdaptationCorpus.from_corpora(source, target), acfg,
                           log=lambda r: log.write(r["iteration"], {k: v for k, v in r.items() if k != "iteration"}))
    enc = Path(cfg["paths.encoder"])
    enc.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(enc, result.encoder)
    if cfg["paths.trace"]:
        Path(cfg["paths.trace"]).parent.mkdir(parents=True, exist_ok=True)
        write_trace(cfg["paths.trace"], result.trace)
    log.write("final", {"iterations": len(result.trace), "stopped_early": result.stopped_early})
    write_resolved(cfg, "adapt", enc)


ROW_NAMES = {"unadapted": "Unadapted", "adapted": "Domain Adapted", "supervised": "Supervised Learning"}
MODE_NAMES = {"text": "Text", "speech": "Speech", "both": "Text+Speech"}


def report_table(records: list[dict], conditions, modes) -> list[list[str]]:
    """Rows of [condition, acc(mode1), ...]; the last record per cell wins."""
    cells = {}
    for rec in records:
        labels = rec.get("labels", {})
        if rec["command"] == "eval" and labels.get("condition"):
            cells[(labels["condition"], labels.get("mode"))] = rec["metrics"]["accuracy"]
    rows = [["Methods"] + [MODE_NAMES.get(m, m) for m in modes]]
    for c in conditions:
        rows.append([ROW_NAMES.get(c, c)] + [f"{100 * cells[(c, m)]:.2f}%" if (c, m) in cells else "-"
                                              for m in modes])
    return rows


def format_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in rows]
    rule = "-" * len(lines[0])
    return "\n".join([rule, lines[0], rule, *lines[1:], rule]) + "\n"


def cmd_report(cfg: RunConfig) -> str:
    _require(cfg, "paths.metrics")
    records = read_metrics(_paths(cfg["paths.metrics"]))
    split = lambda s: [x.strip() for x in s.split(",") if x.strip()]  # noqa: E731
    rows = report_table(records, split(cfg["report.conditions"]), split(cfg["report.modes"]))
    text = format_table(rows)
    if cfg["paths.output"]:
        out = Path(cfg["paths.output"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        out.with_suffix(".csv").write_text(buf.getvalue(), encoding="utf-8")
        write_resolved(cfg, "report", out)
    sys.stdout.write(text)
    return text


HANDLERS = {"featurize": cmd_featurize, "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "adapt": cmd_adapt, "report": cmd_report}


# --------------------------------------------------------------------------
# Entry point


def _key_listing() -> str:
    lines = ["config keys (--section.key VALUE):"]
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            default = "none" if spec.default is None else spec.default
            lines.append(f"  {section}.{key} = {default}" + (f"  ({spec.help})" if spec.help else ""))
    return "\n".join(lines)


def split_overrides(rest: list[str]) -> list[tuple[str, str]]:
    pairs, i = [], 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"missing value for {tok}")
            key, value = tok[2:], rest[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), value))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daf", description="Dialogue-act classification from text and speech.",
                                     epilog=_key_listing(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value file with [section] headers")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    command = None
    try:
        args, rest = parser.parse_known_args(argv)
        command = args.command
        cfg = parse_config(args.config, split_overrides(rest), command=command)
        HANDLERS[command](cfg)
    except (ConfigError, CommandError, CorpusError, ModelError, ValueError, RuntimeError, OSError,
            IndexError) as exc:
        err = {"error": type(exc).__name__, "command": command, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
