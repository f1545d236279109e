"""Run configuration: ``key = value`` files with ``[section]`` headers.

Precedence is defaults < config file < command-line overrides.  Every key has
a default; ``run.seed`` is ``None`` until supplied by the file, the command
line, or the ``DAF_SEED`` environment variable, and the seeded commands refuse
to start without it.
"""

from __future__ import annotations

import configparser
import difflib
import os
from dataclasses import dataclass
from typing import Any

SEEDED_COMMANDS = ("gen-data", "train", "adapt")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    type: type
    default: Any
    help: str = ""


def _k(t, d, h=""):
    return Key(t, d, h)


# section -> key -> Key; the order here is the order of resolved files
SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": _k(int, None, "RNG seed; mandatory for gen-data, train and adapt"),
        "run_id": _k(str, "", "label for metrics records; derived from the config when empty"),
    },
    "paths": {
        "corpus": _k(str, "", "input corpus file(s), comma separated"),
        "dev": _k(str, "", "development corpus for checkpoint selection"),
        "source": _k(str, "", "source-domain corpus for adapt"),
        "target": _k(str, "", "unlabeled target-domain corpus for adapt"),
        "checkpoint": _k(str, "", "model checkpoint to read (eval, adapt) or write (train)"),
        "encoder": _k(str, "", "adapted speech encoder to read (eval) or write (adapt)"),
        "output": _k(str, "", "primary output file or directory"),
        "metrics": _k(str, "", "metrics file(s); appended by train/eval/adapt, read by report"),
        "trace": _k(str, "", "adaptation diagnostics CSV"),
    },
    "mfcc": {
        "frame_length": _k(float, 0.025),
        "hop": _k(float, 0.010),
        "num_mel_filters": _k(int, 26),
        "num_coefficients": _k(int, 13),
        "pre_emphasis": _k(float, 0.97),
        "log_floor": _k(float, 1e-10),
        "n_fft": _k(int, 0, "0 picks the smallest power of two not below the frame length"),
    },
    "data": {
        "num_das": _k(int, 4),
        "conversations": _k(int, 200),
        "length": _k(int, 8),
        "stay_prob": _k(float, 0.85),
        "filler_words": _k(int, 40),
        "keywords_per_da": _k(int, 2),
        "min_tokens": _k(int, 4),
        "max_tokens": _k(int, 8),
        "p_text": _k(float, 0.75),
        "p_audio": _k(float, 0.75),
        "sample_rate": _k(int, 16000),
        "duration": _k(float, 0.25),
        "speakers": _k(str, "5", "count of built-in speakers, or name:gain:freq_scale:noise list"),
        "gain": _k(float, 1.0, "gain multiplier applied to every speaker"),
        "freq_scale": _k(float, 1.0, "frequency multiplier applied to every speaker"),
        "speaker_prefix": _k(str, "new", "name prefix for shifted speakers"),
        "id_prefix": _k(str, "conv"),
        "split": _k(str, "", "train,dev,test ratios; also writes one file per part"),
    },
    "model": {
        "d_e": _k(int, 32),
        "d_tx": _k(int, 64),
        "d_sp": _k(int, 64),
        "cnn_channels": _k(int, 64),
        "cnn_width": _k(int, 5),
        "cnn_stride": _k(int, 2),
        "min_count": _k(int, 1),
    },
    "train": {
        "mode": _k(str, "both"),
        "epochs": _k(int, 10),
        "lr": _k(float, 1e-3),
        "beta1": _k(float, 0.9),
        "beta2": _k(float, 0.999),
        "eps": _k(float, 1e-8),
        "clip_norm": _k(float, 5.0, "0 disables clipping"),
    },
    "eval": {
        "mode": _k(str, "both"),
        "wer": _k(float, 0.0, "simulated ASR word error rate on eval text"),
        "condition": _k(str, "", "row label for report, e.g. unadapted"),
    },
    "adapt": {
        "mode": _k(str, "speech"),
        "disc_steps": _k(int, 1),
        "enc_steps": _k(int, 1),
        "batch_size": _k(int, 16),
        "max_iterations": _k(int, 500),
        "min_iterations": _k(int, 50),
        "window": _k(int, 10),
        "band": _k(float, 0.05),
        "heldout": _k(float, 0.2),
        "disc_lr": _k(float, 1e-3),
        "enc_lr": _k(float, 1e-4),
        "clip_norm": _k(float, 5.0, "0 disables clipping"),
    },
    "report": {
        "conditions": _k(str, "unadapted,adapted,supervised"),
        "modes": _k(str, "speech,both"),
    },
}


def nearest_key(key: str, valid) -> str | None:
    match = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.0)
    return match[0] if match else None


def _all_keys() -> list[str]:
    return [f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys]


def _convert(section: str, key: str, raw):
    spec = SCHEMA[section][key]
    if raw is None or (spec.default is None and isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if spec.type is int:
            return int(text)
        if spec.type is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"type mismatch for {section}.{key}: expected {spec.type.__name__}, got {text!r}") from None
    return text


class RunConfig:
    """Resolved configuration, addressed as ``cfg["section.key"]`` or ``cfg.section["key"]``."""

    def __init__(self, values: dict[str, dict[str, Any]] | None = None):
        self.values = {s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()}
        for section, kv in (values or {}).items():
            for key, v in kv.items():
                self.set(f"{section}.{key}", v)

    def resolve_key(self, dotted: str) -> tuple[str, str]:
        if "." in dotted:
            section, key = dotted.split(".", 1)
            if section in SCHEMA and key in SCHEMA[section]:
                return section, key
        else:
            owners = [s for s, keys in SCHEMA.items() if dotted in keys]
            if len(owners) == 1:
                return owners[0], dotted
            if len(owners) > 1:
                raise ConfigError(f"ambiguous key {dotted!r}: use one of "
                                  + ", ".join(f"{s}.{dotted}" for s in owners))
        valid = _all_keys() if "." in dotted else [k for keys in SCHEMA.values() for k in keys]
        raise ConfigError(f"unknown key {dotted!r}; did you mean {nearest_key(dotted, valid)!r}?")

    def set(self, dotted: str, raw) -> None:
        section, key = self.resolve_key(dotted)
        self.values[section][key] = _convert(section, key, raw)

    def __getitem__(self, dotted: str):
        section, key = self.resolve_key(dotted)
        return self.values[section][key]

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.values[name])

    def to_text(self) -> str:
        lines = []
        for section, kv in self.values.items():
            lines.append(f"[{section}]")
            for key, v in kv.items():
                lines.append(f"{key} = {'none' if v is None else _format(v)}")
            lines.append("")
        return "\n".join(lines)

    def require_seed(self, command: str) -> int:
        seed = self.values["run"]["seed"]
        if seed is None:
            raise ConfigError(f"missing seed: {command} needs run.seed, --seed or DAF_SEED")
        return seed


def _format(v) -> str:
    # repr keeps floats round-trippable
    return repr(v) if isinstance(v, float) else str(v)


def read_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None, default_section="\0")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {source}: {exc.message.splitlines()[0]}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


def parse_config(path=None, overrides: list[tuple[str, str]] | None = None, env=None,
                 command: str | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``.

    ``DAF_SEED`` fills in the seed only when neither the file nor the
    overrides set one, so a resolved config always reruns with its own seed.
    """
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path:
        try:
            text = open(path, encoding="utf-8").read()
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        for section, kv in read_config_text(text, str(path)).items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]; did you mean [{nearest_key(section, SCHEMA)}]?")
            for key, raw in kv.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key!s}; did you mean "
                                      f"{section}.{nearest_key(key, SCHEMA[section])}?")
                cfg.set(f"{section}.{key}", raw)
    for dotted, raw in overrides or []:
        cfg.set(dotted, raw)
    if cfg["run.seed"] is None and env.get("DAF_SEED", "").strip():
        cfg.set("run.seed", env["DAF_SEED"])
    if command in SEEDED_COMMANDS:
        cfg.require_seed(command)
    return cfg
