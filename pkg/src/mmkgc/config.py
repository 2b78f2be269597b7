"""Run configuration: sectioned key=value files plus CLI flag overrides.

One schema drives everything: parsing, type coercion, override validation,
the typed views handed to the pipeline modules, and the effective-config
echo written into output directories. A value can come from (in rising
precedence) the schema default, the config file, or a CLI flag; every key
is addressed as "section.key" in error messages.
"""
import configparser
import os
from dataclasses import dataclass

from .corruption import CorruptionSpec
from .errors import ConfigError
from .model import ModelConfig
from .structure import StructureConfig
from .training import TrainConfig

SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "data": {
        "dataset": (str, ""),
        "visual": (str, ""),
        "textual": (str, ""),
        "structural": (str, ""),
    },
    "model": {
        "dim": (int, 200),
        "n_simple": (int, 2),
        "n_phm": (int, 2),
        "phm_blocks": (int, 2),
        "kappa": (int, 2),
        "tau": (float, 1.0),
        "whiten_eps": (float, 1e-5),
        "renormalize_topk": (bool, False),
        "gate_noise": (bool, True),
        "trainable_structural": (bool, False),
    },
    "train": {
        "batch_size": (int, 512),
        "lr": (float, 0.001),
        "epochs": (int, 100),
        "mode": (str, "one-vs-all"),
        "n_neg": (int, 32),
        "label_smoothing": (float, 0.0),
        "patience": (int, 10),
        "eval_every": (int, 5),
        "grad_clip": (float, 5.0),
    },
    "structure": {
        "dim": (int, 200),
        "lr": (float, 0.001),
        "epochs": (int, 200),
        "batch_size": (int, 512),
        "label_smoothing": (float, 0.0),
        "grad_clip": (float, 5.0),
        "patience": (int, 10),
        "eval_every": (int, 5),
    },
    "retrieval": {
        "k": (int, 20),
        "sweep": (str, "10,20,30,40"),
    },
    "predictor": {
        "mode": (str, "mock"),
        "endpoint": (str, ""),
        "oracle": (str, ""),
        "constant": (str, ""),
        "max_tokens": (int, 16),
        "temperature": (float, 0.0),
    },
    "corruption": {
        "kind": (str, ""),
        "fraction": (float, 0.0),
        "modality": (str, ""),
        "scale": (float, 1.0),
    },
    "run": {
        "out": (str, "runs/latest"),
        "seed": (int, 0),
        "workers": (int, 1),
        "checkpoint": (str, ""),   # model prefix; empty means <out>/model
    },
}

_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


def _coerce(value, typ: type, where: str):
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if typ is bool:
            if text.lower() not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[text.lower()]
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where} expects {typ.__name__}, got '{value}'")


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(dim=m["dim"], n_simple=m["n_simple"],
                           n_phm=m["n_phm"], phm_blocks=m["phm_blocks"],
                           kappa=m["kappa"], tau=m["tau"],
                           whiten_eps=m["whiten_eps"],
                           renormalize_topk=m["renormalize_topk"],
                           gate_noise=m["gate_noise"],
                           trainable_structural=m["trainable_structural"])

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(dim=self.get("model", "dim"),
                           batch_size=t["batch_size"], lr=t["lr"],
                           epochs=t["epochs"],
                           kappa=self.get("model", "kappa"),
                           n_neg=t["n_neg"], mode=t["mode"],
                           label_smoothing=t["label_smoothing"],
                           seed=self.get("run", "seed"),
                           patience=t["patience"], eval_every=t["eval_every"],
                           grad_clip=t["grad_clip"])

    def structure_config(self) -> StructureConfig:
        s = self.values["structure"]
        return StructureConfig(dim=s["dim"], lr=s["lr"], epochs=s["epochs"],
                               batch_size=s["batch_size"],
                               label_smoothing=s["label_smoothing"],
                               grad_clip=s["grad_clip"],
                               seed=self.get("run", "seed"),
                               patience=s["patience"],
                               eval_every=s["eval_every"])

    def corruption_spec(self) -> CorruptionSpec | None:
        c = self.values["corruption"]
        if not c["kind"]:
            return None
        return CorruptionSpec(kind=c["kind"], p=c["fraction"],
                              seed=self.get("run", "seed"),
                              modality=c["modality"] or None,
                              scale=c["scale"])

    def sweep_ks(self) -> list[int]:
        raw = self.get("retrieval", "sweep")
        try:
            ks = [int(part) for part in str(raw).split(",") if part.strip()]
        except ValueError:
            raise ConfigError(f"retrieval.sweep expects comma-separated ints, "
                              f"got '{raw}'")
        if not ks or any(k < 1 for k in ks):
            raise ConfigError(f"retrieval.sweep needs positive ints, got '{raw}'")
        return ks

    def echo_text(self) -> str:
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                lines.append(f"{key} = {self.values[section][key]}")
            lines.append("")
        return "\n".join(lines)


def load_config(path: str | None = None,
                overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, then file values, then overrides keyed as "section.key"."""
    values = {section: {key: default for key, (_, default) in keys.items()}
              for section, keys in SCHEMA.items()}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section '{section}' in {path}")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key '{section}.{key}' in {path}")
                typ = SCHEMA[section][key][0]
                values[section][key] = _coerce(raw, typ, f"{section}.{key}")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key '{dotted}'")
        typ = SCHEMA[section][key][0]
        values[section][key] = _coerce(value, typ, dotted)
    return RunConfig(values=values)
