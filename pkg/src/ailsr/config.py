"""Run configuration: one JSON document, validated strictly and hashed."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .importance import AilConfig, TeacherInitConfig
from .model import ModelSpec
from .training import SCHEMES, DistillConfig, TrainConfig


class ConfigError(ValueError):
    pass


def _build(cls, raw, section):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


@dataclass(frozen=True)
class DataPaths:
    manifest: str = None
    val_images: str = None

    def __post_init__(self):
        if not self.manifest:
            raise ValueError("data.manifest is required")


@dataclass
class RunConfig:
    scheme: str
    model: ModelSpec
    train: TrainConfig
    data: DataPaths
    ail: AilConfig = field(default_factory=AilConfig)
    teacher_init: TeacherInitConfig = field(default_factory=TeacherInitConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    teacher_checkpoint: str = None
    output: str = None
    threads: int = 1

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "model": dataclasses.asdict(self.model),
            "train": {k: v for k, v in dataclasses.asdict(self.train).items() if k != "scheme"},
            "data": dataclasses.asdict(self.data),
            "ail": dataclasses.asdict(self.ail),
            "teacher_init": dataclasses.asdict(self.teacher_init),
            "distill": {"beta": self.distill.beta},
            "teacher_checkpoint": self.teacher_checkpoint,
            "output": self.output,
            "threads": self.threads,
        }

    def content_hash(self):
        """sha256 of the canonical config, excluding the output directory."""
        doc = self.to_dict()
        doc.pop("output")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


TOP_KEYS = {
    "scheme", "model", "train", "data", "ail", "teacher_init", "distill",
    "teacher_checkpoint", "output", "threads",
}


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    scheme = raw.get("scheme")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    train_raw = dict(raw.get("train") or {})
    if "scheme" in train_raw:
        raise ConfigError("set the scheme at top level, not inside 'train'")
    train_raw["scheme"] = scheme
    distill_raw = dict(raw.get("distill") or {})
    if "teacher_checkpoint" in distill_raw:
        raise ConfigError("use the top-level 'teacher_checkpoint' key")
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {threads!r}")
    return RunConfig(
        scheme=scheme,
        model=_build(ModelSpec, raw.get("model"), "model"),
        train=_build(TrainConfig, train_raw, "train"),
        data=_build(DataPaths, raw.get("data"), "data"),
        ail=_build(AilConfig, raw.get("ail"), "ail"),
        teacher_init=_build(TeacherInitConfig, raw.get("teacher_init"), "teacher_init"),
        distill=_build(DistillConfig, distill_raw, "distill"),
        teacher_checkpoint=raw.get("teacher_checkpoint"),
        output=raw.get("output"),
        threads=threads,
    )


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
