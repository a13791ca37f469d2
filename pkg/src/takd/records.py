"""Append-only run records: one JSON object per line."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

ENGINE_VERSION = "0.1.0"


def canonical_json(obj) -> str:
    """Canonical serialization: sorted keys, compact separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class RunRecord:
    experiment: str
    mode: str
    path: list[int]
    config: dict
    seed: int
    epoch_train_acc: list[float] = field(default_factory=list)
    epoch_test_acc: list[float] = field(default_factory=list)
    final_train_acc: float = float("nan")
    final_test_acc: float = float("nan")
    wall_time: float = 0.0
    engine_version: str = ENGINE_VERSION

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "mode": self.mode,
            "path": list(self.path),
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "epoch_train_acc": self.epoch_train_acc,
            "epoch_test_acc": self.epoch_test_acc,
            "final_train_acc": self.final_train_acc,
            "final_test_acc": self.final_test_acc,
            "wall_time": self.wall_time,
            "engine_version": self.engine_version,
        }


class RecordWriter:
    """Serialized appender; flushes after every record so the file stays
    readable after abrupt termination between lines."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: RunRecord | dict) -> None:
        payload = record.to_dict() if isinstance(record, RunRecord) else record
        line = json.dumps(payload, sort_keys=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()


def read_records(path) -> list[dict]:
    """Read complete JSON lines; a trailing partial line is ignored."""
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for line in text.split("\n")[:-1]:
        if line.strip():
            out.append(json.loads(line))
    return out


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start
