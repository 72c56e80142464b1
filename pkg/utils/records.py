"""
records.py - Serialization helpers for run outputs: JSON reports, JSONL
event streams, CSV summaries and the run manifest
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from utils import ConfigError

logger = logging.getLogger("Records")

# 17 significant digits round-trip every double.
FLOAT_FORMAT = ".17g"


def format_value(value: Any) -> str:
    """CSV cell text; floats always carry 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, FLOAT_FORMAT)
    return str(value)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path: str, data: Any) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def load_config(path: str) -> Dict[str, Any]:
    """Read a JSON config file; syntax errors surface as ConfigError."""
    try:
        data = read_json(path)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    return data


def write_jsonl(path: str, header: Dict[str, Any], records: Iterable[Dict[str, Any]]) -> int:
    """Write a header line followed by one compact JSON object per record.

    Returns the number of records written.
    """
    _ensure_parent(path)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for record in records:
            f.write(json.dumps(record, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_jsonl(path: str) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Inverse of write_jsonl: (header, records)."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path} does not start with a header line")
    return lines[0], lines[1:]


def write_csv(path: str, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_value(row.get(name)) for name in fieldnames])


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def csv_column(rows: List[Dict[str, str]], name: str, cast=float) -> List[Any]:
    """One column of read_csv rows, cast to numbers."""
    try:
        return [cast(row[name]) for row in rows]
    except KeyError:
        raise ValueError(f"CSV has no column {name!r}") from None


@dataclass
class RunManifest:
    """Provenance of one simulate run; enough to replay it."""
    config_hash: str
    seed: int
    tool_version: str
    outputs: List[str] = field(default_factory=list)
    config: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "manifest",
            "config_hash": self.config_hash,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "outputs": list(self.outputs),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunManifest':
        return cls(
            config_hash=data["config_hash"],
            seed=int(data["seed"]),
            tool_version=data.get("tool_version", ""),
            outputs=list(data.get("outputs", [])),
            config=data.get("config"),
        )

    @staticmethod
    def is_manifest(data: Dict[str, Any]) -> bool:
        return isinstance(data, dict) and data.get("kind") == "manifest"
