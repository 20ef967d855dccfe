"""CSV artifacts and the per-run manifest."""

import csv
import hashlib
import io
import logging
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import yaml

from . import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"


def format_value(value: Any) -> str:
    """Shortest round-tripping text for a CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def csv_body(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> tuple[str, int]:
    """Render the column line and rows; returns (text, row count)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    count = 0
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(c, "") for c in columns]
        writer.writerow([format_value(v) for v in row])
        count += 1
    return buffer.getvalue(), count


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    header: Optional[dict] = None,
) -> dict:
    """Write ``# key: value`` header lines followed by the CSV body.

    Rows may be sequences in column order or dicts keyed by column name.

    Returns:
        File record with path, sha256 of the body (header excluded) and row count
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body, count = csv_body(columns, rows)
    lines = [f"# {key}: {format_value(value)}\n" for key, value in (header or {}).items()]
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.writelines(lines)
        f.write(body)
    return {"path": str(path), "sha256": sha256_hex(body.encode("utf-8")), "rows": count}


def read_csv_body(path: Path) -> str:
    """CSV text of a written artifact with the comment header stripped."""
    with open(path, encoding="utf-8") as f:
        return "".join(line for line in f if not line.startswith("#"))


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one run."""

    kind: str
    config: dict
    version: str = __version__
    started: str = ""
    wall_clock_seconds: float = 0.0
    rng_streams: list[dict] = field(default_factory=list)
    files: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    python: str = field(default_factory=platform.python_version)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "version": self.version,
            "started": self.started,
            "wall_clock_seconds": self.wall_clock_seconds,
            "python": self.python,
            "config": self.config,
            "rng_streams": self.rng_streams,
            "files": self.files,
            "metrics": self.metrics,
        }

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(_plain(self.to_dict()), f, default_flow_style=False, sort_keys=False)
        return path

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
        return cls(
            kind=data["kind"],
            config=data["config"],
            version=data.get("version", ""),
            started=data.get("started", ""),
            wall_clock_seconds=data.get("wall_clock_seconds", 0.0),
            rng_streams=data.get("rng_streams", []),
            files=data.get("files", []),
            metrics=data.get("metrics", {}),
            python=data.get("python", ""),
        )


def _plain(value):
    """Convert numpy scalars/arrays so yaml.safe_dump accepts them."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class ArtifactWriter:
    """Writes a run's files into one directory and records them in the manifest."""

    def __init__(self, output_dir: Path, manifest: RunManifest, header: Optional[dict] = None):
        self.output_dir = Path(output_dir)
        self.manifest = manifest
        self.header = dict(header or {})
        self._started = time.perf_counter()
        manifest.started = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def write_csv(
        self,
        name: str,
        columns: Sequence[str],
        rows: Iterable[Sequence[Any]],
        header: Optional[dict] = None,
    ) -> Path:
        path = self.output_dir / name
        record = write_csv(path, columns, rows, header={**self.header, **(header or {})})
        record["path"] = name
        self.manifest.files.append(record)
        logger.info(f"Wrote {name} ({record['rows']} rows)")
        return path

    def register(self, name: str, record: dict) -> None:
        """Record a file written elsewhere into the output directory."""
        self.manifest.files.append({**record, "path": name})

    def write_text(self, name: str, text: str) -> Path:
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        self.manifest.files.append(
            {"path": name, "sha256": sha256_hex(text.encode("utf-8")), "rows": 0}
        )
        return path

    def finish(self) -> Path:
        """Write the manifest last."""
        self.manifest.wall_clock_seconds = round(time.perf_counter() - self._started, 3)
        return self.manifest.save(self.output_dir / MANIFEST_NAME)
