"""Tests for CSV artifacts and run manifests."""

import hashlib

import numpy as np

from epochnoise.manifest import (
    MANIFEST_NAME,
    ArtifactWriter,
    RunManifest,
    format_value,
    read_csv_body,
    write_csv,
)


def test_format_value():
    assert format_value(True) == "true"
    assert format_value(np.bool_(False)) == "false"
    assert format_value(np.int64(7)) == "7"
    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1e-300)) == "1e-300"
    assert float(format_value(np.float64(2.0) / 3.0)) == 2.0 / 3.0
    assert format_value("large") == "large"


def test_write_csv_hashes_body_only(tmp_path):
    rows = [[1, 0.5], {"lag": 2, "value": -0.25}]
    a = write_csv(tmp_path / "a.csv", ["lag", "value"], rows, header={"seed": 1})
    b = write_csv(tmp_path / "b.csv", ["lag", "value"], rows, header={"seed": 2})
    assert a["rows"] == 2
    assert a["sha256"] == b["sha256"]

    body = read_csv_body(tmp_path / "a.csv")
    assert body == "lag,value\n1,0.5\n2,-0.25\n"
    assert a["sha256"] == hashlib.sha256(body.encode()).hexdigest()
    assert (tmp_path / "a.csv").read_text().startswith("# seed: 1\n")


def test_writer_records_files_and_saves_manifest(tmp_path):
    manifest = RunManifest(kind="theory-table", config={"experiment": {"seed": 3}})
    writer = ArtifactWriter(tmp_path / "run", manifest, header={"version": "0.1.0"})
    writer.write_csv("table.csv", ["x"], [[1], [2]])
    writer.write_text("plot.svg", "<svg/>")
    writer.register("extra.csv", {"path": str(tmp_path / "extra.csv"), "sha256": "ab", "rows": 4})
    manifest.metrics["answer"] = np.float64(0.25)
    manifest.rng_streams.append({"name": "ensemble", "seed": "3:0"})
    path = writer.finish()

    assert path == tmp_path / "run" / MANIFEST_NAME
    assert [f["path"] for f in manifest.files] == ["table.csv", "plot.svg", "extra.csv"]
    assert read_csv_body(tmp_path / "run" / "table.csv").startswith("x\n")
    assert (tmp_path / "run" / "table.csv").read_text().startswith("# version: 0.1.0\n")

    loaded = RunManifest.load(path)
    assert loaded.kind == "theory-table"
    assert loaded.config == {"experiment": {"seed": 3}}
    assert loaded.metrics == {"answer": 0.25}
    assert loaded.files[0]["rows"] == 2
    assert loaded.rng_streams == [{"name": "ensemble", "seed": "3:0"}]
    assert loaded.wall_clock_seconds >= 0
    assert loaded.started
