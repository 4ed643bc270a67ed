import json

import pytest

from manifest import MANIFEST_NAME, Manifest, ManifestError
from writers import WRITERS, BaseWriter, CsvWriter, Table, TableWriter
from writers.base_writer import format_value
from writers.table_writer import render_table

TABLE = Table(
    ["time_us", "i_total", "label", "steps"],
    [(1.2, 0.123456789012, "base", 3), (6.53, -2.5e-9, "plus", 40)],
    title="trace",
    notes=["window 0-20 us"],
)


def test_format_value() -> None:
    assert format_value("time_us", 6.53) == "6.5300"
    assert format_value("time_us", 5) == "5.0000"
    assert format_value("integral", 1 / 3) == "0.333333333"
    assert format_value("count", 3) == "3"
    assert format_value("label", "left") == "left"


def test_base_writer_is_abstract(tmp_path) -> None:
    with pytest.raises(NotImplementedError):
        BaseWriter(tmp_path).write("x", TABLE)


def test_csv_content(tmp_path) -> None:
    path = CsvWriter(tmp_path / "run").write("base/energy", TABLE)
    assert path == tmp_path / "run" / "base" / "energy.csv"
    assert path.read_text(encoding="utf-8") == (
        "time_us,i_total,label,steps\n1.2000,0.123456789,base,3\n6.5300,-2.5e-09,plus,40\n"
    )


def test_text_table_is_for_summaries(tmp_path) -> None:
    assert TableWriter.summaries_only and not CsvWriter.summaries_only
    assert set(WRITERS) == {"csv", "table"}
    path = TableWriter(tmp_path).write("summary", TABLE)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "trace"
    assert lines[2].split() == ["time_us", "i_total", "label", "steps"]
    assert lines[-1] == "window 0-20 us"
    assert render_table(TABLE) == path.read_text(encoding="utf-8")


def _two_files(tmp_path):
    CsvWriter(tmp_path).write("a", TABLE)
    CsvWriter(tmp_path).write("sub/b", TABLE)
    manifest = Manifest(tmp_path, {"name": "demo"})
    manifest.add(tmp_path / "sub" / "b.csv", {"stage": "diff"})
    manifest.add(tmp_path / "a.csv")
    return manifest


def test_manifest_is_sorted_and_reloadable(tmp_path) -> None:
    manifest = _two_files(tmp_path)
    target = manifest.save()
    assert target.name == MANIFEST_NAME
    data = json.loads(target.read_text(encoding="utf-8"))
    assert [f["path"] for f in data["files"]] == ["a.csv", "sub/b.csv"]
    assert data["run"] == {"name": "demo"}

    loaded = Manifest.load(tmp_path)
    assert loaded.entries == manifest.entries
    assert loaded.verify() == []
    assert loaded.find(".csv") == ["a.csv", "sub/b.csv"]
    rows = loaded.read_csv("sub/b.csv")
    assert rows[0]["label"] == "base"
    assert rows[1]["time_us"] == "6.5300"


def test_manifest_detects_tampering(tmp_path) -> None:
    _two_files(tmp_path).save()
    (tmp_path / "a.csv").write_text("time_us\n0.0000\n", encoding="utf-8")
    loaded = Manifest.load(tmp_path)
    assert loaded.verify() == ["a.csv"]
    with pytest.raises(ManifestError, match="checksum"):
        loaded.read_csv("a.csv")
    with pytest.raises(ManifestError, match="not listed"):
        loaded.read_csv("c.csv")


def test_missing_manifest(tmp_path) -> None:
    with pytest.raises(ManifestError, match="Could not load"):
        Manifest.load(tmp_path)
