from __future__ import annotations

import json
from pathlib import Path

import pytest

from cpgkit.cli import main

GOLDEN = Path(__file__).parent / "golden"
FIG1 = str(GOLDEN / "fig1_A.trace")


def cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_fig1(tmp_path, capsys):
    out_file = tmp_path / "fig1_A.trace"
    code, out, _ = cli(capsys, "simulate", "fixtures/fig1.dsl", "--schedule", "1,1,2,2,1,1", "--out", str(out_file))
    assert code == 0
    assert "15 events" in out and "x=1 y=1" in out
    assert out_file.read_bytes() == (GOLDEN / "fig1_A.trace").read_bytes()


def test_simulate_twice_identical(tmp_path, capsys):
    runs = []
    for _ in range(2):
        code, out, err = cli(capsys, "simulate", "input_reader", "--seed", "4")
        assert code == 0
        runs.append((out, err))
    assert runs[0] == runs[1]


def test_simulate_errors(tmp_path, capsys):
    code, _, err = cli(capsys, "simulate", str(tmp_path / "missing.dsl"))
    assert code != 0 and "missing.dsl" in err
    bad = tmp_path / "bad.dsl"
    bad.write_text("thread 1\nlock nothing\n")
    code, _, err = cli(capsys, "simulate", str(bad))
    assert code != 0 and "line 2" in err
    code, _, err = cli(capsys, "simulate", "fig1", "--schedule", "2,1")
    assert code != 0 and "held by thread 2" in err


def test_graph_counts(tmp_path, capsys):
    code, out, _ = cli(capsys, "graph", FIG1, "--format", "json", "--out", str(tmp_path / "g.json"))
    assert code == 0
    assert "8 vertices" in out and "data=2" in out and "sync=2" in out
    assert (tmp_path / "g.json").read_bytes() == (GOLDEN / "fig1_A.cpg.json").read_bytes()
    code, out, _ = cli(capsys, "graph", FIG1)
    assert out.encode() == (GOLDEN / "fig1_A.dot").read_bytes()


def test_graph_empty_and_bad_format(tmp_path, capsys):
    empty = tmp_path / "empty.trace"
    empty.write_text('{"t":0}\n')
    code, _, err = cli(capsys, "graph", str(empty))
    assert code == 0 and "0 vertices" in err
    with pytest.raises(SystemExit) as exc:
        main(["graph", FIG1, "--format", "svg"])
    assert exc.value.code == 2


def test_graph_invalid_trace(tmp_path, capsys):
    bad = tmp_path / "bad.trace"
    bad.write_text('{"t":1}\n{"seq":0,"tid":4,"ev":"load","page":0}\n')
    code, _, err = cli(capsys, "graph", str(bad))
    assert code == 2 and "line 2" in err and "ThreadId" in err


def test_query_hb(capsys):
    assert cli(capsys, "query", FIG1, "hb", "t1.1", "t2.1")[:2] == (0, "true\n")
    assert cli(capsys, "query", FIG1, "hb", "t1.1", "t1.1")[:2] == (1, "false\n")
    code, _, err = cli(capsys, "query", FIG1, "hb", "t7.0", "t1.1")
    assert code == 2 and "t7.0" in err


def test_query_lineage(capsys):
    code, out, _ = cli(capsys, "query", FIG1, "lineage", "t1.3")
    assert code == 0 and out.split() == ["t1.1", "t2.1", "t1.3"]
    code, out, _ = cli(capsys, "query", FIG1, "lineage", "t1.3", "--page", "0")
    assert out.split() == ["t1.3"]


def test_snapshot_cmd(tmp_path, capsys):
    code, out, _ = cli(capsys, "snapshot", FIG1, "--at", "1=5,2=8", "--at", "end", "--slots", "1",
                       "--out", str(tmp_path))
    assert code == 0
    assert "frontier t1=0 t2=-1" in out
    assert "evicted snap-001" in out
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["snap-002.cpgsnap.json"]
    data = json.loads((tmp_path / files[0]).read_text())
    assert data["cut"]["frontier"] == {"1": 4, "2": 2}


def test_stats(capsys, tmp_path):
    code, out, _ = cli(capsys, "stats", FIG1, "--json")
    stats = json.loads(out)
    assert stats["page_faults"] == 7 and stats["sub_computations"] == 8
    assert stats["data_edges"] == 2 and stats["branches"] == 1
    assert 0 < stats["compressed_bytes"] < stats["trace_bytes"]
    empty = tmp_path / "e.trace"
    empty.write_text('{"t":0}\n')
    stats = json.loads(cli(capsys, "stats", str(empty), "--json")[1])
    assert all(v == 0 for v in stats.values())


def test_config_and_env(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"format": "json", "seed": 3}))
    code, out, _ = cli(capsys, "--config", str(cfg), "graph", FIG1)
    assert code == 0 and out.startswith("{")
    # an explicit flag still wins over the config
    code, out, _ = cli(capsys, "--config", str(cfg), "graph", FIG1, "--format", "dot")
    assert out.startswith("digraph")
    monkeypatch.setenv("CPG_PAGE_SHIFT", "13")
    stats = json.loads(cli(capsys, "stats", FIG1, "--json")[1])
    assert stats["data_edges"] == 2  # x and y now share one page
    monkeypatch.setenv("CPG_PAGE_SHIFT", "8")
    code, _, err = cli(capsys, "stats", FIG1)
    assert code == 2 and "CPG_PAGE_SHIFT" in err


def test_stats_help_disclaims_overheads(capsys):
    with pytest.raises(SystemExit):
        main(["stats", "--help"])
    assert "not" in capsys.readouterr().out
