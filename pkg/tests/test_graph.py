from __future__ import annotations

from pathlib import Path

import graphlib
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpgkit import fixture
from cpgkit.corpus import random_trace
from cpgkit.graph import (
    UnknownVertex,
    build_cpg,
    control_edges,
    data_dependencies,
    data_edges,
    export,
    export_dot,
    export_json,
    happens_before,
    hb_index,
    lineage,
    load_cpg_json,
    race_warnings,
    sync_edges,
    topological_order,
)
from cpgkit.oracle import hb_closure, reverse_reachable
from cpgkit.recorder import record
from cpgkit.simulator import load_program, run
from cpgkit.trace import load_trace, read_trace
from cpgkit.types import Cpg, Edge, SubComputationId as S

GOLDEN = Path(__file__).parent / "golden"


def trace_of(*events, t=3, **hdr):
    import json
    head = {"t": t, **hdr}
    body = [json.dumps({"seq": i, **e}) for i, e in enumerate(events)]
    return load_trace("\n".join([json.dumps(head), *body]))


def test_fig1_edges(fig1_cpg):
    assert set(fig1_cpg.edges_of("sync")) == {Edge(S(1, 1), S(2, 1), "sync"), Edge(S(2, 1), S(1, 3), "sync")}
    assert set(fig1_cpg.edges_of("data")) == {Edge(S(1, 1), S(2, 1), "data", 0), Edge(S(2, 1), S(1, 3), "data", 1)}
    chain = [e for e in fig1_cpg.edges_of("control") if e.src.thread == 1]
    assert [(e.src.index, e.dst.index) for e in chain] == [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_fig1_golden_files(fig1_run):
    cpg = build_cpg(record(read_trace(GOLDEN / "fig1_A.trace")))
    assert export_dot(cpg) == (GOLDEN / "fig1_A.dot").read_bytes()
    assert export_json(cpg) == (GOLDEN / "fig1_A.cpg.json").read_bytes()


def test_fig1_hb(fig1_rec):
    assert happens_before(S(1, 1), S(1, 3), fig1_rec)
    assert happens_before(S(1, 1), S(2, 1), fig1_rec)
    assert happens_before(S(2, 1), S(1, 3), fig1_rec)
    assert not happens_before(S(2, 1), S(1, 1), fig1_rec)
    assert not happens_before(S(1, 1), S(1, 1), fig1_rec)
    # the sync-only vertices between sections are ordered through the clocks as well
    assert not happens_before(S(2, 0), S(1, 2), fig1_rec)
    with pytest.raises(UnknownVertex):
        happens_before(S(9, 0), S(1, 1), fig1_rec)


def test_fig1_lineage(fig1_cpg):
    got = lineage(S(1, 3), fig1_cpg)
    assert set(got.vertices) == {S(1, 1), S(2, 1), S(1, 3)}
    assert got.vertices == tuple(sorted(got.vertices))
    assert set(got.vertices) == reverse_reachable(S(1, 3), fig1_cpg.edges)
    assert lineage(S(1, 1), fig1_cpg).vertices == (S(1, 1),)
    # only the page-1 dataflow feeds T1.b, so restricting to page 0 leaves it alone
    assert lineage(S(1, 3), fig1_cpg, page=0).vertices == (S(1, 3),)
    with pytest.raises(UnknownVertex):
        lineage(S(5, 5), fig1_cpg)


def test_control_edges_counts():
    rec = record(trace_of({"tid": 1, "ev": "load", "page": 0}, t=1))
    assert control_edges(rec) == set()
    rec = record(trace_of(*[{"tid": 1, "ev": ev, "obj": "m", "kind": "mutex"} for ev in ("acq", "rel") * 3], t=1))
    assert len(control_edges(rec)) == len(rec.sub_computations) - 1 == 6
    assert sync_edges(rec) == set()  # uncontended lock by one thread


def test_three_thread_barrier():
    ev = [{"tid": t, "ev": "rel", "obj": "b", "kind": "barrier"} for t in (1, 2, 3)]
    ev += [{"tid": t, "ev": "acq", "obj": "b", "kind": "barrier"} for t in (3, 1, 2)]
    rec = record(trace_of(*ev, arity={"b": 3}))
    edges = sync_edges(rec)
    assert len(edges) == 6
    assert all(e.src.thread != e.dst.thread for e in edges)
    ids, reach = hb_closure(rec)
    assert np.array_equal(reach, hb_index(rec).matrix)


def test_concurrent_writers_both_feed_reader():
    rec = record(trace_of(
        {"tid": 1, "ev": "store", "page": 7},
        {"tid": 1, "ev": "rel", "obj": "s", "kind": "semaphore"},
        {"tid": 2, "ev": "store", "page": 7},
        {"tid": 2, "ev": "rel", "obj": "s", "kind": "semaphore"},
        {"tid": 3, "ev": "acq", "obj": "s", "kind": "semaphore"},
        {"tid": 3, "ev": "acq", "obj": "s", "kind": "semaphore"},
        {"tid": 3, "ev": "load", "page": 7},
    ))
    assert data_edges(rec) == {Edge(S(1, 0), S(3, 2), "data", 7), Edge(S(2, 0), S(3, 2), "data", 7)}


def test_input_binding_and_race():
    rec = record(trace_of(
        {"tid": 1, "ev": "map_input", "input": "cfg", "range": [0, 2]},
        {"tid": 1, "ev": "load", "page": 1},
        {"tid": 2, "ev": "store", "page": 5},
        {"tid": 1, "ev": "load", "page": 5},
        t=2,
    ))
    edges, bindings = data_dependencies(rec)
    assert edges == set()
    assert {(b.input, b.page, b.sub) for b in bindings} == {("cfg", 1, S(1, 0))}
    assert len(race_warnings(rec)) == 1


def test_lineage_reaches_input():
    program = load_program(fixture("input_reader"))
    cpg = build_cpg(record(run(program, None).trace))
    main_end = max(v for v in cpg.vertices if v.thread == 1)
    got = lineage(main_end, cpg)
    assert {b.input for b in got.inputs} == {"data"}
    assert {b.page for b in got.inputs} == {program.page("buf0"), program.page("buf1")}


def test_empty_graph():
    cpg = build_cpg(record(load_trace('{"t":0}\n')))
    assert cpg.vertices == {} and cpg.edges == ()
    assert export_dot(cpg) == b"digraph cpg {\n  node [shape=box];\n}\n"


def test_export_roundtrip_and_format(fig1_cpg):
    data = export(fig1_cpg, "json")
    assert export_json(load_cpg_json(data)) == data
    assert export(fig1_cpg, "dot").startswith(b"digraph")
    with pytest.raises(ValueError):
        export(fig1_cpg, "svg")


def test_cycle_detection():
    a, b = S(1, 0), S(2, 0)
    cpg = Cpg({}, (Edge(a, b, "sync"), Edge(b, a, "sync")))
    with pytest.raises(graphlib.CycleError):
        topological_order(cpg)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_graph_properties(seed):
    rec = record(random_trace(seed, max_events=120))
    cpg = build_cpg(rec)
    topological_order(cpg)
    hb = hb_index(rec)
    v = cpg.vertices
    writers = {}
    for sid, sub in v.items():
        for p in sub.write_set:
            writers.setdefault(p, []).append(sid)
    for e in cpg.edges:
        assert e.src in v and e.dst in v
        if e.kind == "data":
            assert e.page in v[e.src].write_set and e.page in v[e.dst].read_set
            assert hb(e.src, e.dst)
            assert not any(hb(e.src, c) and hb(c, e.dst) for c in writers[e.page])
    # reachability over control + sync is exactly happens-before
    ids = hb.ids
    adj = np.zeros((len(ids), len(ids)), dtype=bool)
    for e in cpg.edges:
        if e.kind != "data":
            adj[hb.pos[e.src], hb.pos[e.dst]] = True
    reach = adj.copy()
    for k in range(len(ids)):
        reach |= reach[:, k:k + 1] & reach[k:k + 1, :]
    assert np.array_equal(reach, hb.matrix)


@pytest.mark.parametrize("seed", range(30))
def test_lineage_matches_reverse_reachability(seed):
    cpg = build_cpg(record(random_trace(seed)))
    for target in list(cpg.vertices)[::3]:
        assert set(lineage(target, cpg).vertices) == reverse_reachable(target, cpg.edges)
