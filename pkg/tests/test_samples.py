import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from voisynth.samples import (SampleTable, SampleTableError, read_csv, summarize,
                              write_csv, write_summary_csv)

finite = st.floats(min_value=-1e300, max_value=1e300, allow_nan=False, allow_infinity=False)


def _names(v):
    return tuple(f"c{j}" for j in range(v))


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=8),
                  elements=finite))
def test_csv_round_trip_is_exact(tmp_path_factory, draws):
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    t = SampleTable(_names(draws.shape[1]), draws, {"seed": 3})
    write_csv(t, path)
    back = read_csv(path)
    assert back.names == t.names
    assert np.array_equal(back.draws, t.draws)
    assert back.meta == {"seed": 3}


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6)),
       st.randoms(use_true_random=False))
def test_summary_is_permutation_invariant(draws, rnd):
    t = SampleTable(_names(draws.shape[1]), draws)
    perm = list(range(t.K))
    rnd.shuffle(perm)
    a, b = summarize(t), summarize(t.rows(perm))
    for ra, rb in zip(a, b):
        assert ra.median == rb.median and ra.q2_5 == rb.q2_5 and ra.q97_5 == rb.q97_5
        assert ra.mean == pytest.approx(rb.mean, rel=1e-12, abs=1e-9)
        assert ra.sd == pytest.approx(rb.sd, rel=1e-9, abs=1e-9)


def test_summary_values():
    t = SampleTable.from_columns({"x": [1.0, 2.0, 3.0, 4.0, 5.0]})
    (r,) = summarize(t)
    assert r.mean == 3.0
    assert r.sd == pytest.approx(np.sqrt(2.5))
    assert r.median == 3.0
    assert r.q2_5 == pytest.approx(1.1)
    assert r.q97_5 == pytest.approx(4.9)


def test_summary_needs_draws():
    with pytest.raises(SampleTableError, match="no draws"):
        summarize(SampleTable(("x",), np.empty((0, 1))))
    with pytest.raises(SampleTableError):
        summarize(SampleTable(("x",), np.ones((1, 1))))


def test_table_rejects_bad_input():
    with pytest.raises(SampleTableError, match="duplicate"):
        SampleTable(("a", "a"), np.zeros((2, 2)))
    with pytest.raises(SampleTableError, match="non-finite"):
        SampleTable(("a",), np.array([[np.nan]]))
    with pytest.raises(SampleTableError):
        SampleTable(("a", "b"), np.zeros((2, 3)))


def test_draws_are_read_only():
    t = SampleTable.from_columns({"a": [1.0, 2.0]})
    with pytest.raises(ValueError):
        t.draws[0, 0] = 5.0


def test_select_and_with_columns():
    t = SampleTable.from_columns({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    assert t.select(["b"]).names == ("b",)
    u = t.with_columns({"c": [5.0, 6.0]})
    assert u.names == ("a", "b", "c") and np.array_equal(u["c"], [5.0, 6.0])
    with pytest.raises(SampleTableError):
        t.with_columns({"c": [1.0]})
    with pytest.raises(KeyError):
        t["zzz"]


@pytest.mark.parametrize("body, match", [
    ("a,b\n1,2\n3\n", "line 3: expected 2 fields"),
    ("a,b\n1,x\n", "line 2, column 'b': not a number"),
    ("a,b\n1,nan\n", "line 2, column 'b': non-finite"),
    ("a,a\n1,2\n", "line 1: duplicate column name"),
    ("", "empty file"),
])
def test_read_csv_errors_name_the_location(tmp_path, body, match):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(SampleTableError, match=match):
        read_csv(p)


def test_summary_csv(tmp_path):
    t = SampleTable.from_columns({"x": [0.0, 1.0, 2.0]})
    p = tmp_path / "summary.csv"
    write_summary_csv(summarize(t), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "name,mean,sd,median,q2.5,q97.5"
    assert lines[1].startswith("x,1,1,1,")


def test_meta_sidecar(tmp_path):
    t = SampleTable.from_columns({"x": [0.0, 1.0]}, meta={"seed": np.int64(4)})
    write_csv(t, tmp_path / "s.csv")
    assert json.loads((tmp_path / "s.meta.json").read_text()) == {"seed": 4}
