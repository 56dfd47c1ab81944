import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsched import kpi

positive = st.lists(st.floats(1e-3, 1e9, allow_nan=False), min_size=1, max_size=50)


def test_geomean_examples():
    assert kpi.geomean([1, 4, 16]) == pytest.approx(4.0)
    assert kpi.geomean([0, 100]) == pytest.approx(10.0)     # 0 -> 1 bit/s
    with pytest.raises(ValueError):
        kpi.geomean([])
    with pytest.raises(ValueError):
        kpi.geomean([-1.0, 2.0])


def test_geomean_zero_replacement_unit():
    assert kpi.ZERO_REPLACEMENT == 1.0
    assert kpi.geomean([0.0, 0.0]) == 1.0


def test_geomean_no_overflow():
    x = np.full(10_000, 1e300)
    assert kpi.geomean(x) == pytest.approx(1e300)


@settings(max_examples=100, deadline=None)
@given(positive)
def test_am_gm(values):
    assert kpi.geomean(values) <= np.mean(values) * (1 + 1e-9)


@settings(max_examples=100, deadline=None)
@given(positive, st.floats(1e-3, 1e3))
def test_geomean_scale_equivariant(values, c):
    assert kpi.geomean(np.array(values) * c) == pytest.approx(c * kpi.geomean(values), rel=1e-9)


def test_percentile_convention():
    x = np.arange(1, 101)
    assert kpi.percentile(x, 5) == pytest.approx(5.95)
    assert kpi.percentile(x, 50) == pytest.approx(50.5)
    with pytest.raises(ValueError):
        kpi.percentile(x, 101)
    with pytest.raises(ValueError):
        kpi.percentile([], 5)


@settings(max_examples=60, deadline=None)
@given(positive, st.floats(0, 100), st.floats(0, 100))
def test_percentile_monotone(values, q1, q2):
    lo, hi = sorted((q1, q2))
    assert kpi.percentile(values, lo) <= kpi.percentile(values, hi) + 1e-9


def test_upt_busy_definition():
    bits = np.array([1000.0, 0.0, 500.0])
    busy = np.array([10, 0, 5])
    np.testing.assert_allclose(kpi.upt(bits, busy, 1e-3), [1e5, 1e5])
    # a UE served 1000 bits over 10 busy TTIs of 1 ms has UPT 100 kbit/s


def test_cosched_efficiency():
    assert kpi.cosched_efficiency([0, 1, 2, 2, 0]) == pytest.approx(5 / 3)
    assert np.isnan(kpi.cosched_efficiency([0, 0]))


def test_gain_table():
    g = kpi.gain_table({"p5": 2.0, "median": 3.0, "geomean": 1.0},
                       {"p5": 1.0, "median": 3.0, "geomean": 0.0})
    assert g["p5"] == pytest.approx(100.0)
    assert g["median"] == pytest.approx(0.0)
    assert g["geomean"] is None


def test_summary_keys():
    s = kpi.summarize([1.0, 2.0, 3.0])
    assert set(s) == {"p5", "median", "geomean", "mean"}


def parse(text):
    return list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))


@settings(max_examples=60, deadline=None)
@given(positive)
def test_cdf_export_monotone(values):
    rows = parse(kpi.cdf_csv(values))
    assert rows[0] == ["value", "cum_fraction"]
    data = np.array(rows[1:], dtype=float)
    assert np.all(np.diff(data[:, 0]) >= 0)
    assert np.all(np.diff(data[:, 1]) > 0)
    assert data[-1, 1] == 1.0


def test_csv_undefined_and_comments():
    text = kpi.csv_text(["a", "b"], [[None, float("nan")], [1.5, 2]], ["schema note"])
    assert text.startswith("# schema note\n")
    assert parse(text)[1] == ["undefined", "undefined"]
    assert parse(text)[2] == ["1.5", "2"]


def test_per_ue_csv_columns():
    text = kpi.per_ue_csv([1.0, 2.0], [float("nan"), 3.0], ["ftp3", "full_buffer"], [0, 0])
    rows = parse(text)
    assert rows[0] == ["cell", "ue", "traffic", "throughput_bps", "upt_bps"]
    assert rows[1][4] == "undefined"
