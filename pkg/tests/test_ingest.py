import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waltzfig.core import AXES
from waltzfig.errors import EmptyWindow, InsufficientData, MalformedRow, MissingAxis, NonMonotonicTime
from waltzfig.ingest import (
    NS_PER_S,
    RawLog,
    SegmentationSpec,
    Stream,
    Window,
    binned_median,
    downsample,
    parse_log,
    segment,
    unwrap_yaw,
    write_log,
)


def _write(tmp_path, rows, header="t_ns,axis,value"):
    p = tmp_path / "log.csv"
    p.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return p


def _all_axes(t, value=0.0):
    return [f"{t},{a},{value}" for a in AXES]


def test_parse_small_log(tmp_path):
    rows = _all_axes(0, 1.5) + ["5,yaw,10.0", "7,lin_acc_x,-2.0"]
    log = parse_log(_write(tmp_path, rows))
    assert log.counts() == {"lin_acc_x": 2, "lin_acc_y": 1, "lin_acc_z": 1, "yaw": 2}
    assert log.streams["yaw"].t.tolist() == [0, 5]
    assert log.streams["yaw"].values.tolist() == [1.5, 10.0]
    assert log.streams["lin_acc_x"].values.tolist() == [1.5, -2.0]


def test_parse_missing_axis(tmp_path):
    rows = [r for r in _all_axes(0) if ",yaw," not in r]
    with pytest.raises(MissingAxis):
        parse_log(_write(tmp_path, rows))


def test_parse_decreasing_time(tmp_path):
    rows = _all_axes(10) + ["5,lin_acc_y,0.0"]
    with pytest.raises(NonMonotonicTime):
        parse_log(_write(tmp_path, rows))


@pytest.mark.parametrize("row", ["1,lin_acc_x", "1,lin_acc_x,abc", "x,yaw,1.0", "1,roll,0.0", "1,yaw,1,2"])
def test_parse_malformed(tmp_path, row):
    with pytest.raises(MalformedRow, match="line 6"):
        parse_log(_write(tmp_path, _all_axes(0) + [row]))


def test_parse_requires_header(tmp_path):
    with pytest.raises(MalformedRow, match="header"):
        parse_log(_write(tmp_path, _all_axes(0), header="time,axis,value"))


def test_write_then_parse(tmp_path):
    rng = np.random.default_rng(0)
    log = RawLog.from_arrays({a: (np.sort(rng.choice(10**6, 50, replace=False)), rng.normal(size=50))
                              for a in AXES})
    write_log(log, tmp_path / "w.csv")
    back = parse_log(tmp_path / "w.csv")
    for a in AXES:
        np.testing.assert_array_equal(back.streams[a].t, log.streams[a].t)
        np.testing.assert_array_equal(back.streams[a].values, log.streams[a].values)


def _dense_log(duration_s, rate=50.0):
    t = np.arange(0, int(duration_s * rate) + 1) * int(NS_PER_S / rate)
    return RawLog.from_arrays({a: (t, np.zeros(len(t))) for a in AXES})


def test_segment_window_bounds():
    spec = SegmentationSpec(28.5, 10.0, 2, 0.35)
    m = 60 / 28.5
    wins = segment(_dense_log(20), spec)
    assert len(wins) == 2
    # hand arithmetic: m = 2.105263..., so [9.65, 12.4553] and [11.7553, 14.5605]
    assert wins[0].start_ns / NS_PER_S == pytest.approx(9.65, abs=1e-9)
    assert wins[0].end_ns / NS_PER_S == pytest.approx(10 + m + 0.35, abs=1e-9)
    assert wins[0].end_ns / NS_PER_S == pytest.approx(12.456, abs=1e-3)
    assert wins[1].start_ns / NS_PER_S == pytest.approx(11.7553, abs=1e-4)
    assert wins[1].end_ns / NS_PER_S == pytest.approx(14.561, abs=1e-3)
    overlap = (wins[0].end_ns - wins[1].start_ns) / NS_PER_S
    assert overlap == pytest.approx(0.7, abs=1e-9)


def test_segment_zero_extension_tiles():
    spec = SegmentationSpec(28.5, 10.0, 4, 0.0)
    wins = segment(_dense_log(30), spec)
    for a, b in zip(wins, wins[1:]):
        assert a.end_ns == pytest.approx(b.start_ns, abs=1e-3)
    assert wins[0].start_ns == pytest.approx(10 * NS_PER_S)
    assert wins[-1].end_ns == pytest.approx((10 + 4 * 60 / 28.5) * NS_PER_S)


def test_segment_insufficient():
    with pytest.raises(InsufficientData):
        segment(_dense_log(15), SegmentationSpec(28.5, 10.0, 5))


def test_segment_readings_in_closed_interval():
    spec = SegmentationSpec(60.0, 1.0, 1, 0.0)
    t = np.array([0, NS_PER_S - 1, NS_PER_S, 2 * NS_PER_S, 2 * NS_PER_S + 1])
    log = RawLog.from_arrays({a: (t, np.arange(5.0)) for a in AXES})
    (w,) = segment(log, spec)
    assert w.streams["yaw"].t.tolist() == [NS_PER_S, 2 * NS_PER_S]


def _window(t, v, start=0.0, end=1000.0):
    s = Stream(np.asarray(t, dtype=np.int64), np.asarray(v, dtype=np.float64))
    return Window(start, end, {a: s for a in AXES})


def test_downsample_constant():
    t = np.arange(1000)
    out = downsample(_window(t, np.full(1000, 5.0)))
    assert out.values.shape == (4, 100)
    assert np.all(out.values == 5.0)


def test_downsample_median_outlier():
    out = binned_median([0, 1, 2], [1.0, 100.0, 2.0], 0.0, 10_000.0)
    assert out[0] == 2.0
    assert np.all(out == 2.0)  # later empty bins copy bin 0


def test_downsample_even_count_median():
    out = binned_median([0, 1, 2, 3], [4.0, 1.0, 3.0, 10.0], 0.0, 10_000.0)
    assert out[0] == 3.5


def brute_force_downsample(t, v, start, end, n_bins=100):
    """Independent oracle: explicit bin loop, sorted medians, fill rule."""
    width = (end - start) / n_bins
    out = [None] * n_bins
    for b in range(n_bins):
        lo = start + b * width
        hi = start + (b + 1) * width
        inside = sorted(val for ts, val in zip(t, v)
                        if (lo <= ts < hi) or (b == n_bins - 1 and ts == end))
        if inside:
            k = len(inside)
            out[b] = inside[k // 2] if k % 2 else (inside[k // 2 - 1] + inside[k // 2]) / 2
    first = next(x for x in out if x is not None)
    prev = first
    for b in range(n_bins):
        if out[b] is None:
            out[b] = prev
        prev = out[b]
    return np.array(out)


def test_downsample_every_other_bin_empty():
    # 50 readings, one at the centre of every even bin of a 1000 ns window
    t = np.arange(50) * 20 + 5
    v = np.arange(50, dtype=float) ** 1.5
    got = binned_median(t, v, 0.0, 1000.0)
    np.testing.assert_array_equal(got, brute_force_downsample(t, v, 0.0, 1000.0))
    assert np.all(got[1::2] == got[0::2])


def test_downsample_leading_empty_bins():
    got = binned_median([500, 990], [7.0, 9.0], 0.0, 1000.0)
    assert np.all(got[:50] == 7.0)
    assert got[99] == 9.0


def test_downsample_empty_axis():
    s = Stream(np.arange(3, dtype=np.int64), np.zeros(3))
    empty = Stream(np.zeros(0, dtype=np.int64), np.zeros(0))
    w = Window(0.0, 10.0, {"lin_acc_x": s, "lin_acc_y": s, "lin_acc_z": s, "yaw": empty})
    with pytest.raises(EmptyWindow):
        downsample(w)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.floats(-1e3, 1e3)), min_size=1, max_size=300,
                unique_by=lambda r: r[0]),
       st.randoms(use_true_random=False))
def test_downsample_matches_oracle_and_permutation(rows, rnd):
    rows.sort()
    t = np.array([r[0] for r in rows])
    v = np.array([r[1] for r in rows])
    got = binned_median(t, v, 0.0, 10_000.0)
    assert got.shape == (100,) and np.all(np.isfinite(got))
    np.testing.assert_allclose(got, brute_force_downsample(t, v, 0.0, 10_000.0), rtol=0, atol=1e-12)
    perm = list(range(len(t)))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(binned_median(t[perm], v[perm], 0.0, 10_000.0), got)


def test_unwrap_examples():
    assert unwrap_yaw([179, -179]).tolist() == [179, 181]
    assert unwrap_yaw([0, 10, 20]).tolist() == [0, 10, 20]
    assert unwrap_yaw([-170, 175, -170]).tolist() == [-170, -185, -170]


@given(st.lists(st.floats(-180, 180), min_size=1, max_size=200))
def test_unwrap_properties(vals):
    out = unwrap_yaw(vals)
    assert out[0] == vals[0]
    assert np.all(np.abs(np.diff(out)) <= 180 + 1e-9)
    r = np.mod(out - np.asarray(vals), 360.0)
    assert np.all(np.minimum(r, 360.0 - r) < 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(20, 200), st.floats(0, 5), st.integers(1, 8), st.floats(0, 0.4))
def test_segment_count_and_partition(tempo, intro, n, ext):
    spec = SegmentationSpec(tempo, intro, n, ext)
    dur = intro + n * 60 / tempo + ext + 1
    wins = segment(_dense_log(dur, rate=20), spec)
    assert len(wins) == n
    m = 60 / tempo
    for k, w in enumerate(wins):
        assert w.start_ns / NS_PER_S == pytest.approx(intro + k * m - ext, abs=1e-6)
        assert w.end_ns / NS_PER_S == pytest.approx(intro + (k + 1) * m + ext, abs=1e-6)
        assert math.isclose((w.end_ns - w.start_ns) / NS_PER_S, m + 2 * ext, rel_tol=1e-9)
