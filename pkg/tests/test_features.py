"""Feature file format, label CSV parsing, and clip windowing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectseq.errors import FormatError, ParseError, ValidationError
from affectseq.features import (
    FORMAT_VERSION,
    MAGIC,
    NUM_AU,
    FeatureSequence,
    LabelTrack,
    parse_label_csv,
    read_feature_file,
    window,
    write_feature_file,
    write_label_csv,
)


def _seq(rng, frames=7, dim=5, video_id="vid"):
    data = rng.standard_normal((frames, dim)).astype(np.float32)
    return FeatureSequence(video_id=video_id, data=data)


# ---------------------------------------------------------------- feature files


def test_feature_roundtrip_bit_exact(tmp_path, rng):
    seq = _seq(rng, frames=31, dim=12, video_id="clip01")
    path = tmp_path / "clip01.afsq"
    write_feature_file(seq, path)
    back = read_feature_file(path)
    assert back.video_id == "clip01"
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == seq.data.tobytes()


@given(frames=st.integers(1, 40), dim=st.integers(1, 24), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_feature_roundtrip_property(tmp_path_factory, frames, dim, seed):
    rng = np.random.default_rng(seed)
    seq = FeatureSequence("v", rng.standard_normal((frames, dim)).astype(np.float32))
    path = tmp_path_factory.mktemp("afsq") / "v.afsq"
    write_feature_file(seq, path)
    back = read_feature_file(path)
    assert back.frames == frames and back.dim == dim
    assert np.array_equal(back.data, seq.data)


def test_header_layout(tmp_path, rng):
    # 4 magic + 4 version + 4 dim + 8 frames, little endian
    seq = _seq(rng, frames=3, dim=2)
    path = tmp_path / "v.afsq"
    write_feature_file(seq, path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert int.from_bytes(raw[4:8], "little") == FORMAT_VERSION
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:20], "little") == 3
    assert len(raw) == 20 + 3 * 2 * 4


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda b: b"JUNK" + b[4:], "magic"),
        (lambda b: b[:4] + (99).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[:10], "truncated"),
        (lambda b: b[:-4], "payload"),
        (lambda b: b + b"\x00\x00\x00\x00", "payload"),
    ],
)
def test_corrupt_feature_file_rejected(tmp_path, rng, mutate, msg):
    path = tmp_path / "v.afsq"
    write_feature_file(_seq(rng), path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError, match=msg):
        read_feature_file(path)


def test_zero_dim_header_rejected(tmp_path, rng):
    path = tmp_path / "v.afsq"
    write_feature_file(_seq(rng), path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = (0).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_feature_file(path)


def test_feature_sequence_rejects_nonfinite():
    bad = np.ones((2, 3), dtype=np.float32)
    bad[1, 1] = np.nan
    with pytest.raises(ValidationError, match="non-finite"):
        FeatureSequence("v", bad)


def test_feature_sequence_is_immutable(rng):
    seq = _seq(rng)
    with pytest.raises(ValueError):
        seq.data[0, 0] = 1.0


# ------------------------------------------------------------------ label CSVs


def test_expr_labels_roundtrip(tmp_path):
    values = np.array([0, 3, 7, 0, 5])
    validity = np.array([True, True, False, True, True])
    track = LabelTrack(task="EXPR", values=np.where(validity, values, 0), validity=validity)
    path = tmp_path / "v.expr.csv"
    write_label_csv(track, path)
    assert path.read_text().splitlines()[2] == "-1"
    back = parse_label_csv(path, "EXPR")
    assert np.array_equal(back.values, track.values)
    assert np.array_equal(back.validity, validity)


def test_va_labels_roundtrip(tmp_path, rng):
    # sixteenths are exact in binary and in <= 9 significant decimal digits,
    # so the %.9g writer must reproduce them bit-exactly
    vals = rng.integers(-8, 9, size=(6, 2)) / 16.0
    validity = np.array([True] * 5 + [False])
    vals[~validity] = 0.0
    track = LabelTrack(task="VA", values=vals, validity=validity)
    path = tmp_path / "v.va.csv"
    write_label_csv(track, path)
    back = parse_label_csv(path, "VA")
    assert np.array_equal(back.values, vals)
    assert np.array_equal(back.validity, validity)
    assert path.read_text().splitlines()[-1] == "-5,-5"


def test_au_labels_roundtrip(tmp_path, rng):
    vals = (rng.random((8, NUM_AU)) < 0.3).astype(np.int64)
    validity = np.ones(8, dtype=bool)
    validity[2] = False
    vals[2] = 0
    track = LabelTrack(task="AU", values=vals, validity=validity)
    path = tmp_path / "v.au.csv"
    write_label_csv(track, path)
    back = parse_label_csv(path, "AU")
    assert np.array_equal(back.values, vals)
    assert np.array_equal(back.validity, validity)


def test_sentinel_anywhere_invalidates_row(tmp_path):
    path = tmp_path / "v.au.csv"
    row = ["1"] * NUM_AU
    row[5] = "-1"
    path.write_text(",".join(row) + "\n" + ",".join(["0"] * NUM_AU) + "\n")
    track = parse_label_csv(path, "AU")
    assert not track.validity[0]
    assert track.validity[1]
    # sentinel rows are stored zeroed, never as raw -1s
    assert track.values[0].sum() == 0


def test_va_sentinel_minus_five(tmp_path):
    path = tmp_path / "v.va.csv"
    path.write_text("0.5,-0.25\n-5,-5\n-1,0.3\n")
    track = parse_label_csv(path, "VA")
    assert list(track.validity) == [True, False, False]
    assert track.values[0, 0] == 0.5


def test_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "v.expr.csv"
    path.write_text("1\n2\nnope\n")
    with pytest.raises(ParseError, match="line 3"):
        parse_label_csv(path, "EXPR")


def test_wrong_column_count(tmp_path):
    path = tmp_path / "v.va.csv"
    path.write_text("0.1,0.2,0.3\n")
    with pytest.raises(ParseError, match="2 column"):
        parse_label_csv(path, "VA")


def test_out_of_range_values_rejected(tmp_path):
    p = tmp_path / "v.expr.csv"
    p.write_text("8\n")
    with pytest.raises(ValidationError):
        parse_label_csv(p, "EXPR")
    p2 = tmp_path / "v.va.csv"
    p2.write_text("1.5,0\n")
    with pytest.raises(ValidationError):
        parse_label_csv(p2, "VA")


def test_empty_label_file_rejected(tmp_path):
    p = tmp_path / "v.expr.csv"
    p.write_text("")
    with pytest.raises(ParseError, match="empty"):
        parse_label_csv(p, "EXPR")


# ------------------------------------------------------------------- windowing


def _track(frames, valid=None):
    valid = np.ones(frames, dtype=bool) if valid is None else valid
    vals = np.arange(frames) % 8
    return LabelTrack(task="EXPR", values=np.where(valid, vals, 0), validity=valid)


def test_window_end_alignment(rng):
    # 250 frames, T=100, stride=100: 0, 100, then the end-aligned 150
    seq = _seq(rng, frames=250, dim=4)
    clips = window(seq, _track(250), T=100, stride=100)
    assert [c.start_frame for c in clips] == [0, 100, 150]
    assert all(c.length == 100 and c.real_frames == 100 for c in clips)
    assert np.array_equal(clips[2].features, seq.data[150:250])


def test_window_exact_multiple_has_no_tail_clip(rng):
    seq = _seq(rng, frames=200, dim=4)
    clips = window(seq, _track(200), T=100, stride=100)
    assert [c.start_frame for c in clips] == [0, 100]


def test_window_single_when_equal(rng):
    seq = _seq(rng, frames=100, dim=4)
    clips = window(seq, _track(100), T=100, stride=100)
    assert len(clips) == 1 and clips[0].start_frame == 0


def test_window_pads_short_video(rng):
    seq = _seq(rng, frames=30, dim=4)
    clips = window(seq, _track(30), T=100, stride=100)
    assert len(clips) == 1
    c = clips[0]
    assert c.real_frames == 30
    assert np.array_equal(c.features[:30], seq.data)
    assert not c.features[30:].any()
    assert c.validity[:30].all() and not c.validity[30:].any()


@given(frames=st.integers(1, 300), T=st.integers(1, 120), data=st.data())
@settings(max_examples=80, deadline=None)
def test_window_covers_every_frame(frames, T, data):
    # full coverage is only promised for stride <= T; larger strides subsample
    stride = data.draw(st.integers(1, T))
    rng = np.random.default_rng(frames * 1000 + T * 10 + stride)
    seq = FeatureSequence("v", rng.standard_normal((frames, 3)).astype(np.float32))
    clips = window(seq, _track(frames), T=T, stride=stride)
    covered = np.zeros(frames, dtype=bool)
    for c in clips:
        assert c.length == T
        covered[c.start_frame : c.start_frame + c.real_frames] = True
    assert covered.all()


def test_window_validates_inputs(rng):
    seq = _seq(rng, frames=10)
    with pytest.raises(ValidationError):
        window(seq, _track(10), T=0, stride=1)
    with pytest.raises(ValidationError):
        window(seq, _track(10), T=5, stride=0)
    with pytest.raises(ValidationError, match="frames"):
        window(seq, _track(9), T=5, stride=5)
