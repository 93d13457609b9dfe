import pytest
from hypothesis import given
from hypothesis import strategies as st

from speechtok import rates


def test_rvq_examples():
    assert rates.rvq_bitrate(75, 2, 1024).bitrate == 1500
    assert rates.rvq_bitrate(50, 2, 1024).bitrate == 1000
    assert rates.rvq_bitrate(1, 1, 2).bitrate == 1


def test_fsq_examples():
    assert rates.fsq_bitrate(2.62, 64, 8).bitrate == pytest.approx(503.04)
    assert rates.fsq_bitrate(1, 1, 2).bitrate == 1
    assert rates.fsq_bitrate(12.5, 8, 16).bitrate == 400


def test_text_aligned_rate():
    assert rates.text_aligned_frame_rate(51903, 19805.2) == pytest.approx(2.6207, abs=5e-4)
    assert rates.text_aligned_frame_rate(0, 10) == 0
    assert rates.text_aligned_frame_rate(100, 50) == 2.0
    with pytest.raises(ValueError):
        rates.text_aligned_frame_rate(10, 0)


@given(st.floats(0.1, 1000), st.integers(1, 20))
def test_rvq_single_codebook_equals_binary_fsq(r, n):
    assert rates.rvq_bitrate(r, 1, 2**n).bitrate == pytest.approx(rates.fsq_bitrate(r, n, 2).bitrate, rel=1e-15)


@pytest.mark.parametrize("args", [(0, 1, 2), (1, 0, 2), (1, 1, 1)])
def test_invalid_inputs(args):
    with pytest.raises(ValueError):
        rates.rvq_bitrate(*args)
    with pytest.raises(ValueError):
        rates.fsq_bitrate(*args)


def test_rows_and_notes():
    rows = [
        rates.row_from_spec({"model": "a", "scheme": "rvq", "frame_rate": 75, "quantizers": 2,
                             "codebook": 1024, "reported_bitrate": 1500}),
        rates.row_from_spec({"model": "b", "scheme": "fsq", "frame_rate": 2.62, "d": 64, "levels": 8,
                             "reported_bitrate": 600}),
        rates.row_from_spec({"model": "c", "scheme": "measured", "tokens": 51903, "seconds": 19805.2,
                             "d": 64, "levels": 8}),
    ]
    assert rows[0].note == ""
    assert "600" in rows[1].note and "503.0" in rows[1].note
    assert rows[2].report.bits_per_token == 192
    assert rows[2].report.frame_rate == 51903 / 19805.2
    csv_text = rates.table_csv(rows)
    assert csv_text.splitlines()[0].startswith("Model,Frame Rate,Bitrate")
    assert rates.table_rows(rows)[0]["Bitrate"] == 1500


def test_bad_spec_entries():
    with pytest.raises(ValueError, match="missing"):
        rates.row_from_spec({"model": "x", "scheme": "rvq", "frame_rate": 75})
    with pytest.raises(ValueError, match="scheme"):
        rates.row_from_spec({"model": "x", "scheme": "lpc"})
