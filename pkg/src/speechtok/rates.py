"""Frame-rate and bitrate accounting for RVQ codecs, FSQ tokenizers and text-aligned tokens."""
import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

# relative gap between a reported and a computed bitrate that earns a note
NOTE_TOLERANCE = 0.05


@dataclass(frozen=True)
class RateReport:
    frame_rate: float
    bits_per_token: float
    bitrate: float
    scheme: str

    def __post_init__(self):
        if self.scheme not in ("rvq", "fsq", "measured"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _make(frame_rate, bits, scheme):
    return RateReport(frame_rate, bits, frame_rate * bits, scheme)


def rvq_bitrate(r_tok, r, k):
    """``r_tok * r * log2(k)`` bits/s for r residual codebooks of size k."""
    if not r_tok > 0 or r < 1 or k < 2:
        raise ValueError(f"need r_tok > 0, r >= 1, k >= 2; got {r_tok}, {r}, {k}")
    return _make(float(r_tok), r * math.log2(k), "rvq")


def fsq_bitrate(r_tok, d, l):
    """``r_tok * d * log2(l)`` bits/s for d scalar dimensions with l levels."""
    if not r_tok > 0 or d < 1 or l < 2:
        raise ValueError(f"need r_tok > 0, d >= 1, l >= 2; got {r_tok}, {d}, {l}")
    return _make(float(r_tok), d * math.log2(l), "fsq")


def text_aligned_frame_rate(token_count, seconds):
    if not seconds > 0:
        raise ValueError(f"duration must be positive, got {seconds}")
    if token_count < 0:
        raise ValueError(f"token count must be non-negative, got {token_count}")
    return token_count / seconds


def measured_bitrate(token_count, seconds, bits_per_token):
    return _make(text_aligned_frame_rate(token_count, seconds), float(bits_per_token), "measured")


@dataclass
class RateRow:
    model: str
    report: RateReport
    reported_bitrate: Optional[float] = None

    @property
    def note(self):
        if self.reported_bitrate is None:
            return ""
        gap = self.report.bitrate - self.reported_bitrate
        if abs(gap) <= NOTE_TOLERANCE * max(abs(self.reported_bitrate), 1e-12):
            return ""
        return (
            f"computed {self.report.bitrate:.1f} b/s differs from reported "
            f"{self.reported_bitrate:g} b/s by {gap:+.1f}"
        )


def row_from_spec(entry):
    """Build a row from one JSON object of a rate spec list.

    Recognised schemes::

        {"model": ..., "scheme": "rvq", "frame_rate": 75, "quantizers": 2, "codebook": 1024}
        {"model": ..., "scheme": "fsq", "frame_rate": 2.62, "d": 64, "levels": 8}
        {"model": ..., "scheme": "measured", "tokens": 51903, "seconds": 19805.2,
         "d": 64, "levels": 8}

    An optional ``reported_bitrate`` is compared against the computed value.
    """
    try:
        model = str(entry["model"])
        scheme = entry["scheme"]
        if scheme == "rvq":
            rep = rvq_bitrate(float(entry["frame_rate"]), int(entry["quantizers"]), int(entry["codebook"]))
        elif scheme == "fsq":
            rep = fsq_bitrate(float(entry["frame_rate"]), int(entry["d"]), int(entry["levels"]))
        elif scheme == "measured":
            if "bits_per_token" in entry:
                bits = float(entry["bits_per_token"])
            else:
                bits = int(entry["d"]) * math.log2(int(entry["levels"]))
            rep = measured_bitrate(float(entry["tokens"]), float(entry["seconds"]), bits)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    except KeyError as exc:
        raise ValueError(f"rate entry missing field {exc}") from None
    reported = entry.get("reported_bitrate")
    return RateRow(model, rep, None if reported is None else float(reported))


def table_rows(rows, precision=2):
    out = []
    for r in rows:
        out.append({
            "Model": r.model,
            "Frame Rate": round(r.report.frame_rate, precision),
            "Bitrate": round(r.report.bitrate, precision),
            "Bits/Token": round(r.report.bits_per_token, precision),
            "Scheme": r.report.scheme,
            "Note": r.note,
        })
    return out


def table_csv(rows, precision=2):
    buf = io.StringIO()
    recs = table_rows(rows, precision)
    w = csv.DictWriter(
        buf, ["Model", "Frame Rate", "Bitrate", "Bits/Token", "Scheme", "Note"], lineterminator="\n"
    )
    w.writeheader()
    w.writerows(recs)
    return buf.getvalue()
