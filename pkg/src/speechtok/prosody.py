"""Reference/hypothesis prosody comparison on a DTW-aligned time axis.

The hypothesis is aligned to the reference with DTW over MFCC frames, its
pitch/energy track is warped onto the reference timeline and seven metrics
are computed: F0 correlation, voicing decision error, gross pitch error,
energy RMSE and correlation in dB, and the L2 / cosine distance between
degree-3 Legendre fits of the semitone contour.

Metrics that are undefined for a pair (no jointly voiced frames, constant
input, too few voiced frames for the phrase fit) are reported as ``None``
with a reason code, never as a number.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.spatial.distance import cdist

from . import dsp
from .dsp import FrameParams, ProsodyTrack
from .numerics import DegenerateCorrelation, FitError, legendre_fit, pearson

GPE_EPS = 1e-8
PHRASE_DEGREE = 3

# Table column label -> MetricReport attribute
TABLE_COLUMNS = {
    "Ene. RMSE": "energy_rmse_db",
    "F0-PCC": "f0_pcc",
    "Phr. Cos.": "coeff_cos",
    "Ene. PCC": "energy_pcc",
    "Phr. L2": "coeff_l2",
    "VDE": "vde",
    "GPE": "gpe",
}
METRICS = tuple(TABLE_COLUMNS.values())


class DegenerateMetric(ValueError):
    def __init__(self, reason, message=None):
        super().__init__(message or reason)
        self.reason = reason


class PhraseFitError(FitError):
    pass


@dataclass
class DtwPath:
    pairs: np.ndarray  # (K, 2) of (ref_index, hyp_index)
    cost: float

    def __len__(self):
        return self.pairs.shape[0]

    def steps(self):
        return [tuple(s) for s in np.diff(self.pairs, axis=0).tolist()]


def dtw_from_cost(cost):
    """Minimal-cost monotone path through a (T_ref, T_hyp) local cost matrix.

    Steps are (1,1), (1,0) and (0,1); ties prefer them in that order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("DTW needs two non-empty sequences")
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    rows = cost.tolist()
    a = acc.tolist()
    for j in range(1, m):
        a[0][j] = a[0][j - 1] + rows[0][j]
    for i in range(1, n):
        prev, cur, crow = a[i - 1], a[i], rows[i]
        cur[0] = prev[0] + crow[0]
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = best + crow[j]
    i, j = n - 1, m - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = a[i - 1][j - 1], a[i - 1][j], a[i][j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return DtwPath(np.array(path[::-1], dtype=np.int64), float(a[n - 1][m - 1]))


def dtw_align(mfcc_ref, mfcc_hyp):
    """DTW under Euclidean frame distance."""
    ref = np.atleast_2d(np.asarray(mfcc_ref, dtype=np.float64))
    hyp = np.atleast_2d(np.asarray(mfcc_hyp, dtype=np.float64))
    if ref.shape[0] == 0 or hyp.shape[0] == 0:
        raise ValueError("DTW needs two non-empty sequences")
    if ref.shape[1] != hyp.shape[1]:
        raise ValueError(f"coefficient counts differ: {ref.shape[1]} vs {hyp.shape[1]}")
    return dtw_from_cost(cdist(ref, hyp))


def path_cost(cost, pairs):
    pairs = np.asarray(pairs)
    return float(np.asarray(cost)[pairs[:, 0], pairs[:, 1]].sum())


def validate_path(pairs, n_ref, n_hyp):
    pairs = np.asarray(pairs)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
        raise ValueError("path must be a non-empty (K, 2) array")
    if tuple(pairs[0]) != (0, 0) or tuple(pairs[-1]) != (n_ref - 1, n_hyp - 1):
        raise ValueError("path must run from (0, 0) to the last frame pair")
    steps = np.diff(pairs, axis=0)
    ok = ((steps == 0) | (steps == 1)).all(axis=1) & (steps.sum(axis=1) > 0)
    if not ok.all():
        raise ValueError("path contains an invalid step")


def warp_to_ref(path, hyp, n_ref=None):
    """Resample a hypothesis track onto the reference frames of ``path``.

    Per reference frame: F0 is the median of the matched voiced F0s, voicing
    is the majority vote of the matched frames (ties count as voiced) and
    RMS is the mean of the matched RMS values.
    """
    pairs = path.pairs if isinstance(path, DtwPath) else np.asarray(path)
    n_ref = int(pairs[-1, 0]) + 1 if n_ref is None else n_ref
    validate_path(pairs, n_ref, len(hyp))
    f0 = np.zeros(n_ref)
    voiced = np.zeros(n_ref, dtype=np.int64)
    rms = np.zeros(n_ref)
    starts = np.searchsorted(pairs[:, 0], np.arange(n_ref), side="left")
    ends = np.searchsorted(pairs[:, 0], np.arange(n_ref), side="right")
    for r in range(n_ref):
        idx = pairs[starts[r]:ends[r], 1]
        v = hyp.voicing[idx]
        rms[r] = hyp.rms[idx].mean()
        if 2 * v.sum() >= idx.size:
            voiced[r] = 1
            f0[r] = np.median(hyp.f0_hz[idx][v == 1])
    times = np.zeros(n_ref) if n_ref else np.zeros(0)
    return ProsodyTrack(f0, voiced, rms, times)


@dataclass
class AlignedPair:
    ref: ProsodyTrack
    hyp: ProsodyTrack

    def __post_init__(self):
        if len(self.ref) != len(self.hyp):
            raise ValueError("aligned tracks must have equal length")
        if len(self.ref) == 0:
            raise ValueError("aligned tracks are empty")

    @property
    def joint_voiced(self):
        return (self.ref.voicing == 1) & (self.hyp.voicing == 1)

    @property
    def n_v(self):
        return int(self.joint_voiced.sum())


def align(ref, hyp, path):
    warped = warp_to_ref(path, hyp, len(ref))
    warped.frame_times = ref.frame_times.copy()
    return AlignedPair(ref, warped)


def f0_pcc(a):
    b = a.joint_voiced
    if b.sum() < 2:
        raise DegenerateMetric("too_few_joint_voiced", f"{int(b.sum())} jointly voiced frames")
    try:
        return pearson(a.ref.f0_hz[b], a.hyp.f0_hz[b])
    except DegenerateCorrelation as exc:
        raise DegenerateMetric("zero_variance", str(exc)) from None


def vde(a):
    return float(np.mean(a.ref.voicing != a.hyp.voicing))


def gpe(a, threshold=0.2, eps=GPE_EPS):
    b = a.joint_voiced
    if not b.any():
        raise DegenerateMetric("no_joint_voiced")
    fr, fh = a.ref.f0_hz[b], a.hyp.f0_hz[b]
    rel = np.abs(fh - fr) / np.maximum(fr, eps)
    return float(np.mean(rel > threshold))


def energy_rmse(a, epsilon=dsp.DB_EPS):
    d = dsp.to_db(a.ref.rms, epsilon) - dsp.to_db(a.hyp.rms, epsilon)
    return float(np.sqrt(np.mean(d**2)))


def energy_pcc(a, epsilon=dsp.DB_EPS):
    try:
        return pearson(dsp.to_db(a.ref.rms, epsilon), dsp.to_db(a.hyp.rms, epsilon))
    except DegenerateCorrelation as exc:
        raise DegenerateMetric("zero_variance", str(exc)) from None


def energy_metrics(a, epsilon=dsp.DB_EPS):
    """``(rmse_db, pcc)``; the PCC is ``None`` when a dB contour is constant."""
    try:
        pcc = energy_pcc(a, epsilon)
    except DegenerateMetric:
        pcc = None
    return energy_rmse(a, epsilon), pcc


def phrase_coeffs(track, degree=PHRASE_DEGREE):
    """Degree-3 Legendre fit of the semitone contour over its voiced span.

    Interior unvoiced gaps are filled by linear interpolation; frames before
    the first and after the last voiced frame are left out.
    """
    voiced = np.nonzero(np.asarray(track.voicing) == 1)[0]
    if voiced.size < degree + 1:
        raise PhraseFitError(f"{voiced.size} voiced frames, need {degree + 1}")
    first, last = voiced[0], voiced[-1]
    frames = np.arange(first, last + 1)
    semis = dsp.hz_to_semitone(track.f0_hz[voiced])
    contour = np.interp(frames, voiced, semis)
    x = -1.0 + 2.0 * (frames - first) / (last - first)
    try:
        return legendre_fit(x, contour, degree)
    except FitError as exc:
        raise PhraseFitError(str(exc)) from None


def phrase_distance(c_ref, c_hyp):
    """``(l2, cosine)``; the cosine is ``None`` if either vector has zero norm."""
    c_ref = np.asarray(c_ref, dtype=np.float64)
    c_hyp = np.asarray(c_hyp, dtype=np.float64)
    l2 = float(np.linalg.norm(c_ref - c_hyp))
    nr, nh = np.linalg.norm(c_ref), np.linalg.norm(c_hyp)
    if nr == 0 or nh == 0:
        return l2, None
    return l2, float(np.clip(c_ref @ c_hyp / (nr * nh), -1.0, 1.0))


@dataclass
class EvalConfig:
    frame: FrameParams = field(default_factory=FrameParams)
    n_mfcc: int = 13
    gpe_threshold: float = 0.2
    db_epsilon: float = dsp.DB_EPS
    fmin: float = 50.0
    fmax: float = 600.0
    yin_threshold: float = 0.2
    # per-utterance cepstral mean removal before DTW, so a global gain does not bend the path
    cepstral_mean_norm: bool = True


@dataclass
class MetricReport:
    f0_pcc: Optional[float] = None
    energy_pcc: Optional[float] = None
    coeff_cos: Optional[float] = None
    vde: Optional[float] = None
    gpe: Optional[float] = None
    energy_rmse_db: Optional[float] = None
    coeff_l2: Optional[float] = None
    diagnostics: Dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @property
    def degenerate(self):
        return self.diagnostics.get("degenerate", {})


@dataclass
class Features:
    mfcc: np.ndarray
    track: ProsodyTrack


def extract_features(w, config=EvalConfig()):
    p = config.frame
    w = w.resampled(p.sample_rate)
    mel = dsp.stft_mel(w, p)
    track = dsp.track_pitch(w, p, config.fmin, config.fmax, config.yin_threshold)
    rms, _ = dsp.frame_energy(w, p, config.db_epsilon)
    track.rms = rms
    return Features(dsp.mfcc(mel, config.n_mfcc), track)


def compare_tracks(ref, hyp, path, config=EvalConfig()):
    """All seven metrics for already extracted tracks and a DTW path."""
    a = align(ref, hyp, path)
    report = MetricReport()
    degenerate = {}

    def attempt(name, fn):
        try:
            setattr(report, name, fn())
        except DegenerateMetric as exc:
            degenerate[name] = exc.reason

    attempt("f0_pcc", lambda: f0_pcc(a))
    report.vde = vde(a)
    attempt("gpe", lambda: gpe(a, config.gpe_threshold))
    report.energy_rmse_db = energy_rmse(a, config.db_epsilon)
    if len(ref) < 2:
        degenerate["energy_pcc"] = "too_few_frames"
    else:
        attempt("energy_pcc", lambda: energy_pcc(a, config.db_epsilon))

    coeffs = {}
    for side, track in (("ref", a.ref), ("hyp", a.hyp)):
        try:
            coeffs[side] = phrase_coeffs(track)
        except PhraseFitError:
            degenerate.setdefault("coeff_l2", f"phrase_fit_failed_{side}")
            degenerate.setdefault("coeff_cos", f"phrase_fit_failed_{side}")
    if len(coeffs) == 2:
        report.coeff_l2, report.coeff_cos = phrase_distance(coeffs["ref"], coeffs["hyp"])
        if report.coeff_cos is None:
            degenerate["coeff_cos"] = "zero_norm"

    report.diagnostics = {
        "frames": len(ref),
        "hyp_frames": len(hyp),
        "n_v": a.n_v,
        "ref_voiced_fraction": a.ref.voiced_fraction,
        "hyp_voiced_fraction": a.hyp.voiced_fraction,
        "dtw_cost": float(path.cost) if isinstance(path, DtwPath) else None,
        "coeff_ref": coeffs["ref"].tolist() if "ref" in coeffs else None,
        "coeff_hyp": coeffs["hyp"].tolist() if "hyp" in coeffs else None,
        "degenerate": degenerate,
    }
    return report


def evaluate_pair(ref, hyp, config=EvalConfig()):
    """Full chain for two waveforms: features, MFCC DTW, warping, metrics."""
    fr = extract_features(ref, config)
    fh = extract_features(hyp, config)
    mr, mh = fr.mfcc, fh.mfcc
    if config.cepstral_mean_norm:
        mr = mr - mr.mean(axis=0)
        mh = mh - mh.mean(axis=0)
    path = dtw_align(mr, mh)
    return compare_tracks(fr.track, fh.track, path, config)


def aggregate(reports):
    """Mean and median of each metric over the reports where it is defined."""
    out = {}
    for label, attr in TABLE_COLUMNS.items():
        vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        out[label] = {
            "mean": float(np.mean(vals)) if vals else None,
            "median": float(np.median(vals)) if vals else None,
            "n": len(vals),
        }
    return out
