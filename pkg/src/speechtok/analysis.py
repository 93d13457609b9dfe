"""Diagnostics for per-frame layer mixture weights.

Given a trace of mixture weights (one probability column per frame) this
computes the per-layer mean weights, frame entropy, the effective number of
layers ``exp(mean entropy)`` and the correlation of each layer's weight with
the spectral flux of the audio.
"""
import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .numerics import DegenerateCorrelation, pearson

SIMPLEX_TOL = 1e-9


@dataclass
class WeightTrace:
    w: np.ndarray  # (n_layers, T)
    layer_ids: List[int] = field(default_factory=list)
    frame_times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2:
            raise ValueError(f"weights must be (n_layers, T), got {self.w.shape}")
        if not self.layer_ids:
            self.layer_ids = list(range(self.w.shape[0]))
        if len(self.layer_ids) != self.w.shape[0]:
            raise ValueError("one layer id per weight row required")
        if self.frame_times is None:
            self.frame_times = np.arange(self.w.shape[1], dtype=np.float64)
        check_stochastic(self.w)

    @property
    def n_layers(self):
        return self.w.shape[0]

    @property
    def T(self):
        return self.w.shape[1]


def check_stochastic(w, tol=SIMPLEX_TOL):
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < -tol) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    bad = np.nonzero(np.abs(w.sum(axis=0) - 1.0) > tol)[0]
    if bad.size:
        raise ValueError(f"frame {bad[0]} weights sum to {w[:, bad[0]].sum():.12g}, not 1")


def frame_entropy(w):
    """Natural-log entropy of each frame's weight column (0 log 0 = 0)."""
    w = w.w if isinstance(w, WeightTrace) else np.asarray(w, dtype=np.float64)
    check_stochastic(w)
    p = np.clip(w, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=0)


def effective_layers(mean_entropy):
    return math.exp(mean_entropy)


@dataclass
class WeightStats:
    layer_means: np.ndarray
    mean_entropy: float
    enl: float
    flux_corr: List[Optional[float]]
    degenerate_layers: List[int] = field(default_factory=list)

    def to_dict(self, layer_ids=None):
        ids = layer_ids or list(range(len(self.layer_means)))
        return {
            "layer_ids": list(ids),
            "layer_means": [float(v) for v in self.layer_means],
            "mean_entropy": self.mean_entropy,
            "enl": self.enl,
            "flux_corr": self.flux_corr,
            "degenerate_layers": self.degenerate_layers,
        }


def _flux_corr(w, flux):
    corr, bad = [], []
    for i, row in enumerate(w):
        try:
            corr.append(pearson(row, flux))
        except DegenerateCorrelation:
            corr.append(None)
            bad.append(i)
    return corr, bad


def weight_stats(trace, flux):
    """Layer means, mean entropy, ENL and per-layer weight/flux correlation.

    A layer whose weight is constant over the trace has no correlation; its
    entry is ``None`` and its index is listed in ``degenerate_layers``.
    """
    w = trace.w if isinstance(trace, WeightTrace) else np.asarray(trace, dtype=np.float64)
    flux = np.asarray(flux, dtype=np.float64).ravel()
    if flux.size != w.shape[1]:
        raise ValueError(f"flux has {flux.size} frames, weights have {w.shape[1]}")
    h = frame_entropy(w)
    mean_h = float(h.mean())
    corr, bad = _flux_corr(w, flux)
    return WeightStats(w.mean(axis=1), mean_h, effective_layers(mean_h), corr, bad)


def corpus_weight_stats(traces: Sequence, fluxes: Sequence, mode="pooled"):
    """Statistics over several utterances.

    ``pooled`` concatenates all frames before computing anything;
    ``per_utterance`` averages the per-utterance means, entropies and
    correlations (skipping undefined correlations).
    """
    if len(traces) != len(fluxes) or not traces:
        raise ValueError("need one flux sequence per trace and at least one trace")
    ws = [t.w if isinstance(t, WeightTrace) else np.asarray(t, dtype=np.float64) for t in traces]
    if mode == "pooled":
        return weight_stats(np.concatenate(ws, axis=1), np.concatenate([np.ravel(f) for f in fluxes]))
    if mode != "per_utterance":
        raise ValueError(f"unknown mode {mode!r}")
    stats = [weight_stats(w, f) for w, f in zip(ws, fluxes)]
    means = np.mean([s.layer_means for s in stats], axis=0)
    mean_h = float(np.mean([s.mean_entropy for s in stats]))
    corr, bad = [], []
    for i in range(ws[0].shape[0]):
        vals = [s.flux_corr[i] for s in stats if s.flux_corr[i] is not None]
        corr.append(float(np.mean(vals)) if vals else None)
        if not vals:
            bad.append(i)
    return WeightStats(means, mean_h, effective_layers(mean_h), corr, bad)


def read_trace_csv(text):
    """Parse ``time,w_0,...,w_k`` rows into a :class:`WeightTrace`."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or len(header) < 2:
        raise ValueError("trace CSV needs a header with time and at least one weight column")
    times, rows = [], []
    for lineno, rec in enumerate(reader, 2):
        if not rec:
            continue
        try:
            vals = [float(v) for v in rec]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value") from None
        if len(vals) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} columns, got {len(vals)}")
        times.append(vals[0])
        rows.append(vals[1:])
    if not rows:
        raise ValueError("trace CSV has no frames")
    return WeightTrace(np.array(rows).T, frame_times=np.array(times))


def write_trace_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time"] + [f"w_{i}" for i in range(trace.n_layers)])
    for t in range(trace.T):
        w.writerow([repr(float(trace.frame_times[t]))] + [repr(float(v)) for v in trace.w[:, t]])
    return buf.getvalue()


def frame_table_csv(trace, flux):
    """Plot-ready per-frame rows: time, flux, w_0..w_k, entropy."""
    h = frame_entropy(trace)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "flux"] + [f"w_{i}" for i in range(trace.n_layers)] + ["entropy"])
    for t in range(trace.T):
        w.writerow(
            [repr(float(trace.frame_times[t])), repr(float(flux[t]))]
            + [repr(float(v)) for v in trace.w[:, t]]
            + [repr(float(h[t]))]
        )
    return buf.getvalue()


def planted_flux_trace(flux, layer=1, n_layers=4, strength=0.8):
    """Trace whose ``layer`` weight rises monotonically with flux.

    The remaining mass is split equally among the other layers, so they move
    opposite to the planted layer.
    """
    flux = np.asarray(flux, dtype=np.float64)
    span = flux.max() - flux.min()
    norm = (flux - flux.min()) / span if span > 0 else np.zeros_like(flux)
    w = np.empty((n_layers, flux.size))
    w[layer] = 0.1 + strength * norm
    others = [i for i in range(n_layers) if i != layer]
    w[others] = (1.0 - w[layer]) / len(others)
    return WeightTrace(w)
