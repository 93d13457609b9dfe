"""Waveform features: mel spectra, MFCCs, spectral flux, frame energy and pitch.

All per-frame features share one framing (no padding, frame t starts at
sample ``t * hop``), so their lengths always agree for a given signal.
"""
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

TARGET_SR = 16000
DB_EPS = 1e-10
LOG_EPS = 1e-10
# frames quieter than this RMS are treated as silence by the pitch tracker
SILENCE_RMS = 1e-7


class SignalTooShort(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = TARGET_SR

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 2:
            x = x.mean(axis=1)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("waveform must be a non-empty mono signal")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains NaN or Inf")
        self.samples = x
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def resampled(self, rate=TARGET_SR):
        if rate == self.sample_rate:
            return self
        ratio = Fraction(rate, self.sample_rate)
        y = resample_poly(self.samples, ratio.numerator, ratio.denominator)
        return Waveform(y, rate)


def load_wav(path, rate=TARGET_SR):
    """Read PCM16/PCM32/float WAV, downmix to mono and resample to ``rate``."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    return Waveform(x, sr).resampled(rate)


def save_wav(path, wave, pcm16=False):
    x = np.asarray(wave.samples)
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(str(path), wave.sample_rate, data)


@dataclass(frozen=True)
class FrameParams:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    n_mels: int = 80
    sample_rate: int = TARGET_SR

    def __post_init__(self):
        if self.window_ms < self.hop_ms:
            raise ValueError("window must be at least as long as the hop")
        if self.fft_size < self.win:
            raise ValueError(f"fft_size {self.fft_size} shorter than window {self.win}")
        if self.hop < 1 or self.n_mels < 1:
            raise ValueError("hop and n_mels must be positive")

    @property
    def win(self):
        return int(round(self.window_ms * self.sample_rate / 1000.0))

    @property
    def hop(self):
        return int(round(self.hop_ms * self.sample_rate / 1000.0))


def n_frames(n_samples, p):
    if n_samples < p.win:
        raise SignalTooShort(f"{n_samples} samples is shorter than one {p.win}-sample window")
    return 1 + (n_samples - p.win) // p.hop


def frame_signal(x, p, extra=0):
    """(T, win + extra) view of ``x``; ``extra`` samples past each window may run into zero padding."""
    T = n_frames(x.size, p)
    if extra:
        x = np.concatenate([x, np.zeros(extra)])
    idx = np.arange(T)[:, None] * p.hop + np.arange(p.win + extra)[None, :]
    return x[idx]


def frame_times(T, p):
    return (np.arange(T) * p.hop + p.win / 2.0) / p.sample_rate


def _check_rate(w, p):
    if w.sample_rate != p.sample_rate:
        raise ValueError(f"expected {p.sample_rate} Hz audio, got {w.sample_rate} Hz")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate=TARGET_SR, fft_size=512, n_mels=80, fmin=0.0, fmax=None):
    """Triangular filters on the HTK mel scale, shape (n_mels, fft_size // 2 + 1)."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.linspace(0.0, sample_rate / 2.0, fft_size // 2 + 1)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (centre - lower)
    falling = (upper - bins) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def filterbank_edges(sample_rate=TARGET_SR, n_mels=80, fmin=0.0, fmax=None):
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return np.stack([edges[:-2], edges[1:-1], edges[2:]], axis=1)


@dataclass
class MelSpec:
    frames: np.ndarray  # (T, n_mels), linear magnitude
    frame_times: np.ndarray

    @property
    def T(self):
        return self.frames.shape[0]


def stft_mel(w, p=FrameParams()):
    _check_rate(w, p)
    frames = frame_signal(w.samples, p)
    window = get_window("hann", p.win, fftbins=True)
    mag = np.abs(np.fft.rfft(frames * window, n=p.fft_size, axis=1))
    fb = mel_filterbank(p.sample_rate, p.fft_size, p.n_mels)
    return MelSpec(mag @ fb.T, frame_times(frames.shape[0], p))


def mfcc(m, n_coeffs=13):
    """Orthonormal DCT-II of log mel magnitudes, first ``n_coeffs`` coefficients."""
    frames = m.frames if isinstance(m, MelSpec) else np.asarray(m, dtype=np.float64)
    return dct(np.log(frames + LOG_EPS), type=2, norm="ortho", axis=1)[:, :n_coeffs]


def spectral_flux(m):
    """Euclidean distance between consecutive mel frames; the first frame gets 0."""
    frames = m.frames if isinstance(m, MelSpec) else np.asarray(m, dtype=np.float64)
    if frames.shape[0] < 2:
        raise ValueError("spectral flux needs at least two frames")
    flux = np.zeros(frames.shape[0])
    flux[1:] = np.linalg.norm(np.diff(frames, axis=0), axis=1)
    return flux


def to_db(rms, epsilon=DB_EPS):
    return 20.0 * np.log10(np.maximum(np.asarray(rms, dtype=np.float64), epsilon))


def frame_energy(w, p=FrameParams(), epsilon=DB_EPS):
    """Per-frame RMS and its clamped dB value ``20 log10(max(rms, eps))``."""
    frames = frame_signal(w.samples, p)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    return rms, to_db(rms, epsilon)


@dataclass
class ProsodyTrack:
    f0_hz: np.ndarray
    voicing: np.ndarray
    rms: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voicing = np.asarray(self.voicing, dtype=np.int64)
        self.rms = np.asarray(self.rms, dtype=np.float64)
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        n = self.f0_hz.size
        if not (self.voicing.size == self.rms.size == self.frame_times.size == n):
            raise ValueError("prosody track fields must have equal lengths")
        if np.any(self.f0_hz[self.voicing == 1] <= 0):
            raise ValueError("voiced frames need a positive F0")

    def __len__(self):
        return self.f0_hz.size

    @property
    def voiced_fraction(self):
        return float(self.voicing.mean()) if len(self) else 0.0


def yin_cmnd(frames_ext, win, tau_max):
    """Cumulative mean normalised difference for each row, lags 0..tau_max."""
    x = frames_ext[:, :win]
    nfft = 1 << int(math.ceil(math.log2(frames_ext.shape[1] + win)))
    corr = np.fft.irfft(
        np.conj(np.fft.rfft(x, nfft, axis=1)) * np.fft.rfft(frames_ext, nfft, axis=1),
        nfft, axis=1,
    )[:, : tau_max + 1]
    sq = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(frames_ext**2, axis=1)], axis=1)
    energy0 = sq[:, win]
    lags = np.arange(tau_max + 1)
    energy_tau = sq[:, lags + win] - sq[:, lags]
    diff = np.maximum(energy0[:, None] + energy_tau - 2.0 * corr, 0.0)
    cmnd = np.ones_like(diff)
    running = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = diff[:, 1:] * lags[1:] / running
    cmnd[:, 1:] = np.where(running > 0, ratio, 1.0)
    return cmnd


def track_pitch(w, p=FrameParams(), fmin=50.0, fmax=600.0, threshold=0.2):
    """YIN-style F0 tracker with an absolute voicing threshold.

    The first lag whose normalised difference dips below ``threshold`` is
    followed down to its local minimum and refined by parabolic
    interpolation. Frames without such a dip, or whose estimate leaves
    [fmin, fmax], are unvoiced with F0 0.
    """
    _check_rate(w, p)
    sr = p.sample_rate
    tau_min = max(2, int(math.floor(sr / fmax)))
    tau_max = int(math.ceil(sr / fmin))
    frames = frame_signal(w.samples, p, extra=tau_max + 1)
    rms = np.sqrt(np.mean(frames[:, : p.win] ** 2, axis=1))
    cmnd = yin_cmnd(frames, p.win, tau_max)

    T = frames.shape[0]
    f0 = np.zeros(T)
    voiced = np.zeros(T, dtype=np.int64)
    for t in range(T):
        if rms[t] < SILENCE_RMS:
            continue
        d = cmnd[t]
        below = np.nonzero(d[tau_min:tau_max] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 < tau_max and d[tau + 1] < d[tau]:
            tau += 1
        a, b, c = d[tau - 1], d[tau], d[tau + 1]
        denom = a - 2.0 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        freq = sr / (tau + float(np.clip(shift, -1.0, 1.0)))
        if fmin <= freq <= fmax:
            f0[t] = freq
            voiced[t] = 1
    return ProsodyTrack(f0, voiced, rms, frame_times(T, p))


def hz_to_semitone(f):
    """Semitones above 55 Hz, ``12 log2(f / 55)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    out = 12.0 * (np.log2(f) - math.log2(55.0))
    return float(out) if out.ndim == 0 else out


def semitone_to_hz(s):
    return 55.0 * 2.0 ** (np.asarray(s, dtype=np.float64) / 12.0)
