"""Synthetic test signals: tones, noise and harmonic+noise pseudo-utterances."""
import numpy as np

from .dsp import TARGET_SR, Waveform


def sine(freq, duration=1.0, amplitude=0.5, sr=TARGET_SR, phase=0.0):
    t = np.arange(int(round(duration * sr))) / sr
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t + phase), sr)


def white_noise(duration=1.0, amplitude=0.3, sr=TARGET_SR, seed=0):
    rng = np.random.default_rng(seed)
    return Waveform(amplitude * rng.standard_normal(int(round(duration * sr))), sr)


def silence(duration=1.0, sr=TARGET_SR):
    return Waveform(np.zeros(int(round(duration * sr))), sr)


def _raised_cosine(n, ramp):
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp:] = r[::-1]
    return env


def utterance(seed=0, duration=1.6, f0_scale=1.0, gain=1.0, sr=TARGET_SR, noise_level=0.003):
    """Harmonic "syllables" separated by noise bursts, over a faint noise floor.

    The F0 contour glides smoothly around a seed-dependent base pitch.
    ``f0_scale`` multiplies the whole contour while leaving envelope, noise
    and timing untouched, so two calls differing only in ``f0_scale`` are a
    pitch-shifted pair.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sr))
    t = np.arange(n) / sr

    base = rng.uniform(110.0, 200.0)
    trend = rng.uniform(-3.0, 3.0)
    wiggle_amp = rng.uniform(1.0, 2.5)
    wiggle_rate = rng.uniform(0.6, 1.4)
    semis = trend * (t / duration - 0.5) + wiggle_amp * np.sin(2 * np.pi * wiggle_rate * t + rng.uniform(0, 2 * np.pi))
    f0 = f0_scale * base * 2.0 ** (semis / 12.0)
    phase = 2 * np.pi * np.cumsum(f0) / sr

    n_harm = 8
    amps = 1.0 / np.arange(1, n_harm + 1) * rng.uniform(0.6, 1.0, n_harm)
    voiced_src = sum(a * np.sin((k + 1) * phase) for k, a in enumerate(amps))
    voiced_src /= np.abs(voiced_src).max()

    env = np.zeros(n)
    fric = np.zeros(n)
    n_syll = int(rng.integers(3, 5))
    bounds = np.linspace(0.05 * n, 0.95 * n, n_syll + 1).astype(int)
    for k in range(n_syll):
        a, b = bounds[k], bounds[k + 1]
        gap = int(0.25 * (b - a))
        # noise burst (consonant) at the start of each syllable, voiced nucleus after it
        fric[a:a + gap] = _raised_cosine(gap, gap // 4) * rng.uniform(0.05, 0.15)
        seg = b - (a + gap)
        env[a + gap:b] = _raised_cosine(seg, seg // 5) * rng.uniform(0.4, 0.8)

    noise = rng.standard_normal(n)
    x = env * voiced_src + fric * noise + noise_level * rng.standard_normal(n)
    return Waveform(gain * x, sr)


def pitch_shifted_pair(seed=0, semitones=4.0, **kwargs):
    ref = utterance(seed, **kwargs)
    hyp = utterance(seed, f0_scale=2.0 ** (semitones / 12.0), **kwargs)
    return ref, hyp
