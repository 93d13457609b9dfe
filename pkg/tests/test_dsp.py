import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from speechtok import dsp, synth
from speechtok.dsp import FrameParams, Waveform

P = FrameParams()


def test_frame_params():
    assert (P.win, P.hop, P.fft_size, P.n_mels) == (400, 160, 512, 80)
    assert dsp.n_frames(16000, P) == 98
    with pytest.raises(dsp.SignalTooShort):
        dsp.n_frames(399, P)


def test_sine_energy_in_covering_bands():
    m = dsp.stft_mel(synth.sine(1000.0, 1.0), P)
    edges = dsp.filterbank_edges(16000, 80)
    covering = (edges[:, 0] < 1000.0) & (edges[:, 2] > 1000.0)
    energy = (m.frames**2).sum(axis=0)
    assert energy[covering].sum() / energy.sum() > 0.8


def test_filterbank_shape_and_peaks():
    fb = dsp.mel_filterbank(16000, 512, 80)
    assert fb.shape == (80, 257)
    assert fb.max() <= 1.0 and np.all(fb.max(axis=1) > 0.4)


def test_silence_magnitudes():
    assert dsp.stft_mel(synth.silence(0.5), P).frames.max() < 1e-6


def test_magnitude_linearity(rng):
    x = rng.standard_normal(8000) * 0.1
    a = dsp.stft_mel(Waveform(x, 16000), P).frames
    b = dsp.stft_mel(Waveform(2 * x, 16000), P).frames
    np.testing.assert_allclose(b, 2 * a, rtol=0, atol=1e-9)


def test_mfcc_properties(rng):
    mel = np.abs(rng.standard_normal((20, 80))) + 0.1
    np.testing.assert_array_equal(dsp.mfcc(mel), dsp.mfcc(mel.copy()))
    const = dsp.mfcc(np.full((3, 80), 2.5))
    assert np.all(np.abs(const[:, 0]) > 0)
    np.testing.assert_allclose(const[:, 1:], 0.0, atol=1e-12)
    g = 3.0
    diff = dsp.mfcc(g * mel) - dsp.mfcc(mel)
    np.testing.assert_allclose(diff[:, 1:], 0.0, atol=1e-9)
    # ortho DCT of a constant log g over 80 bands: sqrt(80) * log g
    np.testing.assert_allclose(diff[:, 0], math.sqrt(80) * math.log(g), rtol=1e-6)
    assert dsp.mfcc(mel).shape == (20, 13)


def test_flux_examples():
    np.testing.assert_array_equal(dsp.spectral_flux(np.ones((4, 3))), [0, 0, 0, 0])
    np.testing.assert_allclose(dsp.spectral_flux(np.array([[0.0, 0.0], [3.0, 4.0]])), [0, 5])


def test_flux_peaks_at_onset():
    x = np.concatenate([np.zeros(8000), synth.sine(440.0, 1.0).samples])
    flux = dsp.spectral_flux(dsp.stft_mel(Waveform(x, 16000), P))
    onset_frame = 8000 // 160
    onset = flux[onset_frame - 3:onset_frame + 2].mean()
    steady = flux[onset_frame + 10:].mean()
    assert onset > 10 * steady


def test_energy_examples():
    rms, db = dsp.frame_energy(Waveform(np.ones(1600), 16000), P)
    np.testing.assert_allclose(rms, 1.0)
    np.testing.assert_allclose(db, 0.0, atol=1e-12)
    _, db = dsp.frame_energy(Waveform(np.full(1600, 0.5), 16000), P)
    np.testing.assert_allclose(db, 20 * math.log10(0.5))
    assert 20 * math.log10(0.5) == pytest.approx(-6.0206, abs=1e-4)
    _, db = dsp.frame_energy(synth.silence(0.1), P)
    assert np.all(db == 20 * math.log10(1e-10))
    assert np.all(db == -200.0)


@pytest.mark.parametrize("f0", [110.0, 220.0, 330.0])
def test_pitch_on_sines(f0):
    track = dsp.track_pitch(synth.sine(f0, 1.0), P)
    assert track.voiced_fraction > 0.9
    assert abs(np.median(track.f0_hz[track.voicing == 1]) - f0) < 0.03 * f0


def test_pitch_noise_and_silence():
    assert dsp.track_pitch(synth.white_noise(1.0), P).voiced_fraction < 0.2
    assert dsp.track_pitch(synth.silence(1.0), P).voiced_fraction == 0.0


def test_semitone_examples():
    assert dsp.hz_to_semitone(55.0) == 0.0
    assert dsp.hz_to_semitone(110.0) == 12.0
    assert dsp.hz_to_semitone(220.0) == 24.0
    with pytest.raises(ValueError):
        dsp.hz_to_semitone(0.0)


@given(st.floats(1.0, 5000.0))
def test_octave_is_twelve_semitones(f):
    assert dsp.hz_to_semitone(2 * f) - dsp.hz_to_semitone(f) == pytest.approx(12.0, abs=1e-12)
    assert dsp.semitone_to_hz(dsp.hz_to_semitone(f)) == pytest.approx(f, rel=1e-12)


def test_wav_roundtrip(tmp_path, rng):
    w = Waveform(rng.uniform(-0.9, 0.9, 4000), 16000)
    dsp.save_wav(tmp_path / "a.wav", w)
    np.testing.assert_allclose(dsp.load_wav(tmp_path / "a.wav").samples, w.samples, atol=1e-7)
    dsp.save_wav(tmp_path / "b.wav", w, pcm16=True)
    np.testing.assert_allclose(dsp.load_wav(tmp_path / "b.wav").samples, w.samples, atol=0.5 / 32768 + 1e-12)


def test_resampling_preserves_pitch():
    w = synth.sine(200.0, 1.0, sr=22050).resampled(16000)
    assert w.sample_rate == 16000
    track = dsp.track_pitch(w, P)
    assert np.median(track.f0_hz[track.voicing == 1]) == pytest.approx(200.0, rel=0.01)


def test_waveform_rejects_nan():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]), 16000)
