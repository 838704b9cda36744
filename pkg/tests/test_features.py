"""Front-end contracts: framing, MFCC geometry, pitch tracking, CMN, noise mixing."""

import numpy as np
import pytest

from affectpipe import features as ft

SR = 16000


def sine(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(sr * seconds)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def sawtooth(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(sr * seconds)) / sr
    return amp * (2.0 * ((freq * t) % 1.0) - 1.0)


class TestFraming:
    def test_exactly_one_frame(self):
        audio = ft.AudioBuffer(np.ones(400) * 0.1, SR, "one")
        mfcc = ft.compute_mfcc(audio)
        assert mfcc.shape == (1, 30)

    def test_frame_count_arithmetic(self):
        # T = floor((len - frame) / hop) + 1 with frame=400, hop=160
        for n, expected in [(400, 1), (559, 1), (560, 2), (4000, 23)]:
            audio = ft.AudioBuffer(0.1 * np.ones(n), SR, f"n{n}")
            assert ft.compute_mfcc(audio).shape[0] == expected

    def test_too_short_raises(self):
        with pytest.raises(ft.AudioError, match="too short"):
            ft.compute_mfcc(ft.AudioBuffer(np.ones(399) * 0.1, SR, "short"))

    def test_rows_align_and_concat_is_33(self):
        rng = np.random.default_rng(7)
        audio = ft.AudioBuffer(0.3 * rng.standard_normal(SR), SR, "rand")
        full = ft.extract_features(audio)
        mfcc = ft.compute_mfcc(audio)
        pitch = ft.compute_pitch_features(audio)
        assert mfcc.shape[0] == pitch.shape[0] == full.shape[0]
        assert full.shape[1] == ft.FEATURE_DIM == 33


class TestMfcc:
    def test_all_zero_audio_hits_log_floor(self):
        audio = ft.AudioBuffer(np.zeros(SR), SR, "silence")
        cfg = ft.MfccConfig(dither=0.0)
        fbank = ft.compute_log_fbank(audio, cfg)
        assert np.all(fbank == np.log(cfg.energy_floor))
        mfcc = ft.compute_mfcc(audio, cfg)
        assert np.all(mfcc == mfcc[0])  # column-constant: every frame identical

    def test_sine_peaks_in_nearest_mel_filter(self):
        # oracle: centers are uniform on the mel axis; the hottest filter for a
        # 1 kHz tone must be the one whose center is nearest 1 kHz in mel
        cfg = ft.MfccConfig()
        high = SR / 2.0
        edges = np.linspace(ft.mel_scale(cfg.low_freq), ft.mel_scale(high), cfg.num_mel_bins + 2)
        centers = edges[1:-1]
        oracle_bin = int(np.argmin(np.abs(ft.mel_scale(1000.0) - centers)))

        audio = ft.AudioBuffer(sine(1000.0), SR, "sine1k")
        fbank = ft.compute_log_fbank(audio, cfg)
        assert int(np.argmax(fbank.mean(axis=0))) == oracle_bin

    def test_deterministic_without_dither(self):
        audio = ft.AudioBuffer(sine(440.0), SR, "a")
        assert np.array_equal(ft.compute_mfcc(audio), ft.compute_mfcc(audio))

    def test_dither_seeded(self):
        cfg = ft.MfccConfig(dither=1e-5)
        audio = ft.AudioBuffer(sine(440.0), SR, "a")
        one = ft.compute_mfcc(audio, cfg, seed=11)
        two = ft.compute_mfcc(audio, cfg, seed=11)
        other = ft.compute_mfcc(audio, cfg, seed=12)
        assert np.array_equal(one, two)
        assert not np.array_equal(one, other)

    def test_num_ceps_cannot_exceed_mel_bins(self):
        with pytest.raises(ValueError):
            ft.MfccConfig(num_ceps=31, num_mel_bins=30)


class TestPitch:
    def test_sawtooth_median_pitch_near_100hz(self):
        audio = ft.AudioBuffer(sawtooth(100.0, seconds=2.0), SR, "saw")
        pov, pitch_hz, voiced = ft.track_pitch(audio)
        assert voiced.mean() > 0.9
        median_f0 = float(np.median(pitch_hz[voiced]))
        assert 98.0 <= median_f0 <= 102.0

    def test_hand_nccf_confirms_100hz_periodicity_and_no_octave_error(self):
        # oracle: direct O(lags x frame) normalized autocorrelation by loops;
        # a 100 Hz source at 16 kHz must peak at lag 160 (and its multiples)
        audio = ft.AudioBuffer(sawtooth(100.0, seconds=2.0), SR, "saw")
        frame = audio.samples[:400]
        ext = audio.samples[:400 + 320]
        lags = np.arange(40, 321)
        corr = np.array([np.dot(frame, ext[l:l + 400]) for l in lags])
        e1 = float(np.dot(frame, frame))
        e2 = np.array([float(np.dot(ext[l:l + 400], ext[l:l + 400])) for l in lags])
        nccf = corr / np.sqrt(e1 * e2 + 1e-20)
        at = dict(zip(lags.tolist(), nccf))
        assert at[160] > 0.9          # fundamental period
        assert at[320] > 0.9          # double period ties: octave trap exists
        assert at[240] < at[160]      # non-multiples are weaker

        # the tracker must report the fundamental, not the subharmonic
        _, pitch_hz, voiced = ft.track_pitch(audio)
        assert voiced[0]
        assert 98.0 <= pitch_hz[0] <= 102.0

    def test_log_pitch_column_mean_subtracted(self):
        audio = ft.AudioBuffer(sawtooth(100.0, seconds=2.0), SR, "saw")
        pitch = ft.compute_pitch_features(audio)
        pov, log_pitch, delta = pitch.T
        voiced = pov > 0.5
        assert abs(log_pitch[voiced].mean()) < 1e-12
        assert np.std(log_pitch[voiced]) < 0.05
        assert np.abs(delta[voiced][1:-1]).max() < 1.0  # constant pitch: flat

    def test_noise_pov_below_periodic_pov(self):
        rng = np.random.default_rng(3)
        noise = ft.AudioBuffer(0.3 * rng.standard_normal(2 * SR), SR, "wn")
        saw = ft.AudioBuffer(sawtooth(100.0, seconds=2.0), SR, "saw")
        pov_noise = ft.compute_pitch_features(noise)[:, 0].mean()
        pov_saw = ft.compute_pitch_features(saw)[:, 0].mean()
        assert pov_noise < pov_saw

    def test_digital_silence_emits_floors(self):
        cfg = ft.PitchConfig(log_pitch_floor=-1.5)
        audio = ft.AudioBuffer(np.zeros(SR), SR, "zeros")
        pitch = ft.compute_pitch_features(audio, cfg)
        assert np.all(pitch[:, 0] == 0.0)
        assert np.all(pitch[:, 1] == -1.5)
        assert np.all(pitch[:, 2] == 0.0)

    def test_pov_range(self):
        rng = np.random.default_rng(5)
        audio = ft.AudioBuffer(0.5 * rng.standard_normal(SR), SR, "n")
        pov = ft.compute_pitch_features(audio)[:, 0]
        assert np.all((pov >= 0.0) & (pov <= 1.0))


class TestCmn:
    def test_constant_becomes_zero(self):
        feats = np.full((40, 5), 3.25)
        out = ft.apply_cmn(feats, ft.CmnConfig(window_frames=300))
        assert np.all(out == 0.0)

    def test_three_frame_example(self):
        feats = np.array([[1.0], [2.0], [3.0]])
        out = ft.apply_cmn(feats, ft.CmnConfig(window_frames=3))
        assert np.array_equal(out, np.array([[-1.0], [0.0], [1.0]]))

    def test_matches_recomputed_window_means_exactly(self):
        rng = np.random.default_rng(123)
        feats = rng.standard_normal((600, 33)) * 5.0 + 1.0
        cfg = ft.CmnConfig(window_frames=300, centered=True)
        out = ft.apply_cmn(feats, cfg)
        t_total = feats.shape[0]
        w = min(cfg.window_frames, t_total)
        for t in range(t_total):
            start = t - w // 2
            start = min(max(start, 0), t_total - w)
            expected = feats[t] - feats[start:start + w].mean(axis=0)
            assert np.array_equal(out[t], expected), f"frame {t} differs"

    def test_non_centered_window(self):
        rng = np.random.default_rng(5)
        feats = rng.standard_normal((50, 4))
        cfg = ft.CmnConfig(window_frames=10, centered=False)
        out = ft.apply_cmn(feats, cfg)
        for t in range(50):
            start = min(max(t - 9, 0), 40)
            expected = feats[t] - feats[start:start + 10].mean(axis=0)
            assert np.array_equal(out[t], expected)

    def test_full_window_columns_sum_to_zero(self):
        rng = np.random.default_rng(9)
        feats = rng.standard_normal((120, 8)) * 50.0
        out = ft.apply_cmn(feats, ft.CmnConfig(window_frames=300))
        scale = np.abs(feats).max()
        assert np.abs(out.sum(axis=0)).max() < 1e-9 * scale * feats.shape[0]


class TestAugmentNoise:
    def test_infinite_snr_is_identity(self):
        rng = np.random.default_rng(0)
        audio = ft.AudioBuffer(0.1 * rng.standard_normal(1000), SR, "a")
        noise = ft.AudioBuffer(0.1 * rng.standard_normal(2000), SR, "n")
        out = ft.augment_noise(audio, noise, np.inf)
        assert np.array_equal(out.samples, audio.samples)

    def test_zero_noise_is_identity(self):
        audio = ft.AudioBuffer(sine(200.0), SR, "a")
        silence = ft.AudioBuffer(np.zeros(SR), SR, "z")
        out = ft.augment_noise(audio, silence, 10.0)
        assert np.array_equal(out.samples, audio.samples)

    def test_equal_power_at_0db_doubles_power(self):
        rng = np.random.default_rng(42)
        sig = rng.choice([-1.0, 1.0], size=SR)   # |x| = 1 everywhere: no silence
        noi = rng.choice([-1.0, 1.0], size=SR)
        audio = ft.AudioBuffer(sig, SR, "s")
        noise = ft.AudioBuffer(noi, SR, "n")
        out = ft.augment_noise(audio, noise, 0.0)
        # alpha must be exactly 1: the residual equals the noise bit for bit
        assert np.array_equal(out.samples - sig, noi)
        assert np.mean(out.samples**2) == pytest.approx(2.0, rel=0.05)

    def test_remeasured_snr_matches_request(self):
        rng = np.random.default_rng(1)
        audio = ft.AudioBuffer(sawtooth(150.0, seconds=1.0), SR, "s")
        noise = ft.AudioBuffer(0.2 * rng.standard_normal(3 * SR), SR, "n")
        for snr in (-5.0, 0.0, 7.5, 20.0):
            out = ft.augment_noise(audio, noise, snr, seed=4)
            residual = out.samples - audio.samples
            measured = 10.0 * np.log10(
                ft.active_power(audio.samples) / np.mean(residual**2)
            )
            assert abs(measured - snr) < 0.1

    def test_zero_power_signal_rejected(self):
        audio = ft.AudioBuffer(np.zeros(1000), SR, "z")
        noise = ft.AudioBuffer(np.ones(1000) * 0.1, SR, "n")
        with pytest.raises(ft.AudioError, match="zero-power signal"):
            ft.augment_noise(audio, noise, 10.0)

    def test_seed_changes_crop_but_not_shape(self):
        rng = np.random.default_rng(2)
        audio = ft.AudioBuffer(sine(300.0, seconds=0.5), SR, "s")
        noise = ft.AudioBuffer(0.3 * rng.standard_normal(4 * SR), SR, "n")
        a = ft.augment_noise(audio, noise, 5.0, seed=1)
        b = ft.augment_noise(audio, noise, 5.0, seed=2)
        assert not np.array_equal(a.samples, b.samples)
        assert len(a.samples) == len(b.samples) == len(audio.samples)
        assert a.sample_rate == b.sample_rate == audio.sample_rate

    def test_short_noise_is_tiled(self):
        audio = ft.AudioBuffer(sine(300.0, seconds=1.0), SR, "s")
        noise = ft.AudioBuffer(0.1 * np.sin(np.arange(1000)), SR, "n")
        out = ft.augment_noise(audio, noise, 10.0)
        assert len(out.samples) == len(audio.samples)


def test_wav_round_trip(tmp_path):
    audio = ft.AudioBuffer(sine(440.0, seconds=0.25), SR, "w")
    path = tmp_path / "w.wav"
    ft.save_wav(str(path), audio)
    back = ft.load_wav(str(path), "w")
    assert back.sample_rate == SR
    assert np.allclose(back.samples, audio.samples, atol=1e-6)


def test_wav_resampled_on_ingest(tmp_path):
    from scipy.io import wavfile

    t = np.arange(8000) / 8000
    wavfile.write(str(tmp_path / "lo.wav"), 8000, (0.5 * np.sin(2 * np.pi * 440 * t)).astype(np.float32))
    audio = ft.load_wav(str(tmp_path / "lo.wav"), "lo")
    assert audio.sample_rate == SR
    assert len(audio.samples) == 16000


def test_utterance_seed_stable():
    assert ft.utterance_seed(7, "utt-1") == ft.utterance_seed(7, "utt-1")
    assert ft.utterance_seed(7, "utt-1") != ft.utterance_seed(8, "utt-1")
    assert ft.utterance_seed(7, "utt-1") != ft.utterance_seed(7, "utt-2")
