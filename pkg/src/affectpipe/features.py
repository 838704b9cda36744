"""Frame-level speech features: 30 MFCCs + 3 pitch features, sliding-window CMN.

The front end produces a T x 33 matrix per utterance: 30 mel-frequency
cepstra followed by probability of voicing, mean-subtracted log pitch and
raw pitch deltas, all computed on 25 ms frames with a 10 ms hop and then
normalized with a 300-frame sliding cepstral mean window.  Additive noise
augmentation at a requested SNR is also provided.

All functions are pure; anything random (dither, noise crop) takes an
explicit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fftpack import dct
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_SAMPLE_RATE = 16000
FEATURE_DIM = 33


class AudioError(Exception):
    """Raised for audio that violates the input contract."""


@dataclass
class AudioBuffer:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"audio must be mono (1-D), got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError(f"audio {self.id!r} contains non-finite samples")


@dataclass
class MfccConfig:
    num_ceps: int = 30
    num_mel_bins: int = 30
    fft_size: int = 512
    preemphasis: float = 0.97
    window: str = "hamming"  # raised-cosine choice; "povey" also accepted
    dither: float = 0.0      # stddev of additive Gaussian dither; 0 disables
    energy_floor: float = 1e-10
    low_freq: float = 20.0
    high_freq: float = 0.0   # 0 means Nyquist
    frame_length_ms: float = 25.0
    frame_hop_ms: float = 10.0

    def __post_init__(self):
        if self.num_ceps > self.num_mel_bins:
            raise ValueError(
                f"num_ceps ({self.num_ceps}) must not exceed num_mel_bins ({self.num_mel_bins})"
            )


@dataclass
class PitchConfig:
    min_f0: float = 50.0
    max_f0: float = 400.0
    voicing_threshold: float = 0.3
    energy_floor: float = 1e-10
    log_pitch_floor: float = 0.0   # emitted in the log-pitch column for unvoiced frames
    peak_ratio: float = 0.9        # accept the earliest peak within this ratio of the max
    frame_length_ms: float = 25.0
    frame_hop_ms: float = 10.0


@dataclass
class CmnConfig:
    window_frames: int = 300
    centered: bool = True

    def __post_init__(self):
        if self.window_frames < 1:
            raise ValueError("window_frames must be >= 1")


@dataclass
class FeatureConfig:
    """Front-end configuration: MFCC + pitch + CMN, shared framing."""

    mfcc: MfccConfig = field(default_factory=MfccConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    cmn: CmnConfig = field(default_factory=CmnConfig)


def frame_counts(num_samples: int, sample_rate: int, frame_length_ms: float, frame_hop_ms: float):
    frame = int(round(sample_rate * frame_length_ms / 1000.0))
    hop = int(round(sample_rate * frame_hop_ms / 1000.0))
    if num_samples < frame:
        return frame, hop, 0
    return frame, hop, (num_samples - frame) // hop + 1


def _frames(samples: np.ndarray, frame: int, hop: int, count: int) -> np.ndarray:
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return samples[idx]


def mel_scale(hz):
    return 1127.0 * np.log(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def inverse_mel_scale(mel):
    return 700.0 * (np.exp(np.asarray(mel, dtype=np.float64) / 1127.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters on the mel axis, shape (num_mel_bins, fft_size//2 + 1)."""
    high = cfg.high_freq if cfg.high_freq > 0 else sample_rate / 2.0
    if not (0 <= cfg.low_freq < high <= sample_rate / 2.0):
        raise ValueError(f"bad mel band edges [{cfg.low_freq}, {high}] at rate {sample_rate}")
    n_bins = cfg.fft_size // 2 + 1
    fft_hz = np.arange(n_bins) * sample_rate / cfg.fft_size
    fft_mel = mel_scale(fft_hz)
    edges = np.linspace(mel_scale(cfg.low_freq), mel_scale(high), cfg.num_mel_bins + 2)
    bank = np.zeros((cfg.num_mel_bins, n_bins))
    for m in range(cfg.num_mel_bins):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_mel - left) / (center - left)
        down = (right - fft_mel) / (right - center)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def _window_fn(name: str, length: int) -> np.ndarray:
    n = np.arange(length)
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * n / (length - 1))
    if name == "povey":
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / (length - 1))
        return hann ** 0.85
    raise ValueError(f"unknown window {name!r}")


def compute_mfcc(audio: AudioBuffer, cfg: MfccConfig | None = None, seed: int = 0) -> np.ndarray:
    """Compute the top `num_ceps` MFCCs, shape (T, num_ceps).

    Deterministic with dither off; a fixed seed makes dither reproducible.
    """
    cfg = cfg or MfccConfig()
    frame, hop, count = frame_counts(
        len(audio.samples), audio.sample_rate, cfg.frame_length_ms, cfg.frame_hop_ms
    )
    if count < 1:
        raise AudioError(
            f"audio {audio.id!r} too short: {len(audio.samples)} samples < one "
            f"{cfg.frame_length_ms} ms frame ({frame} samples)"
        )
    log_energies = compute_log_fbank(audio, cfg, seed=seed)
    ceps = dct(log_energies, type=2, axis=1, norm="ortho")[:, : cfg.num_ceps]
    return ceps


def compute_log_fbank(audio: AudioBuffer, cfg: MfccConfig | None = None, seed: int = 0) -> np.ndarray:
    """Log mel filterbank energies, shape (T, num_mel_bins)."""
    cfg = cfg or MfccConfig()
    frame, hop, count = frame_counts(
        len(audio.samples), audio.sample_rate, cfg.frame_length_ms, cfg.frame_hop_ms
    )
    if count < 1:
        raise AudioError(f"audio {audio.id!r} too short for one frame")
    if frame > cfg.fft_size:
        raise ValueError(f"fft_size {cfg.fft_size} smaller than frame ({frame} samples)")

    samples = audio.samples
    if cfg.dither > 0:
        rng = np.random.default_rng(seed)
        samples = samples + cfg.dither * rng.standard_normal(len(samples))
    if cfg.preemphasis > 0:
        samples = np.concatenate(([samples[0]], samples[1:] - cfg.preemphasis * samples[:-1]))

    frames = _frames(samples, frame, hop, count) * _window_fn(cfg.window, frame)
    spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / cfg.fft_size
    energies = power @ mel_filterbank(cfg, audio.sample_rate).T
    return np.log(np.maximum(energies, cfg.energy_floor))


def track_pitch(audio: AudioBuffer, cfg: PitchConfig | None = None):
    """NCCF pitch track: (pov, pitch_hz, voiced) per frame.

    POV is the peak normalized autocorrelation over the [min_f0, max_f0] lag
    range, clipped to [0, 1]; a frame is voiced when that peak clears the
    voicing threshold.  Unvoiced/silent frames carry pitch 0.
    """
    cfg = cfg or PitchConfig()
    sr = audio.sample_rate
    frame, hop, count = frame_counts(len(audio.samples), sr, cfg.frame_length_ms, cfg.frame_hop_ms)
    if count < 1:
        raise AudioError(f"audio {audio.id!r} too short for one frame")

    min_lag = max(2, int(sr / cfg.max_f0))
    max_lag = int(math.ceil(sr / cfg.min_f0))
    if max_lag <= min_lag:
        raise ValueError(f"pitch range [{cfg.min_f0}, {cfg.max_f0}] Hz unusable at rate {sr}")
    padded = np.concatenate([audio.samples, np.zeros(max_lag)])
    sq = np.concatenate([[0.0], np.cumsum(padded * padded)])
    fft_len = 1 << (frame + max_lag).bit_length()

    pov = np.zeros(count)
    voiced = np.zeros(count, dtype=bool)
    pitch_hz = np.zeros(count)

    for t in range(count):
        s = t * hop
        x0 = padded[s : s + frame]
        e1 = sq[s + frame] - sq[s]
        if e1 / frame < cfg.energy_floor:
            continue
        ext = padded[s : s + frame + max_lag]
        corr = np.fft.irfft(
            np.conj(np.fft.rfft(x0, fft_len)) * np.fft.rfft(ext, fft_len), fft_len
        )[: max_lag + 1]
        lags = np.arange(min_lag, max_lag + 1)
        e2 = sq[s + lags + frame] - sq[s + lags]
        nccf = corr[min_lag:] / np.sqrt(e1 * e2 + 1e-20)

        best = float(np.max(nccf))
        pov[t] = min(max(best, 0.0), 1.0)
        if best < cfg.voicing_threshold:
            continue
        voiced[t] = True
        pitch_hz[t] = sr / _pick_lag(nccf, lags, best, cfg.peak_ratio)
    return pov, pitch_hz, voiced


def compute_pitch_features(audio: AudioBuffer, cfg: PitchConfig | None = None) -> np.ndarray:
    """Per-frame (POV, mean-subtracted log pitch, raw pitch delta), shape (T, 3).

    Voiced frames carry log f0 minus the utterance's voiced-mean log f0;
    unvoiced and silent frames emit the configured log-pitch floor and zero
    deltas, never NaN.
    """
    cfg = cfg or PitchConfig()
    pov, pitch_hz, voiced = track_pitch(audio, cfg)
    count = len(pov)

    log_pitch = np.full(count, cfg.log_pitch_floor)
    if voiced.any():
        lp = np.log(pitch_hz[voiced])
        log_pitch[voiced] = lp - lp.mean()

    delta = np.zeros(count)
    if count > 1:
        delta[1:-1] = (pitch_hz[2:] - pitch_hz[:-2]) / 2.0
        delta[0] = pitch_hz[1] - pitch_hz[0]
        delta[-1] = pitch_hz[-1] - pitch_hz[-2]

    return np.stack([pov, log_pitch, delta], axis=1)


def _pick_lag(nccf: np.ndarray, lags: np.ndarray, best: float, peak_ratio: float) -> float:
    """Earliest acceptable peak, parabolic-refined, to avoid octave halving."""
    threshold = peak_ratio * best
    candidates = np.flatnonzero(nccf >= threshold)
    i = int(candidates[0])
    # walk up to the local maximum of this peak
    while i + 1 < len(nccf) and nccf[i + 1] > nccf[i]:
        i += 1
    lag = float(lags[i])
    if 0 < i < len(nccf) - 1:
        denom = nccf[i - 1] - 2 * nccf[i] + nccf[i + 1]
        if denom < -1e-12:
            shift = 0.5 * (nccf[i - 1] - nccf[i + 1]) / denom
            lag += float(np.clip(shift, -0.5, 0.5))
    return lag


def apply_cmn(feats: np.ndarray, cfg: CmnConfig | None = None) -> np.ndarray:
    """Subtract the clamped sliding-window mean from every frame.

    The window is `window_frames` long, centered (or trailing) on the current
    frame and shifted to stay inside [0, T); output[t] is exactly
    input[t] - mean(input[start:end]) for that clamped window.
    """
    cfg = cfg or CmnConfig()
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError(f"expected a (T, D) matrix with T >= 1, got shape {feats.shape}")
    t_total = feats.shape[0]
    w = min(cfg.window_frames, t_total)
    out = np.empty_like(feats)

    # one slice-mean per distinct window position; edge frames share windows
    means: dict[int, np.ndarray] = {}
    for t in range(t_total):
        start = t - w // 2 if cfg.centered else t - w + 1
        start = min(max(start, 0), t_total - w)
        mu = means.get(start)
        if mu is None:
            mu = feats[start : start + w].mean(axis=0)
            means[start] = mu
        out[t] = feats[t] - mu
    return out


def augment_noise(audio: AudioBuffer, noise: AudioBuffer, snr_db: float, seed: int = 0) -> AudioBuffer:
    """Add noise scaled so that active-signal power over noise power hits snr_db.

    The noise is tiled if shorter and randomly cropped (seeded) if longer.
    snr_db = +inf returns the input untouched.  Active-signal power is the
    mean square over samples above one thousandth of the utterance peak, so
    leading/trailing silence does not deflate the target SNR.
    """
    if audio.sample_rate != noise.sample_rate:
        raise AudioError(
            f"sample rate mismatch: signal {audio.sample_rate}, noise {noise.sample_rate}"
        )
    n = len(audio.samples)
    if np.isinf(snr_db) and snr_db > 0:
        return AudioBuffer(audio.samples.copy(), audio.sample_rate, audio.id)

    sig_power = active_power(audio.samples)
    if sig_power <= 0:
        raise AudioError(f"zero-power signal {audio.id!r} with finite SNR requested")

    noise_samples = noise.samples
    if len(noise_samples) == 0 or not np.any(noise_samples):
        # adding zero noise satisfies any SNR vacuously
        return AudioBuffer(audio.samples.copy(), audio.sample_rate, audio.id)
    if len(noise_samples) < n:
        reps = -(-n // len(noise_samples))
        noise_samples = np.tile(noise_samples, reps)
    if len(noise_samples) > n:
        rng = np.random.default_rng(seed)
        off = int(rng.integers(0, len(noise_samples) - n + 1))
        noise_samples = noise_samples[off : off + n]
    noise_power = float(np.mean(noise_samples**2))
    if noise_power <= 0:
        raise AudioError(f"zero-power noise crop from {noise.id!r} with finite SNR requested")

    alpha = math.sqrt(sig_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return AudioBuffer(audio.samples + alpha * noise_samples, audio.sample_rate, audio.id)


def active_power(samples: np.ndarray, rel_threshold: float = 1e-3) -> float:
    """Mean square over samples whose amplitude exceeds rel_threshold * peak."""
    samples = np.asarray(samples, dtype=np.float64)
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak == 0.0:
        return 0.0
    active = samples[np.abs(samples) > rel_threshold * peak]
    if active.size == 0:
        return 0.0
    return float(np.mean(active**2))


def extract_features(audio: AudioBuffer, cfg: FeatureConfig | None = None, seed: int = 0) -> np.ndarray:
    """Full front end: 30 MFCC + 3 pitch columns, CMN over the 33-dim matrix."""
    cfg = cfg or FeatureConfig()
    if cfg.mfcc.frame_length_ms != cfg.pitch.frame_length_ms or cfg.mfcc.frame_hop_ms != cfg.pitch.frame_hop_ms:
        raise ValueError("MFCC and pitch framing must agree so row counts align")
    mfcc = compute_mfcc(audio, cfg.mfcc, seed=seed)
    pitch = compute_pitch_features(audio, cfg.pitch)
    if mfcc.shape[0] != pitch.shape[0]:
        raise AudioError(
            f"row mismatch for {audio.id!r}: mfcc {mfcc.shape[0]} vs pitch {pitch.shape[0]}"
        )
    return apply_cmn(np.hstack([mfcc, pitch]), cfg.cmn)


def load_wav(path: str, utt_id: str = "", target_rate: int = CANONICAL_SAMPLE_RATE) -> AudioBuffer:
    """Read a mono WAV file, normalize to [-1, 1] and resample to target_rate."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise AudioError(f"{path}: unsupported sample dtype {data.dtype}")
    if rate != target_rate:
        g = math.gcd(int(target_rate), int(rate))
        samples = resample_poly(samples, target_rate // g, rate // g)
        samples = np.clip(samples, -1.0, 1.0)
    return AudioBuffer(samples, target_rate, utt_id)


def save_wav(path: str, audio: AudioBuffer) -> None:
    wavfile.write(path, audio.sample_rate, audio.samples.astype(np.float32))


def utterance_seed(global_seed: int, utt_id: str) -> int:
    """Stable per-utterance seed so parallel extraction order cannot matter."""
    h = 1469598103934665603
    for byte in utt_id.encode("utf-8"):
        h = ((h ^ byte) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return (h ^ (global_seed & 0xFFFFFFFFFFFFFFFF)) & 0x7FFFFFFF
