"""Synthetic 5-class corpus: class-dependent spectral envelopes + noise.

Each class gets its own pair of formant-like resonances and f0 range, so the
classes are separable from MFCCs and pitch alike.  Waveforms are harmonic
series shaped by the class envelope plus white noise; everything is seeded.
"""

import json
import os

import numpy as np

from affectpipe import features as ft

SR = 16000

CLASS_PARAMS = {
    "Happiness":     {"formants": (700, 2400), "f0": (230, 280), "noise": 0.02},
    "Sadness":       {"formants": (350, 900),  "f0": (90, 110),  "noise": 0.02},
    "Fear/Surprise": {"formants": (1000, 3300), "f0": (310, 380), "noise": 0.02},
    "Anger/Disgust": {"formants": (500, 1500), "f0": (130, 170), "noise": 0.02},
    "Neutral":       {"formants": (450, 1900), "f0": (180, 210), "noise": 0.02},
}

CLASSES = list(CLASS_PARAMS)


def envelope(freqs, formants, width=280.0):
    freqs = np.asarray(freqs, dtype=np.float64)
    out = np.zeros_like(freqs)
    for f in formants:
        out += np.exp(-0.5 * ((freqs - f) / width) ** 2)
    return out + 0.01


def synth_utterance(label, rng, seconds=0.6, sr=SR):
    """Two tone bursts with gaps, class formants and vibrato-modulated f0.

    The burst/gap structure matters: sliding-window CMN removes any purely
    stationary spectrum, so the class identity must live in within-utterance
    contrast, as it does for real speech.
    """
    params = CLASS_PARAMS[label]
    f0 = rng.uniform(*params["f0"])
    n = int(sr * seconds)
    t = np.arange(n) / sr

    # vibrato on the fundamental: integrate the instantaneous frequency
    vib_rate = rng.uniform(4.0, 7.0)
    vib_depth = 0.02 * f0
    inst_f0 = f0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi))
    phase0 = 2 * np.pi * np.cumsum(inst_f0) / sr

    n_harmonics = int((sr / 2 - 200) // (f0 * 1.05))
    ks = np.arange(1, n_harmonics + 1)
    amps = envelope(ks * f0, params["formants"]) / ks
    phases = rng.uniform(0, 2 * np.pi, size=n_harmonics)
    tone = (amps[:, None] * np.sin(np.outer(ks, phase0) + phases[:, None])).sum(axis=0)

    # amplitude envelope: two raised-cosine bursts separated by a gap
    amp = np.zeros(n)
    burst = int(0.35 * n)
    start1 = int(rng.uniform(0.0, 0.08) * n)
    start2 = int(rng.uniform(0.52, 0.62) * n)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(burst) / (burst - 1))
    for s in (start1, start2):
        e = min(s + burst, n)
        amp[s:e] += window[: e - s]
    wave = amp * tone + params["noise"] * rng.standard_normal(n)
    wave *= 0.5 / np.max(np.abs(wave))
    return wave


def make_audio(label, rng, utt_id, seconds=0.5):
    return ft.AudioBuffer(synth_utterance(label, rng, seconds), SR, utt_id)


def build_dataset(n_per_class, seed=0, seconds=0.6):
    """In-memory corpus: list of (utt_id, label, AudioBuffer), round-robin sessions."""
    rng = np.random.default_rng(seed)
    out = []
    for label in CLASSES:
        for i in range(n_per_class):
            utt_id = f"{label.split('/')[0].lower()}_{i:04d}"
            out.append((utt_id, label, make_audio(label, rng, utt_id, seconds)))
    return out


def write_corpus(directory, n_per_class, seed=0, seconds=0.6):
    """WAV files + JSONL manifest on disk; returns the manifest path."""
    os.makedirs(os.path.join(directory, "audio"), exist_ok=True)
    rows = []
    for i, (utt_id, label, audio) in enumerate(build_dataset(n_per_class, seed, seconds)):
        rel = os.path.join("audio", f"{utt_id}.wav")
        ft.save_wav(os.path.join(directory, rel), audio)
        rows.append({
            "utt_id": utt_id,
            "corpus": "other",
            "raw_label": label,
            "audio_path": rel,
            "transcript": f"synthetic {label}",
            "session": (i % 5) + 1,
        })
    manifest_path = os.path.join(directory, "manifest.jsonl")
    with open(manifest_path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return manifest_path
