"""Procedural audio clip library: five spectrally-separable families with a
fixed train/test split, plus windowed lookup for per-step observations.

Family recipes (all 16 kHz, 4 s, looped, peak-normalized to 0.9):
  Alarm    - square-wave beeps around 2 kHz with on/off gating
  Phone    - dual-tone ring bursts at 440 + 480 Hz
  Furby    - FM warble sweeps
  Sink     - band-limited running-water noise
  Doorbell - two-note decaying sinusoid chime
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import acoustics
from .acoustics import SAMPLE_RATE, Waveform
from .world import Category

CLIP_SECONDS = 4.0
PEAK = 0.9

# (category, split) -> instance count; totals 77 train + 36 test = 113
BANK_COUNTS = {
    (Category.ALARM, "train"): 11, (Category.ALARM, "test"): 5,
    (Category.FURBY, "train"): 30, (Category.FURBY, "test"): 14,
    (Category.PHONE, "train"): 19, (Category.PHONE, "test"): 9,
    (Category.SINK, "train"): 6, (Category.SINK, "test"): 3,
    (Category.DOORBELL, "train"): 11, (Category.DOORBELL, "test"): 5,
}

CATEGORIES = (Category.ALARM, Category.FURBY, Category.PHONE,
              Category.SINK, Category.DOORBELL)


@dataclass
class SoundClip:
    clip_id: str
    category: str
    split: str                    # "train" | "test"
    waveform: Waveform
    params: dict
    loop: bool = True
    dominant_band: int = acoustics.DEFAULT_BAND

    def __post_init__(self):
        if self.waveform.duration < 1.0:
            raise ValueError("clips must be at least one second long")


def _time(n=None):
    n = n or int(CLIP_SECONDS * SAMPLE_RATE)
    return np.arange(n) / SAMPLE_RATE


# Each family owns a distinct stretch of spectrum (anchor frequencies vary a
# little per instance); the wide intra-category diversity lives in the
# temporal parameters: cadence, duty, warble, decay, burble.

def _synth_alarm(rng) -> tuple[np.ndarray, dict]:
    params = {
        "carrier_hz": float(rng.uniform(1950.0, 2100.0)),
        "beep_hz": float(rng.uniform(1.5, 6.0)),
        "duty": float(rng.uniform(0.3, 0.7)),
        "phase": float(rng.uniform(0.0, 1.0)),
    }
    t = _time()
    square = np.sign(np.sin(2 * np.pi * params["carrier_hz"] * t))
    gate = ((params["beep_hz"] * t + params["phase"]) % 1.0) < params["duty"]
    return square * gate, params


def _synth_phone(rng) -> tuple[np.ndarray, dict]:
    params = {
        "detune_hz": float(rng.uniform(-3.0, 3.0)),
        "ring_hz": float(rng.uniform(0.4, 1.2)),
        "ring_duty": float(rng.uniform(0.4, 0.8)),
        "tremolo_hz": float(rng.uniform(12.0, 28.0)),
        "tremolo_depth": float(rng.uniform(0.2, 0.5)),
    }
    t = _time()
    f1, f2 = 440.0 + params["detune_hz"], 480.0 + params["detune_hz"]
    tone = np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t)
    tremolo = 1.0 - params["tremolo_depth"] * (
        0.5 + 0.5 * np.sin(2 * np.pi * params["tremolo_hz"] * t))
    gate = ((params["ring_hz"] * t) % 1.0) < params["ring_duty"]
    return tone * tremolo * gate, params


def _synth_furby(rng) -> tuple[np.ndarray, dict]:
    params = {
        "carrier_hz": float(rng.uniform(1350.0, 1450.0)),
        "warble_hz": float(rng.uniform(2.5, 9.0)),
        "deviation_hz": float(rng.uniform(100.0, 180.0)),
        "sweep_hz": float(rng.uniform(0.2, 0.9)),
        "sweep_depth_hz": float(rng.uniform(40.0, 100.0)),
    }
    t = _time()
    inst_freq = (params["carrier_hz"]
                 + params["deviation_hz"] * np.cos(2 * np.pi * params["warble_hz"] * t)
                 + params["sweep_depth_hz"] * np.sin(2 * np.pi * params["sweep_hz"] * t))
    phase = 2 * np.pi * np.cumsum(inst_freq) / SAMPLE_RATE
    return np.sin(phase), params


def _synth_sink(rng) -> tuple[np.ndarray, dict]:
    params = {
        "low_hz": float(rng.uniform(2800.0, 3200.0)),
        "high_hz": float(rng.uniform(4800.0, 5200.0)),
        "noise_seed": int(rng.integers(0, 2 ** 31)),
        "burble_hz": float(rng.uniform(4.0, 14.0)),
        "burble_depth": float(rng.uniform(0.1, 0.4)),
    }
    n = int(CLIP_SECONDS * SAMPLE_RATE)
    noise = np.random.default_rng(params["noise_seed"]).standard_normal(n)
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spectrum[(freqs < params["low_hz"]) | (freqs > params["high_hz"])] = 0.0
    band = np.fft.irfft(spectrum, n)
    t = _time(n)
    burble = 1.0 + params["burble_depth"] * np.sin(2 * np.pi * params["burble_hz"] * t)
    return band * burble, params


def _synth_doorbell(rng) -> tuple[np.ndarray, dict]:
    params = {
        "note1_hz": float(rng.uniform(780.0, 820.0)),
        "note_ratio": float(rng.uniform(0.78, 0.82)),
        "decay_rate": float(rng.uniform(1.5, 4.0)),
        "gap_s": float(rng.uniform(0.3, 0.6)),
        "period_s": float(rng.uniform(1.7, 2.3)),
    }
    t = _time()
    note2 = params["note1_hz"] * params["note_ratio"]
    phase_in_period = t % params["period_s"]
    out = np.zeros_like(t)
    for start, freq in ((0.0, params["note1_hz"]), (params["gap_s"], note2)):
        local = phase_in_period - start
        active = local >= 0.0
        out += np.where(active,
                        np.exp(-params["decay_rate"] * np.clip(local, 0.0, None))
                        * np.sin(2 * np.pi * freq * np.clip(local, 0.0, None)),
                        0.0)
    return out, params


_RECIPES = {
    Category.ALARM: _synth_alarm,
    Category.PHONE: _synth_phone,
    Category.FURBY: _synth_furby,
    Category.SINK: _synth_sink,
    Category.DOORBELL: _synth_doorbell,
}


def _dominant_band(samples: np.ndarray) -> int:
    """Band whose center is nearest the clip's spectral centroid."""
    spectrum = np.abs(np.fft.rfft(samples)) ** 2
    freqs = np.fft.rfftfreq(len(samples), 1.0 / SAMPLE_RATE)
    centroid = float(np.sum(freqs * spectrum) / max(np.sum(spectrum), 1e-12))
    centers = np.asarray(acoustics.BAND_CENTERS_HZ)
    return int(np.argmin(np.abs(np.log(centers) - math.log(max(centroid, 1.0)))))


def synthesize_bank(seed: int = 0) -> list[SoundClip]:
    """Deterministic bank with the fixed per-(category, split) counts."""
    rng = np.random.default_rng(seed)
    clips = []
    for category in CATEGORIES:
        recipe = _RECIPES[category]
        for split in ("train", "test"):
            for k in range(BANK_COUNTS[(category, split)]):
                samples, params = recipe(rng)
                peak = np.max(np.abs(samples))
                samples = samples * (PEAK / peak)
                clip_id = f"{category.lower()}-{split}-{k:02d}"
                clips.append(SoundClip(
                    clip_id=clip_id, category=category, split=split,
                    waveform=Waveform(samples), params=params,
                    dominant_band=_dominant_band(samples)))
    return clips


class SoundBank:
    """Immutable clip lookup by id, category, and split."""

    def __init__(self, clips: list[SoundClip], seed: int | None = None):
        self.seed = seed
        self._by_id = {c.clip_id: c for c in clips}
        if len(self._by_id) != len(clips):
            raise ValueError("duplicate clip ids")

    @classmethod
    def build(cls, seed: int = 0) -> "SoundBank":
        return cls(synthesize_bank(seed), seed=seed)

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())

    def get(self, clip_id: str) -> SoundClip:
        return self._by_id[clip_id]

    def clips(self, category: str | None = None, split: str | None = None):
        return [c for c in self._by_id.values()
                if (category is None or c.category == category)
                and (split is None or c.split == split)]

    def manifest(self) -> str:
        rows = [
            {"clip_id": c.clip_id, "category": c.category, "split": c.split,
             "loop": c.loop, "dominant_band": c.dominant_band,
             "duration_s": c.waveform.duration, "params": c.params}
            for c in self._by_id.values()
        ]
        return json.dumps({"seed": self.seed, "sample_rate": SAMPLE_RATE,
                           "clips": rows}, sort_keys=True, indent=2)

    def export_wavs(self, out_dir):
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for clip in self:
            acoustics.save_wav(out / f"{clip.clip_id}.wav", clip.waveform)


def window_of(clip: SoundClip, t_step: int, step_seconds: float = 1.0) -> Waveform:
    """Samples [t*step, (t+1)*step) of the clip, wrapping modulo its length
    when looped; consecutive windows tile the loop with no gap or overlap.
    """
    if step_seconds <= 0:
        raise ValueError("step must be positive")
    samples = clip.waveform.samples
    n = len(samples)
    step = int(round(step_seconds * clip.waveform.sample_rate))
    start = t_step * step
    if clip.loop:
        idx = (start + np.arange(step)) % n
        return Waveform(samples[idx], clip.waveform.sample_rate)
    chunk = samples[start:start + step]
    if len(chunk) < step:
        chunk = np.pad(chunk, (0, step - len(chunk)))
    return Waveform(chunk, clip.waveform.sample_rate)
