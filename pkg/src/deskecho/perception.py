"""Observation feature spaces: spectrograms, mel energies, interaural
direction cues, grid range scans, and a nearest-centroid sound classifier.

ITD sign convention (fixed): positive interaural delay means the source is
to the agent's LEFT, i.e. the left channel leads and the right channel is a
delayed copy of it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .acoustics import (BAND_CENTERS_HZ, HEAD_WIDTH, SAMPLE_RATE,
                        SPEED_OF_SOUND, BinauralFrame, Waveform)
from .errors import TooShort, Unfitted
from .world import OccupancyGrid, Scene, build_occupancy_grid

DEFAULT_FRAME = 512
DEFAULT_HOP = 160
DEFAULT_MEL_BANDS = 64
LOG_FLOOR = 1e-10

# geometric midpoints between the four material band centers
BAND_EDGES_HZ = (0.0, 250.0, 1000.0, 4000.0, 8000.0)

MAX_ITD_LAG = int(round(HEAD_WIDTH / SPEED_OF_SOUND * SAMPLE_RATE)) + 1


@dataclass
class Spectrogram:
    magnitudes: np.ndarray          # time x bins, non-negative
    frame: int
    hop: int
    sample_rate: int = SAMPLE_RATE
    channel: str = "mono"

    @property
    def bins(self) -> int:
        return self.magnitudes.shape[1]


@dataclass
class MelSpectrogram:
    mel_energies: np.ndarray        # time x bands, log scale
    band_count: int
    sample_rate: int = SAMPLE_RATE


@dataclass
class AudioFeatures:
    interaural_level_db: float
    interaural_delay: int           # samples; positive = source left
    band_energies: np.ndarray       # one scalar per material band
    spectral_centroid_hz: float
    spectral_flatness: float
    delay_valid: bool = True


@dataclass
class RangeScan:
    ranges: np.ndarray
    max_range: float
    fov: float


def stft(w: Waveform, frame: int = DEFAULT_FRAME, hop: int = DEFAULT_HOP,
         channel: str = "mono") -> Spectrogram:
    """Hann-windowed magnitude STFT (no padding)."""
    if frame & (frame - 1):
        raise ValueError("frame must be a power of two")
    if hop > frame:
        raise ValueError("hop must not exceed frame")
    x = w.samples
    if len(x) < frame:
        raise TooShort(f"{len(x)} samples < frame {frame}")
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame)
    n_frames = 1 + (len(x) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    mags = np.abs(np.fft.rfft(x[idx] * window, axis=1))
    return Spectrogram(mags, frame, hop, w.sample_rate, channel)


def mel_filterbank(bands: int, bins: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filters over [0, fs/2], each row normalized to sum 1."""
    if bands < 2:
        raise ValueError("need at least 2 mel bands")

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    nyquist = sample_rate / 2.0
    mel_points = np.linspace(0.0, to_mel(nyquist), bands + 2)
    hz_points = from_mel(mel_points)
    bin_freqs = np.linspace(0.0, nyquist, bins)
    bank = np.zeros((bands, bins))
    for b in range(bands):
        lo, mid, hi = hz_points[b], hz_points[b + 1], hz_points[b + 2]
        up = (bin_freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - bin_freqs) / max(hi - mid, 1e-9)
        bank[b] = np.clip(np.minimum(up, down), 0.0, None)
        s = bank[b].sum()
        if s > 0:
            bank[b] /= s
        else:
            # triangle narrower than a bin: collapse onto the nearest bin
            bank[b, int(np.argmin(np.abs(bin_freqs - mid)))] = 1.0
    return bank


def mel_spectrogram(s: Spectrogram, bands: int = DEFAULT_MEL_BANDS) -> MelSpectrogram:
    """Log mel energies of a magnitude spectrogram (power-domain filters)."""
    bank = mel_filterbank(bands, s.bins, s.sample_rate)
    power = s.magnitudes ** 2
    energies = np.log(np.maximum(power @ bank.T, LOG_FLOOR))
    return MelSpectrogram(energies, bands, s.sample_rate)


def _mono_power_spectrum(frame: BinauralFrame):
    mono = 0.5 * (frame.left.samples + frame.right.samples)
    spectrum = np.abs(np.fft.rfft(mono)) ** 2
    freqs = np.fft.rfftfreq(len(mono), 1.0 / SAMPLE_RATE)
    return spectrum, freqs


def direction_features(frame: BinauralFrame) -> AudioFeatures:
    """Interaural cues plus per-band energy summary of a binaural window.

    The delay is the lag (in samples, within the physically possible
    +-MAX_ITD_LAG) that best aligns the right channel onto the left one.
    """
    left = frame.left.samples
    right = frame.right.samples
    e_left = float(np.sum(left ** 2))
    e_right = float(np.sum(right ** 2))

    delay, delay_valid = 0, True
    if e_left < 1e-12 and e_right < 1e-12:
        delay_valid = False
    else:
        best = -math.inf
        n = len(left)
        for lag in range(-MAX_ITD_LAG, MAX_ITD_LAG + 1):
            if lag >= 0:
                c = float(np.dot(left[:n - lag], right[lag:]))
            else:
                c = float(np.dot(left[-lag:], right[:n + lag]))
            if c > best:
                best, delay = c, lag
    ild = 10.0 * math.log10((e_left + 1e-12) / (e_right + 1e-12))

    spectrum, freqs = _mono_power_spectrum(frame)
    total = float(spectrum.sum())
    band_energies = np.zeros(len(BAND_CENTERS_HZ))
    for b in range(len(BAND_CENTERS_HZ)):
        mask = (freqs >= BAND_EDGES_HZ[b]) & (freqs < BAND_EDGES_HZ[b + 1] + 1e-9)
        band_energies[b] = float(spectrum[mask].sum())
    if total > 0:
        centroid = float(np.sum(freqs * spectrum) / total)
        positive = spectrum[spectrum > 0]
        flatness = float(np.exp(np.mean(np.log(positive))) / np.mean(spectrum)) if len(positive) else 0.0
    else:
        centroid, flatness = 0.0, 0.0
    return AudioFeatures(ild, delay, band_energies, centroid,
                         min(max(flatness, 0.0), 1.0), delay_valid)


def spectral_flatness(w: Waveform, frame: int = DEFAULT_FRAME,
                      hop: int = DEFAULT_HOP, active_rel: float = 1e-6) -> float:
    """Geometric-to-arithmetic mean ratio of the frame-averaged (Welch)
    power spectrum over the active band, i.e. bins within ``active_rel`` of
    the peak. Restricting to active bins keeps band-limited noise flatter
    than gated tones, which would otherwise win on leakage floor alone."""
    spec = stft(w, frame, hop)
    power = np.mean(spec.magnitudes ** 2, axis=0)
    active = power[power >= active_rel * max(power.max(), 1e-20)]
    if len(active) == 0:
        return 0.0
    return float(np.exp(np.mean(np.log(active))) / np.mean(active))


def range_scan(scene: Scene, position, heading: float, ray_count: int = 64,
               fov: float = math.pi / 2.0, max_range: float = 5.0,
               grid: OccupancyGrid | None = None,
               step: float | None = None) -> RangeScan:
    """Ray-marched distances over the occupancy grid; unobstructed rays
    return max_range. Cells outside the grid do not obstruct.
    """
    if grid is None:
        grid = build_occupancy_grid(scene)
    step = step or grid.cell_size / 4.0
    angles = heading + np.linspace(-fov / 2.0, fov / 2.0, ray_count)
    distances = np.arange(step, max_range + step, step)
    px = position[0] + np.outer(np.cos(angles), distances)
    py = position[1] + np.outer(np.sin(angles), distances)
    ci = np.floor((px - grid.origin[0]) / grid.cell_size).astype(int)
    cj = np.floor((py - grid.origin[1]) / grid.cell_size).astype(int)
    inside = ((ci >= 0) & (ci < grid.shape[0]) & (cj >= 0) & (cj < grid.shape[1]))
    blocked = np.zeros_like(inside)
    blocked[inside] = grid.blocked[ci[inside], cj[inside]]
    ranges = np.full(ray_count, max_range)
    for r in range(ray_count):
        hits = np.nonzero(blocked[r])[0]
        if len(hits):
            ranges[r] = distances[hits[0]]
    return RangeScan(ranges, max_range, fov)


# ---------------------------------------------------------------------------
# Sound category classifier
# ---------------------------------------------------------------------------

class CategoryClassifier:
    """Nearest-centroid classifier over time-averaged mel vectors.

    Features are square-root-compressed linear mel powers, L2-normalized,
    so superimposed sources stay near the subspace spanned by their
    components (log compression would not). fit() consumes the train split
    of a sound bank; predictions are deterministic given the centroids.
    """

    def __init__(self, bands: int = DEFAULT_MEL_BANDS,
                 frame: int = DEFAULT_FRAME, hop: int = DEFAULT_HOP):
        self.bands = bands
        self.frame = frame
        self.hop = hop
        self.labels_: list[str] | None = None
        self.centroids_: np.ndarray | None = None
        self.scale_: float = 1.0

    @staticmethod
    def _compress(mel_power: np.ndarray) -> np.ndarray:
        v = np.sqrt(np.maximum(mel_power, 0.0))
        return v / (np.linalg.norm(v) + 1e-20)

    def featurize(self, w: Waveform) -> np.ndarray:
        spec = stft(w, self.frame, self.hop)
        bank = mel_filterbank(self.bands, spec.bins, spec.sample_rate)
        mel_power = (spec.magnitudes ** 2 @ bank.T).mean(axis=0)
        return self._compress(mel_power)

    def vector_of(self, x) -> np.ndarray:
        if isinstance(x, Waveform):
            return self.featurize(x)
        if isinstance(x, MelSpectrogram):
            # stored log energies: invert the compression back to power
            return self._compress(np.exp(x.mel_energies).mean(axis=0))
        return np.asarray(x, dtype=float)

    def fit(self, bank, split: str = "train") -> "CategoryClassifier":
        by_label: dict[str, list[np.ndarray]] = {}
        for clip in bank.clips(split=split):
            by_label.setdefault(clip.category, []).append(self.featurize(clip.waveform))
        self.labels_ = sorted(by_label)
        self.centroids_ = np.stack([np.mean(by_label[c], axis=0) for c in self.labels_])
        # confidence scale from the training margin between best and runner-up
        margins = []
        for vecs in by_label.values():
            for v in vecs:
                d2 = np.sum((self.centroids_ - v) ** 2, axis=1)
                best, second = np.partition(d2, 1)[:2]
                margins.append(second - best)
        self.scale_ = max(float(np.median(margins)) / 6.0, 1e-9)
        return self

    def _check_fitted(self):
        if self.centroids_ is None:
            raise Unfitted("classifier has not been fitted")

    def scores(self, x, exclude: str | None = None) -> dict[str, float]:
        """Softmax-style confidence per category from centroid distances."""
        self._check_fitted()
        v = self.vector_of(x)
        d2 = np.sum((self.centroids_ - v) ** 2, axis=1)
        logits = -(d2 - d2.min()) / self.scale_
        labels = list(self.labels_)
        if exclude is not None and exclude in labels:
            keep = [i for i, c in enumerate(labels) if c != exclude]
            logits = logits[keep]
            labels = [labels[i] for i in keep]
        weights = np.exp(logits - logits.max())
        probs = weights / weights.sum()
        return dict(zip(labels, probs.tolist()))

    def predict(self, x, exclude: str | None = None) -> tuple[str, float]:
        scores = self.scores(x, exclude=exclude)
        category = max(scores, key=scores.get)
        return category, scores[category]

    def ranked(self, x, exclude: str | None = None) -> list[tuple[str, float]]:
        scores = self.scores(x, exclude=exclude)
        return sorted(scores.items(), key=lambda kv: -kv[1])

    def to_json(self) -> str:
        self._check_fitted()
        return json.dumps({
            "bands": self.bands, "frame": self.frame, "hop": self.hop,
            "labels": self.labels_, "scale": self.scale_,
            "centroids": self.centroids_.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CategoryClassifier":
        doc = json.loads(text)
        clf = cls(doc["bands"], doc["frame"], doc["hop"])
        clf.labels_ = doc["labels"]
        clf.centroids_ = np.asarray(doc["centroids"])
        clf.scale_ = doc["scale"]
        return clf
