"""Geometry-aware 2D acoustics: image-source impulse responses, convolution,
multi-source superposition, and two-ear rendering.

An impulse response is synthesized by mirroring the source across wall
segments recursively. Each surviving image contributes one tap, delayed by
round(d / c * fs) samples and attenuated by 1/max(d, 0.1) times
sqrt(1 - absorption) per reflecting wall. A path leg that crosses some other
wall is scaled by sqrt(transmission) of that wall, so a fully opaque wall
(transmission 0) occludes the contribution entirely. Materials carry four
frequency bands; a single band, chosen per source clip, is applied as a
broadband scalar. Door leaves are acoustically transparent: only
``scene.walls`` reflect, which keeps cached responses valid as doors move.
"""

from __future__ import annotations

import math
import struct
import threading
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import OutOfBounds, RateMismatch, SilentRIR
from .world import Scene, WallSegment

SPEED_OF_SOUND = 343.0
SAMPLE_RATE = 16000
BAND_CENTERS_HZ = (125.0, 500.0, 2000.0, 8000.0)
DEFAULT_BAND = 1
DISTANCE_FLOOR = 0.1            # meters; avoids the 1/d singularity
DEFAULT_MAX_ORDER = 3
DEFAULT_MAX_LENGTH = 0.5        # seconds
HEAD_WIDTH = 0.18               # meters between the two ear receivers

_AMP_EPS = 1e-12
_GEOM_EPS = 1e-9


@dataclass
class Waveform:
    """Mono sample buffer. Finite samples only; source clips are normalized
    to [-1, 1] at synthesis and binaural output is hard-clipped, but
    intermediate convolution results may exceed that range.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ImpulseResponse:
    taps: np.ndarray
    sample_rate: int
    source_pos: tuple[float, float]
    ear_pos: tuple[float, float]

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)

    def energy(self) -> float:
        return float(np.sum(self.taps ** 2))

    @property
    def duration(self) -> float:
        return len(self.taps) / self.sample_rate


@dataclass(frozen=True)
class EarGeometry:
    """Two point receivers astride the base, perpendicular to heading.
    Positive offset is the agent's left.
    """

    head_width: float = HEAD_WIDTH
    left_offset: float = HEAD_WIDTH / 2.0
    right_offset: float = -HEAD_WIDTH / 2.0

    def __post_init__(self):
        if self.head_width <= 0:
            raise ValueError("head width must be positive")

    def positions(self, base: tuple[float, float], heading: float):
        px, py = -math.sin(heading), math.cos(heading)   # unit left vector
        left = (base[0] + self.left_offset * px, base[1] + self.left_offset * py)
        right = (base[0] + self.right_offset * px, base[1] + self.right_offset * py)
        return left, right


@dataclass
class BinauralFrame:
    left: Waveform
    right: Waveform
    duration: float
    clipped: bool = False

    def __post_init__(self):
        if len(self.left) != len(self.right):
            raise ValueError("binaural channels must have equal length")

    def stereo(self) -> np.ndarray:
        return np.stack([self.left.samples, self.right.samples], axis=1)


# ---------------------------------------------------------------------------
# Image-source method
# ---------------------------------------------------------------------------

def _mirror(p, wall: WallSegment):
    """Reflect a point across the wall's supporting line (walls are
    axis-aligned)."""
    if math.isclose(wall.start[0], wall.end[0]):
        return (2.0 * wall.start[0] - p[0], p[1])
    return (p[0], 2.0 * wall.start[1] - p[1])


def _segment_param_intersection(a, b, c, d):
    """Parameters (t, u) of the crossing of segments a-b and c-d, or None."""
    r = (b[0] - a[0], b[1] - a[1])
    s = (d[0] - c[0], d[1] - c[1])
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < _GEOM_EPS:
        return None
    qp = (c[0] - a[0], c[1] - a[1])
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    if -_GEOM_EPS <= t <= 1.0 + _GEOM_EPS and -_GEOM_EPS <= u <= 1.0 + _GEOM_EPS:
        return t, u
    return None


def _transmission_factor(a, b, walls, materials, band, skip):
    """sqrt(transmission) product over walls properly crossed by leg a-b.

    ``skip`` holds wall indices whose surface the leg starts or ends on
    (reflection points); crossings at the very endpoints are ignored.
    """
    factor = 1.0
    for wi, wall in enumerate(walls):
        if wi in skip:
            continue
        hit = _segment_param_intersection(a, b, wall.start, wall.end)
        if hit is None:
            continue
        t, _ = hit
        if t < 1e-6 or t > 1.0 - 1e-6:
            continue
        tau = materials[wall.material].transmission[band]
        if tau <= 0.0:
            return 0.0
        factor *= math.sqrt(tau)
    return factor


def _trace_path(seq, images, source, ear, walls, materials, band):
    """Validate one image sequence and return (distance, amplitude_factor).

    Walks backwards from the ear: each leg must hit the corresponding finite
    wall segment. Returns None for geometrically invalid sequences.
    """
    point = ear
    factor = 1.0
    prev_wall = None
    for k in range(len(seq) - 1, -1, -1):
        wall = walls[seq[k]]
        hit = _segment_param_intersection(point, images[k], wall.start, wall.end)
        if hit is None:
            return None
        t, _ = hit
        refl = (point[0] + t * (images[k][0] - point[0]),
                point[1] + t * (images[k][1] - point[1]))
        alpha = materials[wall.material].absorption[band]
        factor *= math.sqrt(max(0.0, 1.0 - alpha))
        skip = {seq[k]} if prev_wall is None else {seq[k], prev_wall}
        factor *= _transmission_factor(point, refl, walls, materials, band, skip)
        if factor < _AMP_EPS:
            return None
        point = refl
        prev_wall = seq[k]
    factor *= _transmission_factor(point, source, walls, materials, band,
                                   {prev_wall} if prev_wall is not None else set())
    if factor < _AMP_EPS:
        return None
    distance = math.dist(ear, images[-1]) if seq else math.dist(ear, source)
    return distance, factor


def compute_rir(scene: Scene, source_pos, ear_pos,
                max_order: int = DEFAULT_MAX_ORDER,
                max_length: float = DEFAULT_MAX_LENGTH,
                band: int = DEFAULT_BAND,
                sample_rate: int = SAMPLE_RATE) -> ImpulseResponse:
    """Impulse response from a source to one ear via the image-source method.

    Contains the direct path plus every valid specular reflection up to
    ``max_order``, truncated at ``max_length`` seconds. Raises OutOfBounds
    when either endpoint leaves the scene.
    """
    if not scene.contains(source_pos) or not scene.contains(ear_pos):
        raise OutOfBounds(f"source {source_pos} or ear {ear_pos} outside {scene.bounds}")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")

    walls = scene.walls
    materials = scene.materials
    n_taps = int(round(max_length * sample_rate))
    acc: dict[int, float] = {}

    def add(seq, images):
        traced = _trace_path(seq, images, source_pos, ear_pos, walls, materials, band)
        if traced is None:
            return
        distance, factor = traced
        delay = int(round(distance / SPEED_OF_SOUND * sample_rate))
        if delay >= n_taps:
            return
        amp = factor / max(distance, DISTANCE_FLOOR)
        if abs(amp) < _AMP_EPS:
            return
        acc[delay] = acc.get(delay, 0.0) + amp

    add([], [])

    def expand(seq, images, pos):
        if len(seq) >= max_order:
            return
        for wi, wall in enumerate(walls):
            if seq and seq[-1] == wi:
                continue
            img = _mirror(pos, wall)
            if math.dist(img, pos) < _GEOM_EPS:
                continue        # source on the wall plane: degenerate image
            add(seq + [wi], images + [img])
            expand(seq + [wi], images + [img], img)

    expand([], [], source_pos)

    if acc:
        taps = np.zeros(max(acc) + 1)
        for delay, amp in acc.items():
            taps[delay] = amp
    else:
        taps = np.zeros(0)
    return ImpulseResponse(taps, sample_rate, tuple(source_pos), tuple(ear_pos))


def convolve(source: Waveform, rir: ImpulseResponse) -> Waveform:
    """Exact discrete linear convolution (length N + M - 1)."""
    if source.sample_rate != rir.sample_rate:
        raise RateMismatch(f"{source.sample_rate} Hz source vs {rir.sample_rate} Hz RIR")
    if len(rir.taps) == 0:
        return Waveform(np.zeros(max(len(source) - 1, 0) + 1), source.sample_rate)
    out = fftconvolve(source.samples, rir.taps)
    return Waveform(out, source.sample_rate)


def render_binaural(scene: Scene, active_sources, agent,
                    ears: EarGeometry = EarGeometry(),
                    max_order: int = DEFAULT_MAX_ORDER,
                    max_length: float = DEFAULT_MAX_LENGTH,
                    window_length: int | None = None,
                    rir_fn=None) -> BinauralFrame:
    """Sum of per-source convolutions at each ear, trimmed to the window.

    ``active_sources`` is a list of (ObjectInstance, Waveform, band) triples;
    every instance must currently be emitting. An empty source set yields
    silence of ``window_length`` samples. Samples beyond [-1, 1] are
    hard-clipped and flagged. ``rir_fn`` (same signature as compute_rir)
    lets callers inject a cache.
    """
    if rir_fn is None:
        rir_fn = compute_rir
    left_pos, right_pos = ears.positions(agent.base_position, agent.heading)
    length = window_length or max((len(w) for _, w, _ in active_sources), default=0)
    mix_l, mix_r = np.zeros(length), np.zeros(length)
    for obj, window, band in active_sources:
        if not obj.emitting:
            raise ValueError(f"source {obj.id} is not emitting")
        for ear_pos, mix in ((left_pos, mix_l), (right_pos, mix_r)):
            rir = rir_fn(scene, obj.position, ear_pos,
                         max_order=max_order, max_length=max_length, band=band)
            wet = convolve(window, rir).samples[:length]
            mix[:len(wet)] += wet
    clipped = bool(np.any(np.abs(mix_l) > 1.0) or np.any(np.abs(mix_r) > 1.0))
    left = Waveform(np.clip(mix_l, -1.0, 1.0))
    right = Waveform(np.clip(mix_r, -1.0, 1.0))
    return BinauralFrame(left, right, length / SAMPLE_RATE, clipped)


def rt60_estimate(rir: ImpulseResponse) -> float:
    """Reverberation time from Schroeder backward integration of tap energy:
    seconds until the decay curve drops 60 dB; the full duration if it never
    does.
    """
    energy = rir.taps ** 2
    total = float(energy.sum())
    if total <= 0.0:
        raise SilentRIR("impulse response has zero energy")
    # energy remaining strictly after each tap: a lone tap decays instantly
    decay = (total - np.cumsum(energy)) / total
    below = np.nonzero(decay < 1e-6)[0]        # -60 dB in energy
    if len(below) == 0:
        return rir.duration
    return float(below[0]) / rir.sample_rate


# ---------------------------------------------------------------------------
# WAV import/export (RIFF/WAVE, PCM 16-bit little-endian, 16 kHz)
# ---------------------------------------------------------------------------

def save_wav(path, data, sample_rate: int = SAMPLE_RATE):
    """Write mono (Waveform) or stereo interleaved (BinauralFrame) PCM16."""
    if isinstance(data, BinauralFrame):
        pcm = data.stereo()
        channels = 2
    elif isinstance(data, Waveform):
        pcm = data.samples[:, None]
        channels = 1
        sample_rate = data.sample_rate
    else:
        pcm = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if pcm.shape[0] in (1, 2) and pcm.shape[0] < pcm.shape[1]:
            pcm = pcm.T
        channels = pcm.shape[1]
    ints = np.clip(np.round(pcm * 32767.0), -32768, 32767).astype("<i2")
    dest = path if hasattr(path, "write") else str(path)
    with wave.open(dest, "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(ints.tobytes())


def load_wav(path):
    """Read PCM16 WAV; returns (samples ndarray [n] or [n, 2], sample_rate)."""
    with wave.open(str(path), "rb") as fh:
        channels = fh.getnchannels()
        rate = fh.getframerate()
        if fh.getsampwidth() != 2:
            raise ValueError("only PCM 16-bit WAV supported")
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    if channels == 2:
        data = data.reshape(-1, 2)
    return data, rate


# ---------------------------------------------------------------------------
# RIR cache (concurrent read, single-writer insert) and its binary format
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"RIRC"
_CACHE_VERSION = 1
_POS_QUANTUM = 1e-6     # cache cell size: positions quantized to 1 um


def _quantize(p) -> tuple[int, int]:
    return (int(round(p[0] / _POS_QUANTUM)), int(round(p[1] / _POS_QUANTUM)))


@dataclass
class RirCache:
    """Keyed by (scene hash, quantized source cell, quantized ear cell, band,
    order). Reads are lock-free on the underlying dict; inserts serialize.
    """

    scene: Scene
    max_order: int = DEFAULT_MAX_ORDER
    max_length: float = DEFAULT_MAX_LENGTH
    _store: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        self._scene_hash = self.scene.scene_hash()

    def __call__(self, scene, source_pos, ear_pos, max_order=None,
                 max_length=None, band=DEFAULT_BAND):
        key = (_quantize(source_pos), _quantize(ear_pos), band,
               max_order or self.max_order)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        rir = compute_rir(scene, source_pos, ear_pos,
                          max_order=max_order or self.max_order,
                          max_length=max_length or self.max_length, band=band)
        with self._lock:
            self._store.setdefault(key, rir)
        return rir

    def __len__(self):
        return len(self._store)

    def save(self, path):
        """Persist as little-endian binary: magic, version, scene-hash,
        entry count, then per entry the key fields, tap count, float32 taps.
        """
        with open(path, "wb") as fh:
            fh.write(_CACHE_MAGIC)
            fh.write(struct.pack("<I", _CACHE_VERSION))
            fh.write(bytes.fromhex(self._scene_hash))
            fh.write(struct.pack("<I", len(self._store)))
            for (src, ear, band, order), rir in self._store.items():
                fh.write(struct.pack("<qqqqII", src[0], src[1], ear[0], ear[1],
                                     band, order))
                taps = rir.taps.astype("<f4")
                fh.write(struct.pack("<I", len(taps)))
                fh.write(taps.tobytes())

    @classmethod
    def load(cls, path, scene: Scene, **kwargs) -> "RirCache":
        cache = cls(scene, **kwargs)
        with open(path, "rb") as fh:
            if fh.read(4) != _CACHE_MAGIC:
                raise ValueError("not a RIR cache file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _CACHE_VERSION:
                raise ValueError(f"unsupported cache version {version}")
            stored_hash = fh.read(32).hex()
            if stored_hash != cache._scene_hash:
                raise ValueError("cache was built for a different scene")
            (count,) = struct.unpack("<I", fh.read(4))
            for _ in range(count):
                sx, sy, ex, ey, band, order = struct.unpack("<qqqqII", fh.read(40))
                (n,) = struct.unpack("<I", fh.read(4))
                taps = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64)
                src = (sx * _POS_QUANTUM, sy * _POS_QUANTUM)
                ear = (ex * _POS_QUANTUM, ey * _POS_QUANTUM)
                cache._store[((sx, sy), (ex, ey), band, order)] = ImpulseResponse(
                    taps, SAMPLE_RATE, src, ear)
        return cache
