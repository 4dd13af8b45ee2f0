"""Builds per-step agent observations (binaural audio, range scans, nav
feature vectors) from a live world.
"""

from __future__ import annotations

import math

import numpy as np

from .acoustics import EarGeometry, BinauralFrame, render_binaural, SAMPLE_RATE
from .perception import (AudioFeatures, MAX_ITD_LAG, RangeScan,
                         direction_features, range_scan)
from .soundbank import window_of
from .world import World

DEFAULT_EARS = EarGeometry()
STEP_SECONDS = 1.0


def active_sources(world: World, step_seconds: float = STEP_SECONDS):
    """(object, clip window, material band) triples for emitting objects."""
    out = []
    for obj in world.objects.values():
        if not obj.emitting or obj.sound_clip is None:
            continue
        clip = world.bank.get(obj.sound_clip)
        window = window_of(clip, world.time_step, step_seconds)
        out.append((obj, window, clip.dominant_band))
    return out


def binaural_observation(world: World, ears: EarGeometry = DEFAULT_EARS,
                         rir_fn=None, step_seconds: float = STEP_SECONDS,
                         max_order: int | None = None) -> BinauralFrame:
    kwargs = {} if max_order is None else {"max_order": max_order}
    return render_binaural(world.scene, active_sources(world, step_seconds),
                           world.agent, ears=ears,
                           window_length=int(round(step_seconds * SAMPLE_RATE)),
                           rir_fn=rir_fn, **kwargs)


def agent_scan(world: World, ray_count: int = 64, fov: float = math.pi / 2.0,
               max_range: float = 5.0) -> RangeScan:
    return range_scan(world.scene, world.agent.base_position,
                      world.agent.heading, ray_count, fov, max_range,
                      grid=world.occupancy())


NAV_SCAN_RAYS = 8


def nav_feature_vector(features: AudioFeatures, scan: RangeScan) -> np.ndarray:
    """Flat observation for the Navigate policy: interaural cues, a linear
    received-level term (RMS tracks 1/distance, so goal proximity is
    linearly salient), total log energy plus band shares, and the scan.

    The total/share split keeps the distance cue stable when a sweeping
    source sloshes energy across band edges between windows."""
    # band energies are one-sided power-spectrum sums; Parseval gives
    # rms amplitude = sqrt(2 * sum) / N
    n_samples = int(STEP_SECONDS * SAMPLE_RATE)
    total = max(float(np.sum(features.band_energies)), 0.0)
    rms = math.sqrt(2.0 * total) / n_samples
    shares = features.band_energies / (total + 1e-12)
    return np.concatenate([
        [features.interaural_delay / MAX_ITD_LAG,
         math.tanh(features.interaural_level_db / 6.0),
         min(rms, 2.0),
         (math.log10(total + 1e-9) + 9.0) / 9.0],
        shares,
        scan.ranges / scan.max_range,
    ])


def nav_observation(world: World, rir_fn=None, max_order: int | None = None,
                    ray_count: int = NAV_SCAN_RAYS) -> np.ndarray:
    frame = binaural_observation(world, rir_fn=rir_fn, max_order=max_order)
    return nav_feature_vector(direction_features(frame),
                              agent_scan(world, ray_count=ray_count))


class NavObservationStack:
    """Nav observation with a short history of the interaural and level
    terms.

    A single binaural window cannot distinguish a source ahead from one
    behind (both give zero interaural cues); the recent loudness/delay
    trajectory breaks the tie. State resets per episode/skill run.
    """

    STACKED = (0, 1, 2)    # itd, ild, rms feature indices
    HISTORY = 3            # previous frames appended to the current one

    def __init__(self, rir_fn=None, max_order: int | None = None):
        self.rir_fn = rir_fn
        self.max_order = max_order
        self.history: list[np.ndarray] = []

    def reset(self):
        self.history = []

    def observe(self, world: World) -> np.ndarray:
        vec = nav_observation(world, rir_fn=self.rir_fn, max_order=self.max_order)
        current = vec[list(self.STACKED)]
        self.history.append(current)
        frames = self.history[-(self.HISTORY + 1):-1]
        while len(frames) < self.HISTORY:
            frames.insert(0, frames[0] if frames else current)
        return np.concatenate([vec] + frames[::-1])
