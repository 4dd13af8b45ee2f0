import math

import numpy as np
import pytest

from deskecho.acoustics import SAMPLE_RATE, BinauralFrame, Waveform, render_binaural
from deskecho.errors import TooShort, Unfitted
from deskecho.perception import (MAX_ITD_LAG, CategoryClassifier,
                                 direction_features, mel_filterbank,
                                 mel_spectrogram, range_scan, stft)
from deskecho.world import (AgentState, MaterialProperties, ObjectInstance,
                            Scene, WallSegment, build_occupancy_grid)

FS = SAMPLE_RATE
MAT = MaterialProperties((0.1,) * 4, (0.1,) * 4)


class TestStft:
    def test_pure_tone_peaks_at_expected_bin(self):
        t = np.arange(FS) / FS
        w = Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t))
        spec = stft(w)
        assert spec.bins == 257
        peaks = spec.magnitudes.argmax(axis=1)
        assert np.all(peaks == round(1000 * 512 / FS))

    def test_zero_input_zero_magnitudes(self):
        spec = stft(Waveform(np.zeros(4096)))
        assert not spec.magnitudes.any()

    def test_too_short_raises(self):
        with pytest.raises(TooShort):
            stft(Waveform(np.zeros(100)))

    def test_parseval_per_frame(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=FS)
        frame, hop = 512, 160
        spec = stft(Waveform(x), frame, hop)
        window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame)
        for i in range(0, spec.magnitudes.shape[0], 17):
            seg = x[i * hop: i * hop + frame] * window
            mags = spec.magnitudes[i]
            # rfft double-counts interior bins
            lhs = (mags[0] ** 2 + mags[-1] ** 2 + 2 * np.sum(mags[1:-1] ** 2)) / frame
            rhs = np.sum(seg ** 2)
            assert lhs == pytest.approx(rhs, rel=1e-6)

    def test_frame_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            stft(Waveform(np.zeros(4096)), frame=500)


class TestMel:
    def test_rows_normalized_to_unit_sum(self):
        for bands in (16, 64, 128):
            bank = mel_filterbank(bands, 257)
            sums = bank.sum(axis=1)
            assert np.all(sums >= 0.99) and np.all(sums <= 1.01)

    def test_flat_spectrum_gives_equal_bands(self):
        from deskecho.perception import Spectrogram
        flat = Spectrogram(np.ones((4, 257)), 512, 160)
        mel = mel_spectrogram(flat, bands=32)
        energies = np.exp(mel.mel_energies[0])
        assert np.max(energies) / np.min(energies) < 1.01

    def test_single_bin_excites_only_covering_bands(self):
        from deskecho.perception import Spectrogram
        mags = np.zeros((1, 257))
        mags[0, 32] = 1.0                      # 1 kHz bin
        mel = mel_spectrogram(Spectrogram(mags, 512, 160), bands=64)
        active = np.nonzero(mel.mel_energies[0] > math.log(1e-10) + 1e-9)[0]
        bank = mel_filterbank(64, 257)
        covering = np.nonzero(bank[:, 32] > 0)[0]
        assert set(active) == set(covering)
        assert 1 <= len(active) <= 2

    def test_doubling_magnitudes_shifts_log_by_log4(self):
        rng = np.random.default_rng(1)
        from deskecho.perception import Spectrogram
        mags = rng.uniform(0.5, 1.0, size=(3, 257))
        a = mel_spectrogram(Spectrogram(mags, 512, 160), 32)
        b = mel_spectrogram(Spectrogram(2 * mags, 512, 160), 32)
        assert np.allclose(b.mel_energies - a.mel_energies, math.log(4.0))

    def test_band_floor_requires_two(self):
        with pytest.raises(ValueError):
            mel_filterbank(1, 257)


def _frame(left, right):
    return BinauralFrame(Waveform(left), Waveform(right), len(left) / FS)


class TestDirectionFeatures:
    def test_identical_channels(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-0.5, 0.5, size=FS)
        feats = direction_features(_frame(x, x.copy()))
        assert feats.interaural_delay == 0
        assert feats.interaural_level_db == pytest.approx(0.0, abs=1e-9)

    def test_right_delayed_copy_gives_positive_delay(self):
        # right lags left by 8 samples: the source is on the LEFT, and the
        # fixed sign convention makes the reported delay positive
        rng = np.random.default_rng(3)
        x = rng.uniform(-0.5, 0.5, size=FS)
        right = np.concatenate([np.zeros(8), x[:-8]])
        feats = direction_features(_frame(x, right))
        assert feats.interaural_delay == 8

    def test_left_delayed_copy_gives_negative_delay(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-0.5, 0.5, size=FS)
        left = np.concatenate([np.zeros(6), x[:-6]])
        feats = direction_features(_frame(left, x))
        assert feats.interaural_delay == -6

    def test_silence_flags_delay_invalid(self):
        feats = direction_features(_frame(np.zeros(1024), np.zeros(1024)))
        assert not feats.delay_valid and feats.interaural_delay == 0

    def test_rendered_sources_at_plus_minus_90(self, free_field_scene):
        t = np.arange(FS) / FS
        window = Waveform(0.4 * np.sin(2 * np.pi * 700 * t))
        agent = AgentState((5.0, 5.0), 0.0)
        cases = [((5.0, 8.0), 1), ((5.0, 2.0), -1)]   # left then right of heading
        for pos, sign in cases:
            obj = ObjectInstance("s", "Phone", "rigid", pos,
                                 sound_clip="c", emitting=True)
            frame = render_binaural(free_field_scene, [(obj, window, 1)],
                                    agent, max_order=0)
            feats = direction_features(frame)
            assert np.sign(feats.interaural_delay) == sign
            assert np.sign(feats.interaural_level_db) == sign
            assert abs(abs(feats.interaural_delay)
                       - round(0.18 / 343.0 * FS)) <= 1

    def test_delay_bounded_by_head_geometry(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            l = rng.uniform(-0.5, 0.5, size=2048)
            r = rng.uniform(-0.5, 0.5, size=2048)
            feats = direction_features(_frame(l, r))
            assert abs(feats.interaural_delay) <= MAX_ITD_LAG


class TestRangeScan:
    def test_empty_scene_max_range(self):
        scene = Scene("s", (0, 0, 20, 20), 0.25, {"m": MAT})
        scan = range_scan(scene, (10.0, 10.0), 0.0, ray_count=32, max_range=5.0)
        assert np.all(scan.ranges == 5.0)

    def test_wall_ahead_within_cell_tolerance(self):
        scene = Scene("s", (0, 0, 10, 10), 0.25, {"m": MAT},
                      walls=(WallSegment((7.0, 0.0), (7.0, 10.0), "m"),))
        scan = range_scan(scene, (5.0, 5.0), 0.0, ray_count=3,
                          fov=math.radians(4.0), max_range=5.0)
        assert scan.ranges[1] == pytest.approx(2.0, abs=scene.cell_size)

    def test_mirror_symmetry(self):
        # cell-aligned wall ends keep the mirrored grids exactly symmetric
        scene = Scene("s", (0, 0, 10, 10), 0.25, {"m": MAT},
                      walls=(WallSegment((7.0, 2.0), (7.0, 4.0), "m"),))
        mirrored = Scene("s2", (0, 0, 10, 10), 0.25, {"m": MAT},
                         walls=(WallSegment((7.0, 6.0), (7.0, 8.0), "m"),))
        a = range_scan(scene, (5.0, 5.0), 0.0, ray_count=33)
        b = range_scan(mirrored, (5.0, 5.0), 0.0, ray_count=33)
        assert np.allclose(a.ranges, b.ranges[::-1])

    def test_accepts_prebuilt_grid(self):
        scene = Scene("s", (0, 0, 10, 10), 0.25, {"m": MAT})
        grid = build_occupancy_grid(scene)
        scan = range_scan(scene, (5.0, 5.0), 0.0, grid=grid)
        assert len(scan.ranges) == 64


class TestClassifier:
    def test_unfitted_raises(self):
        with pytest.raises(Unfitted):
            CategoryClassifier().predict(np.zeros(64))

    def test_train_resubstitution_confident(self, bank, classifier):
        for clip in bank.clips(category="Alarm", split="train"):
            cat, conf = classifier.predict(clip.waveform)
            assert cat == "Alarm" and conf > 0.9

    def test_heldout_accuracy_gate(self, bank, classifier):
        test = bank.clips(split="test")
        hits = sum(classifier.predict(c.waveform)[0] == c.category for c in test)
        assert hits / len(test) >= 0.95

    def test_mixture_top2(self, bank, classifier):
        import itertools
        rng = np.random.default_rng(6)
        cats = ["Alarm", "Furby", "Phone", "Sink", "Doorbell"]
        for a, b in itertools.combinations(cats, 2):
            la = bank.clips(category=a, split="test")
            lb = bank.clips(category=b, split="test")
            ca, cb = la[int(rng.integers(len(la)))], lb[int(rng.integers(len(lb)))]
            mix = Waveform(0.5 * (ca.waveform.samples + cb.waveform.samples))
            ranked = classifier.ranked(mix)
            assert {ranked[0][0], ranked[1][0]} == {a, b}

    def test_exclude_masks_category(self, bank, classifier):
        clip = bank.clips(category="Alarm", split="test")[0]
        cat, _ = classifier.predict(clip.waveform, exclude="Alarm")
        assert cat != "Alarm"

    def test_deterministic(self, bank, classifier):
        clip = bank.clips(category="Sink", split="test")[0]
        a = classifier.predict(clip.waveform)
        b = classifier.predict(clip.waveform)
        assert a == b

    def test_json_round_trip(self, bank, classifier):
        clone = CategoryClassifier.from_json(classifier.to_json())
        clip = bank.clips(category="Furby", split="test")[0]
        assert clone.predict(clip.waveform) == classifier.predict(clip.waveform)
