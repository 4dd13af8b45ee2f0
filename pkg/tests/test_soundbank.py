import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskecho.acoustics import SAMPLE_RATE
from deskecho.perception import spectral_flatness
from deskecho.soundbank import (BANK_COUNTS, CATEGORIES, SoundBank,
                                synthesize_bank, window_of)

EXPECTED_COUNTS = {
    ("Alarm", "train"): 11, ("Alarm", "test"): 5,
    ("Furby", "train"): 30, ("Furby", "test"): 14,
    ("Phone", "train"): 19, ("Phone", "test"): 9,
    ("Sink", "train"): 6, ("Sink", "test"): 3,
    ("Doorbell", "train"): 11, ("Doorbell", "test"): 5,
}


class TestBankComposition:
    def test_cell_counts(self, bank):
        for (cat, split), n in EXPECTED_COUNTS.items():
            assert len(bank.clips(category=cat, split=split)) == n
        assert len(bank.clips(split="train")) == 77
        assert len(bank.clips(split="test")) == 36
        assert len(bank) == 113

    def test_counts_table_matches_module_constant(self):
        assert BANK_COUNTS == EXPECTED_COUNTS

    def test_same_seed_bit_identical(self):
        a = synthesize_bank(123)
        b = synthesize_bank(123)
        assert len(a) == len(b)
        for ca, cb in zip(a, b):
            assert ca.clip_id == cb.clip_id
            assert ca.params == cb.params
            assert np.array_equal(ca.waveform.samples, cb.waveform.samples)

    def test_different_seed_differs(self):
        a = synthesize_bank(0)
        b = synthesize_bank(1)
        assert any(not np.array_equal(x.waveform.samples, y.waveform.samples)
                   for x, y in zip(a, b))

    def test_parameter_sets_disjoint_across_splits(self, bank):
        for cat in CATEGORIES:
            train = {tuple(sorted(c.params.items()))
                     for c in bank.clips(category=cat, split="train")}
            test = {tuple(sorted(c.params.items()))
                    for c in bank.clips(category=cat, split="test")}
            assert not train & test

    def test_peak_normalized(self, bank):
        for clip in bank:
            assert np.max(np.abs(clip.waveform.samples)) == pytest.approx(0.9)

    def test_all_clips_loop_and_are_long_enough(self, bank):
        for clip in bank:
            assert clip.loop
            assert clip.waveform.duration >= 1.0

    def test_sink_flatter_than_alarm_every_pair(self, bank):
        sinks = [spectral_flatness(c.waveform) for c in bank.clips(category="Sink")]
        alarms = [spectral_flatness(c.waveform) for c in bank.clips(category="Alarm")]
        for s, a in itertools.product(sinks, alarms):
            assert s > a

    def test_manifest_is_json_with_all_clips(self, bank):
        doc = json.loads(bank.manifest())
        assert doc["sample_rate"] == SAMPLE_RATE
        assert len(doc["clips"]) == 113
        row = doc["clips"][0]
        assert {"clip_id", "category", "split", "params"} <= set(row)

    def test_wav_export(self, bank, tmp_path):
        small = SoundBank([c for c in bank if c.category == "Sink"])
        small.export_wavs(tmp_path)
        assert len(list(tmp_path.glob("*.wav"))) == 9


class TestWindows:
    def test_prefix_window(self, bank):
        clip = bank.clips(category="Phone")[0]
        w = window_of(clip, 0, 1.0)
        assert np.array_equal(w.samples, clip.waveform.samples[:SAMPLE_RATE])

    def test_modular_wrap(self, bank):
        clip = bank.clips(category="Alarm")[0]      # 4 s long
        assert np.array_equal(window_of(clip, 4, 1.0).samples,
                              window_of(clip, 0, 1.0).samples)

    def test_window_tiling_matches_loop_unroll_oracle(self, bank):
        clip = bank.clips(category="Furby")[0]
        reps = int(np.ceil(6.0 / clip.waveform.duration)) + 1
        unrolled = np.tile(clip.waveform.samples, reps)[:4 * SAMPLE_RATE]
        tiled = np.concatenate([window_of(clip, t, 1.0).samples for t in range(4)])
        assert np.array_equal(tiled, unrolled)

    @given(t_step=st.integers(min_value=0, max_value=50),
           step_ms=st.sampled_from([250, 500, 1000, 1600]))
    @settings(max_examples=30, deadline=None)
    def test_windows_tile_without_gap_or_overlap(self, t_step, step_ms):
        bank = _session_bank()
        clip = bank.clips(category="Doorbell")[0]
        step = step_ms / 1000.0
        a = window_of(clip, t_step, step)
        b = window_of(clip, t_step + 1, step)
        n = len(clip.waveform.samples)
        spliced = np.concatenate([a.samples, b.samples])
        start = int(round(t_step * step * SAMPLE_RATE))
        expect = clip.waveform.samples[
            (start + np.arange(len(spliced))) % n]
        assert np.array_equal(spliced, expect)


_BANK_CACHE = {}


def _session_bank():
    if "bank" not in _BANK_CACHE:
        _BANK_CACHE["bank"] = SoundBank.build(0)
    return _BANK_CACHE["bank"]
