import math
import threading

import numpy as np
import pytest

from deskecho.acoustics import (DEFAULT_BAND, SAMPLE_RATE, SPEED_OF_SOUND,
                                BinauralFrame, EarGeometry, ImpulseResponse,
                                RirCache, Waveform, compute_rir, convolve,
                                load_wav, render_binaural, rt60_estimate,
                                save_wav)
from deskecho.errors import OutOfBounds, RateMismatch, SilentRIR
from deskecho.world import AgentState, MaterialProperties, ObjectInstance, Scene, WallSegment

C = SPEED_OF_SOUND
FS = SAMPLE_RATE


def schoolbook_convolve(x, h):
    out = np.zeros(len(x) + len(h) - 1)
    for i, xi in enumerate(x):
        for j, hj in enumerate(h):
            out[i + j] += xi * hj
    return out


def source(obj_id, pos, clip="c"):
    return ObjectInstance(obj_id, "Phone", "rigid", pos, sound_clip=clip,
                          emitting=True)


class TestComputeRir:
    def test_free_field_delay_and_amplitude(self, free_field_scene):
        rir = compute_rir(free_field_scene, (1.0, 5.0), (4.43, 5.0), max_order=0)
        idx = np.nonzero(rir.taps)[0]
        assert list(idx) == [160]          # 3.43 / 343 * 16000
        assert rir.taps[160] == pytest.approx(1.0 / 3.43)

    def test_order_zero_is_direct_path_only(self, box_room):
        rir = compute_rir(box_room, (1.0, 1.0), (3.0, 2.0), max_order=0)
        assert np.count_nonzero(rir.taps) == 1

    def test_first_order_images_match_hand_computed(self, box_room):
        rir = compute_rir(box_room, (1.0, 1.0), (3.0, 2.0), max_order=1)
        ear = (3.0, 2.0)
        images = [(-1.0, 1.0), (7.0, 1.0), (1.0, -1.0), (1.0, 5.0)]
        expected = {round(math.dist((1.0, 1.0), ear) / C * FS)}
        expected |= {round(math.dist(img, ear) / C * FS) for img in images}
        assert set(np.nonzero(rir.taps)[0]) == expected

    def test_delay_exactness_over_random_pairs(self, free_field_scene):
        rng = np.random.default_rng(0)
        for _ in range(200):
            src = tuple(rng.uniform(0.5, 9.5, size=2))
            ear = tuple(rng.uniform(0.5, 9.5, size=2))
            d = math.dist(src, ear)
            rir = compute_rir(free_field_scene, src, ear, max_order=0)
            nz = np.nonzero(rir.taps)[0]
            assert len(nz) == 1 and nz[0] == round(d / C * FS)

    def test_out_of_bounds_raises(self, free_field_scene):
        with pytest.raises(OutOfBounds):
            compute_rir(free_field_scene, (-1.0, 5.0), (2.0, 2.0))

    def test_reciprocity(self, box_room):
        a, b = (1.3, 1.1), (3.2, 2.4)
        fwd = compute_rir(box_room, a, b, max_order=3)
        rev = compute_rir(box_room, b, a, max_order=3)
        n = max(len(fwd.taps), len(rev.taps))
        f = np.pad(fwd.taps, (0, n - len(fwd.taps)))
        r = np.pad(rev.taps, (0, n - len(rev.taps)))
        assert np.allclose(f, r, atol=1e-12)

    def test_energy_monotone_in_absorption(self):
        def room(alpha):
            mat = MaterialProperties((alpha,) * 4, (0.0,) * 4)
            corners = [(0, 0), (4, 0), (4, 3), (0, 3)]
            walls = tuple(WallSegment(corners[k], corners[(k + 1) % 4], "m")
                          for k in range(4))
            return Scene("r", (0, 0, 4, 3), 0.25, {"m": mat}, walls=walls)

        energies = [compute_rir(room(a), (1, 1), (3, 2), max_order=3).energy()
                    for a in (0.1, 0.3, 0.6, 0.9)]
        assert all(e1 >= e2 for e1, e2 in zip(energies, energies[1:]))

    def test_opaque_wall_occludes_direct_path(self):
        mat = MaterialProperties((0.1,) * 4, (0.0,) * 4)
        scene = Scene("s", (0, 0, 6, 6), 0.25, {"m": mat},
                      walls=(WallSegment((3.0, 0.0), (3.0, 6.0), "m"),))
        rir = compute_rir(scene, (1.0, 3.0), (5.0, 3.0), max_order=0)
        assert np.count_nonzero(rir.taps) == 0

    def test_transmissive_wall_scales_direct_tap(self):
        tau = 0.36
        mat = MaterialProperties((0.1,) * 4, (tau,) * 4)
        scene = Scene("s", (0, 0, 6, 6), 0.25, {"m": mat},
                      walls=(WallSegment((3.0, 0.0), (3.0, 6.0), "m"),))
        rir = compute_rir(scene, (1.0, 3.0), (5.0, 3.0), max_order=0)
        d = 4.0
        idx = round(d / C * FS)
        assert rir.taps[idx] == pytest.approx(math.sqrt(tau) / d)

    def test_distance_floor(self, free_field_scene):
        rir = compute_rir(free_field_scene, (5.0, 5.0), (5.0, 5.0), max_order=0)
        assert rir.taps[0] == pytest.approx(1.0 / 0.1)


class TestConvolve:
    def test_unit_impulse_identity(self, box_room):
        rir = compute_rir(box_room, (1, 1), (3, 2))
        impulse = Waveform(np.eye(1, 64, 0)[0])
        out = convolve(impulse, rir)
        assert len(out) == 64 + len(rir.taps) - 1
        assert np.allclose(out.samples[:len(rir.taps)], rir.taps)

    def test_linearity(self, box_room):
        rng = np.random.default_rng(1)
        rir = compute_rir(box_room, (1, 1), (3, 2))
        a = Waveform(rng.uniform(-1, 1, size=500))
        b = Waveform(rng.uniform(-1, 1, size=500))
        lhs = convolve(Waveform(a.samples + b.samples), rir).samples
        rhs = convolve(a, rir).samples + convolve(b, rir).samples
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_matches_schoolbook_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            x = rng.uniform(-1, 1, size=256)
            h = rng.uniform(-1, 1, size=64)
            rir = ImpulseResponse(h, FS, (0, 0), (1, 1))
            got = convolve(Waveform(x), rir).samples
            assert np.max(np.abs(got - schoolbook_convolve(x, h))) < 1e-9

    def test_rate_mismatch_raises(self):
        with pytest.raises(RateMismatch):
            convolve(Waveform(np.zeros(8), 8000),
                     ImpulseResponse(np.ones(4), FS, (0, 0), (1, 1)))


class TestRenderBinaural:
    def test_empty_source_set_is_silence(self, free_field_scene):
        agent = AgentState((5.0, 5.0), 0.0)
        frame = render_binaural(free_field_scene, [], agent, window_length=FS)
        assert len(frame.left) == FS
        assert not frame.left.samples.any() and not frame.right.samples.any()

    def test_left_source_leads_and_is_louder(self, free_field_scene):
        agent = AgentState((5.0, 5.0), 0.0)       # facing +x; left is +y
        obj = source("s", (5.0, 8.0))
        window = Waveform(np.sin(2 * np.pi * 500 * np.arange(FS) / FS) * 0.5)
        frame = render_binaural(free_field_scene, [(obj, window, DEFAULT_BAND)],
                                agent, max_order=0)
        # fft convolution leaves ~1e-16 dust before the first arrival
        first_left = np.nonzero(np.abs(frame.left.samples) > 1e-9)[0][0]
        first_right = np.nonzero(np.abs(frame.right.samples) > 1e-9)[0][0]
        lead = first_right - first_left
        assert lead == round(EarGeometry().head_width / C * FS)
        assert np.sum(frame.left.samples ** 2) >= np.sum(frame.right.samples ** 2)

    def test_superposition_linearity(self, box_room):
        rng = np.random.default_rng(3)
        agent = AgentState((2.0, 1.5), math.pi / 2)
        s1 = source("a", (0.8, 0.8))
        s2 = source("b", (3.3, 2.2))
        w1 = Waveform(rng.uniform(-0.2, 0.2, size=FS))
        w2 = Waveform(rng.uniform(-0.2, 0.2, size=FS))
        both = render_binaural(box_room, [(s1, w1, 1), (s2, w2, 1)], agent)
        only1 = render_binaural(box_room, [(s1, w1, 1)], agent, window_length=FS)
        only2 = render_binaural(box_room, [(s2, w2, 1)], agent, window_length=FS)
        assert not both.clipped
        assert np.max(np.abs(both.left.samples
                             - only1.left.samples - only2.left.samples)) < 1e-9
        assert np.max(np.abs(both.right.samples
                             - only1.right.samples - only2.right.samples)) < 1e-9

    def test_hard_clip_sets_flag(self, free_field_scene):
        agent = AgentState((5.0, 5.0), 0.0)
        obj = source("s", (5.05, 5.0))      # inside the distance floor
        window = Waveform(np.full(FS, 0.9))
        frame = render_binaural(free_field_scene, [(obj, window, 1)], agent,
                                max_order=0)
        assert frame.clipped
        assert np.max(np.abs(frame.left.samples)) <= 1.0

    def test_non_emitting_source_rejected(self, free_field_scene):
        agent = AgentState((5.0, 5.0), 0.0)
        silent = ObjectInstance("s", "Phone", "rigid", (4, 4))
        with pytest.raises(ValueError):
            render_binaural(free_field_scene,
                            [(silent, Waveform(np.zeros(16)), 1)], agent)


class TestRt60:
    def test_single_tap_decays_instantly(self):
        rir = ImpulseResponse(np.array([0.7]), FS, (0, 0), (1, 1))
        assert rt60_estimate(rir) == 0.0

    def test_silent_rir_raises(self):
        with pytest.raises(SilentRIR):
            rt60_estimate(ImpulseResponse(np.zeros(16), FS, (0, 0), (1, 1)))

    def test_exponential_decay_closed_form(self):
        for k in (8.0, 15.0, 30.0):
            t = np.arange(int(1.5 * FS)) / FS
            rir = ImpulseResponse(np.exp(-k * t), FS, (0, 0), (1, 1))
            expected = 60.0 / (20.0 * k * math.log10(math.e))
            assert rt60_estimate(rir) == pytest.approx(expected, rel=0.05)

    def test_more_absorption_shortens_reverb(self):
        def room(alpha):
            mat = MaterialProperties((alpha,) * 4, (0.0,) * 4)
            corners = [(0, 0), (5, 0), (5, 4), (0, 4)]
            walls = tuple(WallSegment(corners[k], corners[(k + 1) % 4], "m")
                          for k in range(4))
            return Scene("r", (0, 0, 5, 4), 0.25, {"m": mat}, walls=walls)

        soft = rt60_estimate(compute_rir(room(0.8), (1, 1), (4, 3), max_order=8))
        hard = rt60_estimate(compute_rir(room(0.2), (1, 1), (4, 3), max_order=8))
        assert hard > soft


class TestWav:
    def test_mono_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        w = Waveform(rng.uniform(-0.9, 0.9, size=2048))
        path = tmp_path / "m.wav"
        save_wav(path, w)
        data, rate = load_wav(path)
        assert rate == FS and data.shape == (2048,)
        assert np.max(np.abs(data - w.samples)) < 1.0 / 32767 + 1e-6

    def test_stereo_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        frame = BinauralFrame(Waveform(rng.uniform(-0.5, 0.5, 512)),
                              Waveform(rng.uniform(-0.5, 0.5, 512)), 512 / FS)
        path = tmp_path / "s.wav"
        save_wav(path, frame)
        data, rate = load_wav(path)
        assert data.shape == (512, 2)
        assert np.max(np.abs(data[:, 0] - frame.left.samples)) < 1e-4


class TestRirCache:
    def test_hit_returns_same_object(self, box_room):
        cache = RirCache(box_room)
        a = cache(box_room, (1, 1), (3, 2))
        b = cache(box_room, (1, 1), (3, 2))
        assert a is b and len(cache) == 1

    def test_save_load_round_trip(self, box_room, tmp_path):
        cache = RirCache(box_room)
        cache(box_room, (1, 1), (3, 2))
        cache(box_room, (2, 2), (1, 1), band=2)
        path = tmp_path / "rir.bin"
        cache.save(path)
        loaded = RirCache.load(path, box_room)
        assert len(loaded) == 2
        fresh = loaded(box_room, (1, 1), (3, 2))
        direct = compute_rir(box_room, (1, 1), (3, 2))
        assert np.allclose(fresh.taps, direct.taps, atol=1e-6)   # f32 storage

    def test_wrong_scene_rejected(self, box_room, free_field_scene, tmp_path):
        cache = RirCache(box_room)
        cache(box_room, (1, 1), (3, 2))
        path = tmp_path / "rir.bin"
        cache.save(path)
        with pytest.raises(ValueError, match="different scene"):
            RirCache.load(path, free_field_scene)

    def test_concurrent_reads_with_inserts(self, box_room):
        cache = RirCache(box_room)
        rng = np.random.default_rng(6)
        points = [tuple(rng.uniform(0.5, 2.5, size=2)) for _ in range(40)]
        errors = []

        def worker():
            try:
                for p in points:
                    cache(box_room, (1.0, 1.0), p, max_order=1)
            except Exception as exc:   # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors and len(cache) == len(points)
