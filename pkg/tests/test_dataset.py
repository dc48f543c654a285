"""Tests for scenario labeling, synthetic generators, manifests, folds,
and standardization."""

import json

import numpy as np
import pytest

from mff import audio, dataset
from mff.audio import MEL_TINY_CONFIG
from mff.errors import ConfigurationError, DataValidationError


def direct_dft_magnitudes(x):
    """O(n^2) DFT magnitude oracle, independent of numpy.fft."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    return np.abs(basis @ x)


class TestScenarioLabeling:
    TABLE_ROWS = [
        ("go", 0.0, 1, "unsafe"),
        ("go", 5.0, 2, "safe"),
        ("go", 10.0, 2, "safe"),
        ("stop", 15.0, 3, "safe"),
        ("stop", 18.0, 3, "safe"),
        ("stop", 20.0, 3, "safe"),
        ("stop", 25.0, 4, "unsafe"),
        ("stop", 120.0, 4, "unsafe"),
    ]

    @pytest.mark.parametrize("command,speed,scenario,safety", TABLE_ROWS)
    def test_declared_buckets(self, command, speed, scenario, safety):
        label = dataset.label_scenario(command, speed)
        assert label.scenario_id == scenario
        assert label.safety == safety
        assert label.class_index == dataset.SAFETY_CLASSES.index(safety)

    def test_gap_speeds_rejected(self):
        """Integer-speed sweep: only the declared buckets label; gaps raise."""
        go_ok = {0} | set(range(5, 11))
        stop_ok = set(range(15, 21)) | set(range(25, 41))
        for speed in range(0, 41):
            for command, ok in (("go", go_ok), ("stop", stop_ok)):
                if speed in ok:
                    dataset.label_scenario(command, speed)
                else:
                    with pytest.raises(DataValidationError):
                        dataset.label_scenario(command, speed)

    def test_bad_inputs(self):
        with pytest.raises(DataValidationError):
            dataset.label_scenario("reverse", 5.0)
        with pytest.raises(DataValidationError):
            dataset.label_scenario("go", -1.0)
        with pytest.raises(DataValidationError):
            dataset.label_scenario("go", float("nan"))

    def test_buckets_have_disjoint_speeds(self):
        """Speed alone determines the bucket, so image synthesis can use it."""
        for speed, expected in ((0.0, 1), (7.5, 2), (17.0, 3), (99.0, 4)):
            assert dataset.label_scenario_from_speed(speed).scenario_id == expected


class TestSynthAudio:
    def test_seeded_determinism(self):
        a = dataset.synth_command_audio("go", 7)
        b = dataset.synth_command_audio("go", 7)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_length_and_range(self):
        for command in dataset.COMMANDS:
            clip = dataset.synth_command_audio(command, 3)
            assert clip.samples.size == audio.SAMPLE_RATE_HZ
            assert np.max(np.abs(clip.samples)) <= 1.0

    def test_go_starts_lower_than_stop(self):
        """Dominant first-frame frequency: up-chirp starts low, down-chirp high.

        Oracle: peak bin of a direct DFT over the first 25 ms frame.
        """
        frame = 400  # 25 ms at 16 kHz
        go = dataset.synth_command_audio("go", 7).samples[:frame]
        stop = dataset.synth_command_audio("stop", 7).samples[:frame]
        bin_hz = audio.SAMPLE_RATE_HZ / frame
        peak_go = np.argmax(direct_dft_magnitudes(go)[1:]) + 1
        peak_stop = np.argmax(direct_dft_magnitudes(stop)[1:]) + 1
        assert peak_go * bin_hz < peak_stop * bin_hz
        assert abs(peak_go * bin_hz - 300.0) < 2 * bin_hz
        assert abs(peak_stop * bin_hz - 900.0) < 2 * bin_hz

    def test_different_seeds_differ(self):
        a = dataset.synth_command_audio("go", 1)
        b = dataset.synth_command_audio("go", 2)
        assert not np.array_equal(a.samples, b.samples)

    def test_unknown_command(self):
        with pytest.raises(DataValidationError):
            dataset.synth_command_audio("halt", 0)


class TestSynthFrames:
    def test_seeded_determinism(self):
        a = dataset.synth_stereo_frames(0.0, 3)
        b = dataset.synth_stereo_frames(0.0, 3)
        np.testing.assert_array_equal(a.left, b.left)
        np.testing.assert_array_equal(a.right, b.right)

    def test_full_scale_dimensions(self):
        view = dataset.synth_stereo_frames(18.0, 5)
        assert view.left.shape == (224, 224, 3)
        assert view.right.shape == (224, 224, 3)
        assert view.left.min() >= 0.0 and view.left.max() <= 1.0

    def test_right_is_shifted_left(self):
        view = dataset.synth_stereo_frames(30.0, 11)
        np.testing.assert_array_equal(
            view.right, np.roll(view.left, dataset.STEREO_SHIFT_PX, axis=1)
        )

    def test_stripe_frequency_tracks_bucket(self):
        """Column-DFT argmax equals the bucket's stripe count for all four
        buckets, so buckets are separable by dominant vertical frequency."""
        for speed, scenario in ((0.0, 1), (8.0, 2), (16.0, 3), (30.0, 4)):
            view = dataset.synth_stereo_frames(speed, 9)
            column = view.left[:, 50, 1]
            mags = direct_dft_magnitudes(column - column.mean())
            assert np.argmax(mags[1:]) + 1 == dataset.stripe_cycles_for_scenario(scenario)

    def test_zero_vs_thirty_differ_in_dominant_frequency(self):
        slow = dataset.synth_stereo_frames(0.0, 4)
        fast = dataset.synth_stereo_frames(30.0, 4)
        peaks = []
        for view in (slow, fast):
            column = view.left[:, 0, 0]
            mags = direct_dft_magnitudes(column - column.mean())
            peaks.append(np.argmax(mags[1:]) + 1)
        assert peaks[0] != peaks[1]

    def test_out_of_bucket_speed_rejected(self):
        with pytest.raises(DataValidationError):
            dataset.synth_stereo_frames(12.0, 0)


class TestManifest:
    def test_synthetic_counts_and_balance(self):
        manifest = dataset.build_manifest(101, class_balance=0.5, seed=3)
        assert len(manifest) == 101
        labels = manifest.labels
        n_safe = int(np.sum(labels == 0))
        assert abs(n_safe - 101 * 0.5) <= 1

    def test_exact_even_split(self):
        manifest = dataset.build_manifest(40, class_balance=0.5, seed=0)
        assert int(np.sum(manifest.labels == 0)) == 20

    def test_single_record(self):
        manifest = dataset.build_manifest(1, class_balance=0.5, seed=1)
        assert len(manifest) == 1

    def test_every_record_validates(self):
        manifest = dataset.build_manifest(60, class_balance=0.3, seed=8)
        seen_scenarios = set()
        for record in manifest.entries:
            label = dataset.label_scenario(record.command, record.speed_kmh)
            assert label.scenario_id == record.scenario
            assert label.safety == record.label
            seen_scenarios.add(record.scenario)
        assert seen_scenarios == {1, 2, 3, 4}

    def test_byte_identical_files(self, tmp_path):
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for path in paths:
            dataset.write_manifest(path, dataset.build_manifest(25, 0.5, seed=42))
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_round_trip(self, tmp_path):
        manifest = dataset.build_manifest(12, 0.5, seed=9)
        path = tmp_path / "m.jsonl"
        dataset.write_manifest(path, manifest)
        loaded = dataset.read_manifest(path, seed=9)
        assert len(loaded) == 12
        for a, b in zip(manifest.entries, loaded.entries):
            assert a == b

    def test_bad_args(self):
        with pytest.raises(ConfigurationError):
            dataset.build_manifest(0, 0.5, seed=0)
        with pytest.raises(ConfigurationError):
            dataset.build_manifest(4, 1.5, seed=0)
        with pytest.raises(ConfigurationError):
            dataset.build_manifest(4, 0.5, seed=0, mode="stream")

    def test_ingest_accepts_valid_and_names_offenders(self):
        good = {
            "id": "r1", "audio": "a.wav", "left": "l.png", "right": "r.png",
            "command": "go", "speed_kmh": 7.0, "scenario": 2, "label": "safe",
        }
        bad_label = dict(good, id="r2", label="unsafe")
        gap_speed = dict(good, id="r3", speed_kmh=3.0)
        assert len(dataset.build_manifest(0, mode="ingest", source=[good])) == 1
        with pytest.raises(DataValidationError) as err:
            dataset.build_manifest(0, mode="ingest", source=[good, bad_label, gap_speed])
        message = str(err.value)
        assert "record 2" in message and "record 3" in message
        assert "record 1" not in message

    def test_ingest_rejects_duplicate_ids(self):
        rec = {
            "id": "dup", "audio": "a.wav", "left": "l.png", "right": "r.png",
            "command": "stop", "speed_kmh": 16.0, "scenario": 3, "label": "safe",
        }
        with pytest.raises(DataValidationError):
            dataset.build_manifest(0, mode="ingest", source=[rec, dict(rec)])

    def test_read_rejects_tampered_label(self, tmp_path):
        manifest = dataset.build_manifest(3, 0.5, seed=2)
        path = tmp_path / "m.jsonl"
        dataset.write_manifest(path, manifest)
        lines = path.read_text().splitlines()
        obj = json.loads(lines[0])
        obj["label"] = "safe" if obj["label"] == "unsafe" else "unsafe"
        lines[0] = json.dumps(obj)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataValidationError):
            dataset.read_manifest(path)

    def test_read_rejects_invalid_json(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "x"\n')
        with pytest.raises(DataValidationError):
            dataset.read_manifest(path)


class TestImageIO:
    def test_round_trip_and_center_crop(self, tmp_path):
        rng = np.random.default_rng(0)
        frame = rng.uniform(0, 1, (240, 300, 3))
        path = tmp_path / "f.png"
        dataset.save_image(path, frame)
        loaded = dataset.load_image(path, 224)
        assert loaded.shape == (224, 224, 3)
        assert loaded.min() >= 0.0 and loaded.max() <= 1.0

    def test_exact_size_loads_unscaled(self, tmp_path):
        rng = np.random.default_rng(1)
        frame = rng.uniform(0, 1, (64, 64, 3))
        path = tmp_path / "g.png"
        dataset.save_image(path, frame)
        loaded = dataset.load_image(path, 64)
        np.testing.assert_allclose(loaded, np.round(frame * 255) / 255, atol=1e-9)

    def test_too_small_rejected(self, tmp_path):
        path = tmp_path / "small.png"
        dataset.save_image(path, np.zeros((32, 32, 3)))
        with pytest.raises(DataValidationError):
            dataset.load_image(path, 224)


class TestSampleLoading:
    def test_shapes_and_labels(self):
        manifest = dataset.build_manifest(6, 0.5, seed=5)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32)
        assert batch.audio.shape == (6, 32, 16, 1)
        assert batch.left.shape == (6, 32, 32, 3)
        assert batch.right.shape == (6, 32, 32, 3)
        np.testing.assert_array_equal(batch.labels, manifest.labels)
        assert batch.audio.dtype == np.float32

    def test_subset_preserves_alignment(self):
        manifest = dataset.build_manifest(8, 0.5, seed=6)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32)
        sub = batch.subset([5, 1])
        assert sub.ids == [batch.ids[5], batch.ids[1]]
        np.testing.assert_array_equal(sub.audio[0], batch.audio[5])
        np.testing.assert_array_equal(sub.labels, batch.labels[[5, 1]])

    def test_indices_argument(self):
        manifest = dataset.build_manifest(8, 0.5, seed=6)
        full = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32)
        part = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32, indices=[2, 3])
        np.testing.assert_array_equal(part.audio[0], full.audio[2])

    def test_file_backed_records(self, tmp_path):
        """Records pointing at wav/png files load through the same path."""
        clip = dataset.synth_command_audio("go", 1)
        view = dataset.synth_stereo_frames(7.0, 1, size=64)
        audio.write_wav_clip(tmp_path / "c.wav", clip)
        dataset.save_image(tmp_path / "l.png", view.left)
        dataset.save_image(tmp_path / "r.png", view.right)
        source = [{
            "id": "disk-0",
            "audio": str(tmp_path / "c.wav"),
            "left": str(tmp_path / "l.png"),
            "right": str(tmp_path / "r.png"),
            "command": "go", "speed_kmh": 7.0, "scenario": 2, "label": "safe",
        }]
        manifest = dataset.build_manifest(0, mode="ingest", source=source)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=64)
        assert batch.audio.shape == (1, 32, 16, 1)
        assert batch.left.shape == (1, 64, 64, 3)


class TestFoldSplit:
    def test_partition_properties(self):
        """Disjoint, covering, sizes within one, for several (n, k, seed)."""
        for n, k, seed in ((4000, 10, 0), (10, 10, 1), (37, 5, 2), (23, 4, 3)):
            manifest = dataset.build_manifest(n, 0.5, seed=seed)
            split = dataset.split_kfold(manifest, k, seed=seed)
            sizes = [f.size for f in split.folds]
            assert max(sizes) - min(sizes) <= 1
            union = np.sort(np.concatenate(split.folds))
            np.testing.assert_array_equal(union, np.arange(n))

    def test_forty_hundred_by_ten(self):
        manifest = dataset.build_manifest(4000, 0.5, seed=7)
        split = dataset.split_kfold(manifest, 10, seed=7)
        assert [f.size for f in split.folds] == [400] * 10

    def test_singleton_folds(self):
        manifest = dataset.build_manifest(10, 0.5, seed=7)
        split = dataset.split_kfold(manifest, 10, seed=7)
        assert [f.size for f in split.folds] == [1] * 10

    def test_stratification(self):
        """Each fold's safe count within 1 of its proportional share."""
        manifest = dataset.build_manifest(103, 0.4, seed=11)
        labels = manifest.labels
        global_safe = np.mean(labels == 0)
        split = dataset.split_kfold(manifest, 7, seed=11)
        for fold in split.folds:
            n_safe = int(np.sum(labels[fold] == 0))
            assert abs(n_safe - fold.size * global_safe) <= 1

    def test_train_indices_complement(self):
        manifest = dataset.build_manifest(30, 0.5, seed=4)
        split = dataset.split_kfold(manifest, 5, seed=4)
        for i in range(5):
            train = split.train_indices(i)
            assert np.intersect1d(train, split.folds[i]).size == 0
            assert train.size + split.folds[i].size == 30

    def test_k_bounds(self):
        manifest = dataset.build_manifest(5, 0.5, seed=0)
        with pytest.raises(ConfigurationError):
            dataset.split_kfold(manifest, 1, seed=0)
        with pytest.raises(ConfigurationError):
            dataset.split_kfold(manifest, 6, seed=0)

    def test_seed_changes_assignment(self):
        manifest = dataset.build_manifest(50, 0.5, seed=0)
        a = dataset.split_kfold(manifest, 5, seed=1)
        b = dataset.split_kfold(manifest, 5, seed=2)
        assert any(not np.array_equal(x, y) for x, y in zip(a.folds, b.folds))


def _toy_batch(audio_arr, left, right):
    n = audio_arr.shape[0]
    return dataset.SampleBatch(
        ids=[f"t{i}" for i in range(n)],
        audio=np.asarray(audio_arr, dtype=np.float64),
        left=np.asarray(left, dtype=np.float64),
        right=np.asarray(right, dtype=np.float64),
        labels=np.zeros(n, dtype=np.int64),
    )


class TestStandardizer:
    def test_train_set_becomes_zero_mean_unit_std(self):
        manifest = dataset.build_manifest(10, 0.5, seed=13)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32, dtype=np.float64)
        stats = dataset.fit_standardizer(batch)
        out = dataset.apply_standardizer(batch, stats)
        np.testing.assert_allclose(out.audio.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.audio.std(axis=(0, 2, 3)), 1.0, atol=1e-6)
        pixels = np.concatenate([out.left, out.right])
        np.testing.assert_allclose(pixels.mean(axis=(0, 1, 2)), 0.0, atol=1e-6)
        np.testing.assert_allclose(pixels.std(axis=(0, 1, 2)), 1.0, atol=1e-6)

    def test_constant_channel_zeroed_with_warning(self):
        audio_arr = np.random.default_rng(0).normal(size=(4, 3, 5, 1))
        left = np.full((4, 8, 8, 3), 0.25)
        batch = _toy_batch(audio_arr, left, left)
        with pytest.warns(UserWarning):
            stats = dataset.fit_standardizer(batch)
        out = dataset.apply_standardizer(batch, stats)
        np.testing.assert_array_equal(out.left, np.zeros_like(left))

    def test_fit_on_x_and_negated_x(self):
        """Stats over {x, -x} with per-row-constant x: mean 0, std |row value|."""
        row_values = np.array([1.5, -2.0, 0.5])
        x = np.broadcast_to(row_values[:, None], (3, 4)).copy()
        audio_arr = np.stack([x, -x])[:, :, :, None]
        left = np.random.default_rng(3).uniform(0, 1, (2, 4, 4, 3))
        stats = dataset.fit_standardizer(_toy_batch(audio_arr, left, left))
        np.testing.assert_allclose(stats.audio_mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(stats.audio_std, np.abs(row_values), atol=1e-12)

    def test_restandardizing_is_identity(self):
        """Freshly fit stats on standardized data give mean 0 / std 1, so a
        second application changes nothing (direct recomputation oracle)."""
        manifest = dataset.build_manifest(8, 0.5, seed=21)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32, dtype=np.float64)
        once = dataset.apply_standardizer(batch, dataset.fit_standardizer(batch))
        twice = dataset.apply_standardizer(once, dataset.fit_standardizer(once))
        np.testing.assert_allclose(twice.audio, once.audio, atol=1e-6)
        np.testing.assert_allclose(twice.left, once.left, atol=1e-6)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(17)
        audio_arr = rng.normal(2.0, 3.0, size=(5, 4, 6, 1))
        left = rng.uniform(0, 1, (5, 8, 8, 3))
        right = rng.uniform(0, 1, (5, 8, 8, 3))
        batch = _toy_batch(audio_arr, left, right)
        out = dataset.apply_standardizer(batch, dataset.fit_standardizer(batch))
        mean = audio_arr.mean(axis=(0, 2, 3), keepdims=True)
        std = audio_arr.std(axis=(0, 2, 3), keepdims=True)
        np.testing.assert_allclose(out.audio, (audio_arr - mean) / std, atol=1e-12)

    def test_stats_round_trip_json(self):
        manifest = dataset.build_manifest(4, 0.5, seed=2)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32)
        stats = dataset.fit_standardizer(batch)
        clone = dataset.StandardizerStats.from_dict(
            json.loads(json.dumps(stats.to_dict()))
        )
        np.testing.assert_allclose(clone.audio_mean, stats.audio_mean)
        np.testing.assert_allclose(clone.image_std, stats.image_std)

    def test_needs_two_samples(self):
        manifest = dataset.build_manifest(1, 0.5, seed=0)
        batch = dataset.load_samples(manifest, MEL_TINY_CONFIG, image_size=32)
        with pytest.raises(DataValidationError):
            dataset.fit_standardizer(batch)
