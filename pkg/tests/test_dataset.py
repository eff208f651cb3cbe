"""WAV parsing, manifests, splits, schedules, and the synthetic surrogate."""

import struct

import numpy as np
import pytest

from dekws.dataset import (
    GSC_V1_WORDS,
    Manifest,
    ManifestRecord,
    SyntheticSpec,
    build_task_schedule,
    deterministic_split,
    featurize,
    load_synthetic,
    read_wav_pcm16,
    scan_gsc_layout,
    synthesize_dataset,
    write_synthetic_tree,
    write_wav_pcm16,
)
from dekws.dsp import MfccConfig, Waveform
from dekws.errors import (
    InvalidDatasetError,
    InvalidInputError,
    InvalidScheduleError,
    UnsupportedFormatError,
)


def wav_bytes(samples, channels=1, rate=16000, bits=16, audio_format=1):
    payload = np.asarray(samples, dtype="<i2").tobytes()
    out = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    out += b"fmt " + struct.pack(
        "<IHHIIHH", 16, audio_format, channels, rate,
        rate * channels * bits // 8, channels * bits // 8, bits,
    )
    out += b"data" + struct.pack("<I", len(payload)) + payload
    return out


class TestReadWav:
    def test_scaling_definition(self, tmp_path):
        path = tmp_path / "a.wav"
        path.write_bytes(wav_bytes([0, 16384, -32768]))
        w = read_wav_pcm16(path)
        np.testing.assert_array_equal(w.samples, [0.0, 0.5, -1.0])
        assert w.sample_rate == 16000

    def test_stereo_rejected_naming_channels(self, tmp_path):
        path = tmp_path / "stereo.wav"
        path.write_bytes(wav_bytes([0, 0], channels=2))
        with pytest.raises(UnsupportedFormatError, match="channels"):
            read_wav_pcm16(path)

    def test_wrong_rate_rejected_naming_sample_rate(self, tmp_path):
        path = tmp_path / "slow.wav"
        path.write_bytes(wav_bytes([0], rate=8000))
        with pytest.raises(UnsupportedFormatError, match="sample rate"):
            read_wav_pcm16(path)

    def test_wrong_bit_depth_rejected(self, tmp_path):
        path = tmp_path / "deep.wav"
        path.write_bytes(wav_bytes([0], bits=32))
        with pytest.raises(UnsupportedFormatError, match="bit depth"):
            read_wav_pcm16(path)

    def test_non_pcm_rejected(self, tmp_path):
        path = tmp_path / "float.wav"
        path.write_bytes(wav_bytes([0], audio_format=3))
        with pytest.raises(UnsupportedFormatError, match="format"):
            read_wav_pcm16(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "nope.wav"
        path.write_bytes(b"OGGS" + b"\x00" * 64)
        with pytest.raises(UnsupportedFormatError, match="magic"):
            read_wav_pcm16(path)

    def test_write_read_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ints = rng.integers(-32768, 32768, size=1000)
        w = Waveform((ints / 32768.0).astype(np.float32))
        path = tmp_path / "rt.wav"
        write_wav_pcm16(path, w)
        back = read_wav_pcm16(path)
        assert back.samples.tobytes() == w.samples.tobytes()


class TestScanLayout:
    def _make_tree(self, root, words, files_per_word=2):
        for word in words:
            d = root / word
            d.mkdir(parents=True)
            for i in range(files_per_word):
                (d / f"{i}.wav").write_bytes(wav_bytes([0, 1]))

    def test_scan_with_word_override(self, tmp_path):
        words = [f"class_{i:02d}" for i in range(12)]
        self._make_tree(tmp_path, words, files_per_word=3)
        manifest = scan_gsc_layout(tmp_path, expected_words=words)
        assert len(manifest) == 36
        assert manifest.records[0].class_id == 0
        assert manifest.records[0].class_name == "class_00"

    def test_missing_words_listed(self, tmp_path):
        self._make_tree(tmp_path, GSC_V1_WORDS[:28])
        with pytest.raises(InvalidDatasetError, match="yes"):
            scan_gsc_layout(tmp_path)

    def test_extra_directories_ignored(self, tmp_path):
        words = ["alpha", "beta"]
        self._make_tree(tmp_path, words + ["_background_noise_", "junk"])
        manifest = scan_gsc_layout(tmp_path, expected_words=words)
        assert len(manifest) == 4
        assert {r.class_name for r in manifest.records} == {"alpha", "beta"}

    def test_empty_root_rejected(self, tmp_path):
        with pytest.raises(InvalidDatasetError):
            scan_gsc_layout(tmp_path / "nothing")

    def test_class_ids_follow_sorted_names(self, tmp_path):
        words = ["zebra", "apple", "mango"]
        self._make_tree(tmp_path, words, files_per_word=1)
        manifest = scan_gsc_layout(tmp_path, expected_words=words)
        by_name = {r.class_name: r.class_id for r in manifest.records}
        assert by_name == {"apple": 0, "mango": 1, "zebra": 2}


def make_manifest(per_class):
    records = []
    for class_id, n in enumerate(per_class):
        for i in range(n):
            records.append(
                ManifestRecord(f"c{class_id}/{i}.wav", class_id, f"c{class_id}")
            )
    return Manifest(records)


class TestDeterministicSplit:
    def test_eighty_twenty_cut(self):
        split = deterministic_split(make_manifest([100]), 0.8, seed=1)
        assert len(split.subset("train")) == 80
        assert len(split.subset("validation")) == 20

    def test_same_seed_identical_assignment(self):
        m = make_manifest([40, 40])
        a = deterministic_split(m, 0.8, seed=3)
        b = deterministic_split(m, 0.8, seed=3)
        assert [r.split for r in a.records] == [r.split for r in b.records]

    def test_different_seeds_differ(self):
        m = make_manifest([150])
        a = deterministic_split(m, 0.8, seed=1)
        b = deterministic_split(m, 0.8, seed=2)
        assert [r.split for r in a.records] != [r.split for r in b.records]

    def test_every_class_in_both_splits(self):
        split = deterministic_split(make_manifest([5, 5, 5]), 0.8, seed=0)
        for class_id in range(3):
            fractions = {r.split for r in split.records if r.class_id == class_id}
            assert fractions == {"train", "validation"}

    def test_tiny_class_rejected(self):
        with pytest.raises(InvalidDatasetError):
            deterministic_split(make_manifest([10, 1]), 0.8, seed=0)

    def test_bad_fraction_rejected(self):
        with pytest.raises(InvalidInputError):
            deterministic_split(make_manifest([10]), 1.0, seed=0)


class TestSchedules:
    def test_canonical_layouts(self):
        assert [len(t.class_ids) for t in build_task_schedule(30, "6task", 0)] == \
            [15, 3, 3, 3, 3, 3]
        assert [len(t.class_ids) for t in build_task_schedule(30, "11task", 0)] == \
            [10] + [2] * 10
        assert [len(t.class_ids) for t in build_task_schedule(30, "21task", 0)] == \
            [10] + [1] * 20

    def test_custom_layout(self):
        tasks = build_task_schedule(12, "custom", 0, first=3, per_task=3)
        assert [len(t.class_ids) for t in tasks] == [3, 3, 3, 3]

    def test_partition_is_disjoint_and_exhaustive(self):
        for layout in ("6task", "11task", "21task"):
            tasks = build_task_schedule(30, layout, seed=7)
            seen = [c for t in tasks for c in t.class_ids]
            assert sorted(seen) == list(range(30))

    def test_shuffle_depends_on_seed(self):
        a = build_task_schedule(30, "6task", seed=0)
        b = build_task_schedule(30, "6task", seed=1)
        assert a[0].class_ids != b[0].class_ids

    def test_inconsistent_arithmetic_rejected(self):
        with pytest.raises(InvalidScheduleError):
            build_task_schedule(29, "6task", 0)
        with pytest.raises(InvalidScheduleError):
            build_task_schedule(12, "custom", 0, first=5, per_task=4)
        with pytest.raises(InvalidScheduleError):
            build_task_schedule(12, "nope", 0)


class TestSynthesize:
    def test_count_and_balance(self):
        spec = SyntheticSpec(num_classes=12, examples_per_class=60, seed=0)
        waveforms, manifest = synthesize_dataset(spec)
        assert len(manifest) == 720 and len(waveforms) == 720
        counts = {}
        for r in manifest.records:
            counts[r.class_id] = counts.get(r.class_id, 0) + 1
        assert set(counts.values()) == {60}

    def test_noiseless_without_jitter_identical_up_to_phase(self):
        # Integer frequencies sit exactly on 1 Hz DFT bins for a 1 s clip,
        # so the magnitude spectrum is phase-invariant: all examples of a
        # class must share it (up to int16 quantization).
        spec = SyntheticSpec(
            num_classes=2, examples_per_class=4, noise_amplitude=0.0,
            amplitude_jitter=0.0, seed=1,
            frequencies=((300.0, 1500.0), (700.0, 2500.0)),
        )
        waveforms, manifest = synthesize_dataset(spec)
        for class_id in range(2):
            mags = [
                np.abs(np.fft.rfft(waveforms[r.record_id].samples))
                for r in manifest.records if r.class_id == class_id
            ]
            for other in mags[1:]:
                np.testing.assert_allclose(other, mags[0], atol=1.0)

    def test_determinism(self):
        spec = SyntheticSpec(num_classes=3, examples_per_class=5, seed=9)
        first, _ = synthesize_dataset(spec)
        second, _ = synthesize_dataset(spec)
        for key in first:
            assert first[key].samples.tobytes() == second[key].samples.tobytes()

    def test_distinct_frequency_pairs_enforced(self):
        with pytest.raises(InvalidInputError):
            SyntheticSpec(num_classes=2, frequencies=((440.0, 880.0), (440.0, 880.0)))
        with pytest.raises(InvalidInputError):
            SyntheticSpec(num_classes=1, frequencies=((440.0, 9000.0),))

    def test_classes_separate_through_the_frontend(self):
        spec = SyntheticSpec(num_classes=4, examples_per_class=12,
                             noise_amplitude=0.05, seed=0)
        data = load_synthetic(spec, split_seed=0)
        centroids = []
        spreads = []
        for c in range(4):
            feats = data.features[data.labels == c].reshape(
                (data.labels == c).sum(), -1
            )
            mu = feats.mean(axis=0)
            centroids.append(mu)
            spreads.append(np.linalg.norm(feats - mu, axis=1).mean())
        for i in range(4):
            for j in range(i + 1, 4):
                gap = np.linalg.norm(centroids[i] - centroids[j])
                assert gap > spreads[i] + spreads[j], (i, j, gap)

    def test_written_tree_rescans_and_round_trips(self, tmp_path):
        spec = SyntheticSpec(num_classes=3, examples_per_class=4, seed=5)
        manifest = write_synthetic_tree(spec, tmp_path)
        assert len(manifest) == 12
        words = [f"class_{i:02d}" for i in range(3)]
        rescanned = scan_gsc_layout(tmp_path, expected_words=words)
        assert len(rescanned) == 12
        waveforms, _ = synthesize_dataset(spec)
        for record in manifest.records:
            back = read_wav_pcm16(tmp_path / record.record_id)
            assert back.samples.tobytes() == waveforms[record.record_id].samples.tobytes()


class TestFeaturize:
    def test_preserves_manifest_order_and_shapes(self):
        spec = SyntheticSpec(num_classes=2, examples_per_class=3, seed=0)
        waveforms, manifest = synthesize_dataset(spec)
        manifest = deterministic_split(manifest, 0.8, seed=0)
        data = featurize(manifest, waveforms.__getitem__, MfccConfig())
        assert data.features.shape == (6, 98, 40)
        np.testing.assert_array_equal(
            data.labels, [r.class_id for r in manifest.records]
        )
        assert data.num_classes == 2

    def test_subset_selection(self):
        spec = SyntheticSpec(num_classes=3, examples_per_class=10, seed=2)
        data = load_synthetic(spec, split_seed=0)
        train_x, train_y = data.train_subset([0, 2])
        assert set(train_y) == {0, 2}
        assert len(train_x) == 16  # 8 train per class under the 0.8 cut
        val_x, val_y = data.val_subset([1])
        assert set(val_y) == {1} and len(val_x) == 2

    def test_empty_manifest_rejected(self):
        with pytest.raises(InvalidDatasetError):
            featurize(Manifest([]), lambda rid: None, MfccConfig())
