"""Archive format, manifests, fixture generator and split tests."""

import numpy as np
import pytest

from modref import dataio
from modref.errors import ArchiveFormatError, DegenerateInputError, ValidationError


class TestArchive:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a": rng.normal(size=(3, 4)).astype(np.float32),
            "b.nested.name": rng.normal(size=(2, 2, 2)).astype(np.float32),
            "scalarish": np.array([1.5], dtype=np.float32),
        }
        path = tmp_path / "t.ovma"
        dataio.write_archive(path, tensors)
        back = dataio.read_archive(path)
        assert set(back) == set(tensors)
        for name in tensors:
            assert back[name].dtype == np.float32
            np.testing.assert_array_equal(back[name], tensors[name])

    def test_empty_archive(self, tmp_path):
        path = tmp_path / "empty.ovma"
        dataio.write_archive(path, {})
        assert dataio.read_archive(path) == {}

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "bad.ovma"
        dataio.write_archive(path, {"x": np.ones(2, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[0] = ord("X")
        path.write_bytes(bytes(raw))
        with pytest.raises(ArchiveFormatError) as exc:
            dataio.read_archive(path)
        assert exc.value.offset == 0

    def test_truncation_reports_offset(self, tmp_path):
        path = tmp_path / "short.ovma"
        dataio.write_archive(path, {"x": np.ones((4, 4), dtype=np.float32)})
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ArchiveFormatError) as exc:
            dataio.read_archive(path)
        assert exc.value.offset is not None

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "trail.ovma"
        dataio.write_archive(path, {"x": np.ones(2, dtype=np.float32)})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(ArchiveFormatError):
            dataio.read_archive(path)

    def test_atomic_write_keeps_previous_on_error(self, tmp_path):
        path = tmp_path / "keep.ovma"
        dataio.write_archive(path, {"x": np.ones(2, dtype=np.float32)})
        before = path.read_bytes()
        with pytest.raises(ValidationError):
            dataio.write_archive(path, {"": np.ones(2, dtype=np.float32)})
        assert path.read_bytes() == before
        assert [p for p in tmp_path.iterdir()] == [path]


class TestFixture:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.ovma", tmp_path / "b.ovma"
        for path in (a, b):
            manifest, tensors = dataio.generate_fixture(3, 6, 16, 4, 0.5, 0.2)
            dataio.write_archive(path, tensors)
        assert a.read_bytes() == b.read_bytes()

    def test_zero_noise_collapses_to_prototype(self):
        manifest, tensors = dataio.generate_fixture(1, 4, 8, 3, 0.0, 0.0)
        for i in range(4):
            proto = tensors["prototypes"][i]
            assert np.abs(tensors[f"cls{i}.exemplars"] - proto).max() < 1e-6
            assert np.abs(tensors[f"cls{i}.targets"] - proto).max() < 1e-6

    def test_ambiguity_swaps_exact_count(self):
        _, plain = dataio.generate_fixture(5, 20, 16, 4, 0.0, 0.2)
        _, swapped = dataio.generate_fixture(5, 20, 16, 4, 0.5, 0.2)
        changed = [
            i for i in range(20)
            if not np.array_equal(plain[f"cls{i}.text"], swapped[f"cls{i}.text"])
        ]
        assert len(changed) == 10

    def test_swaps_are_pairwise(self):
        _, plain = dataio.generate_fixture(5, 20, 16, 4, 0.0, 0.2)
        _, swapped = dataio.generate_fixture(5, 20, 16, 4, 0.5, 0.2)
        for a in range(0, 10, 2):
            np.testing.assert_array_equal(swapped[f"cls{a}.text"], plain[f"cls{a + 1}.text"])
            np.testing.assert_array_equal(swapped[f"cls{a + 1}.text"], plain[f"cls{a}.text"])

    def test_invalid_fraction_error(self):
        with pytest.raises(ValidationError):
            dataio.generate_fixture(0, 4, 8, 4, 1.5, 0.2)

    def test_separability_monotone_in_noise(self):
        accs = []
        for sigma in (0.1, 0.3, 0.6):
            _, tensors = dataio.generate_fixture(21, 12, 32, 4, 0.0, sigma, targets_per_class=40)
            protos = tensors["prototypes"]
            correct = total = 0
            for i in range(12):
                sims = tensors[f"cls{i}.targets"] @ protos.T
                correct += int((sims.argmax(axis=1) == i).sum())
                total += sims.shape[0]
            accs.append(correct / total)
        assert accs[0] > accs[1] > accs[2]


class TestManifest:
    def test_json_round_trip(self):
        manifest, _ = dataio.generate_fixture(2, 5, 8, 3, 0.0, 0.2)
        back = dataio.DatasetManifest.from_json(manifest.to_json())
        assert back.d == manifest.d
        assert [c.id for c in back.classes] == [c.id for c in manifest.classes]
        assert back.classes[0].exemplar_key == manifest.classes[0].exemplar_key

    def test_missing_key_rejected(self):
        with pytest.raises(ValidationError):
            dataio.DatasetManifest.from_json('{"version": 1, "d": 8}')

    def test_duplicate_ids_rejected(self):
        classes = [
            dataio.ManifestClass(id=1, name="a", exemplar_key="x", text_key="y"),
            dataio.ManifestClass(id=1, name="b", exemplar_key="x", text_key="y"),
        ]
        with pytest.raises(ValidationError):
            dataio.DatasetManifest(d=4, classes=classes)

    def test_load_references_validates_keys_and_width(self):
        manifest, tensors = dataio.generate_fixture(2, 3, 8, 3, 0.0, 0.2)
        refs = dataio.load_references(manifest, tensors)
        assert [r.class_id for r in refs] == [0, 1, 2]
        norms = np.linalg.norm(refs[0].exemplars, axis=1)
        np.testing.assert_allclose(norms, np.ones_like(norms), atol=1e-6)
        del tensors["cls1.text"]
        with pytest.raises(ValidationError):
            dataio.load_references(manifest, tensors)

    def test_load_references_rejects_wrong_width(self):
        manifest, tensors = dataio.generate_fixture(2, 3, 8, 3, 0.0, 0.2)
        tensors["cls0.exemplars"] = np.ones((3, 9), dtype=np.float32)
        with pytest.raises(ValidationError):
            dataio.load_references(manifest, tensors)

    def test_zero_feature_row_degenerate(self):
        manifest, tensors = dataio.generate_fixture(2, 3, 8, 3, 0.0, 0.2)
        bad = tensors["cls0.exemplars"].copy()
        bad[0] = 0.0
        tensors["cls0.exemplars"] = bad
        with pytest.raises(DegenerateInputError):
            dataio.load_references(manifest, tensors)


class TestSplit:
    def make_manifest(self, n):
        manifest, _ = dataio.generate_fixture(2, n, 8, 3, 0.0, 0.2)
        return manifest

    def test_half_split(self):
        base, novel = dataio.split_base_novel(self.make_manifest(10), 0.5)
        assert [c.id for c in base.classes] == list(range(5))
        assert [c.id for c in novel.classes] == list(range(5, 10))
        assert all(c.split == "base" for c in base.classes)
        assert all(c.split == "novel" for c in novel.classes)

    def test_ceil_rule(self):
        base, novel = dataio.split_base_novel(self.make_manifest(3), 0.5)
        assert len(base.classes) == 2 and len(novel.classes) == 1

    def test_union_and_disjointness(self):
        manifest = self.make_manifest(7)
        for fraction in (0.2, 0.4, 0.6, 0.8):
            base, novel = dataio.split_base_novel(manifest, fraction)
            base_ids = {c.id for c in base.classes}
            novel_ids = {c.id for c in novel.classes}
            assert base_ids | novel_ids == {c.id for c in manifest.classes}
            assert not base_ids & novel_ids

    def test_invalid_fraction(self):
        with pytest.raises(ValidationError):
            dataio.split_base_novel(self.make_manifest(4), 0.0)

    def test_empty_side_rejected(self):
        with pytest.raises(ValidationError):
            dataio.split_base_novel(self.make_manifest(2), 0.95)
