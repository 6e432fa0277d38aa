"""Patch-image extraction into bag files."""
import numpy as np
import pytest

from moc.store import read_bag
from moc_adapter import PATCH_SIZE, extract_patch_features
from moc_adapter.errors import NoPatches


def _make_patches(root, names):
    root.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(names):
        # content only needs to be stable bytes; the hash encoder never decodes
        (root / name).write_bytes(f"fake-image-{i}".encode())
    return root


class TestExtract:
    def test_grid_named_patches_get_coords(self, tmp_path):
        patches = _make_patches(tmp_path / "slideA", ["0_0.png", "224_0.png", "448_224.png"])
        out = extract_patch_features(patches, "hash-16", tmp_path / "a.mocb")
        bag = read_bag(out)
        assert bag.slide_id == "slideA"
        assert bag.n_patches == 3
        assert bag.label is None
        np.testing.assert_array_equal(bag.coords, [[0, 0], [224, 0], [448, 224]])

    def test_sorted_name_order(self, tmp_path):
        # lexicographic: 0_0 < 224_0 < 448_224 holds above; mix digits to check sort key
        patches = _make_patches(tmp_path / "s", ["b.png", "a.png", "c.png"])
        out = extract_patch_features(patches, "hash-8", tmp_path / "s.mocb")
        bag = read_bag(out)
        from moc_adapter.encoders import HashEncoder

        enc = HashEncoder(8)
        expected = enc.encode_image(patches / "a.png")
        assert np.abs(bag.patches[0] - expected).max() <= 1e-7

    def test_unnamed_patches_no_coords(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["a.png", "1_2.png"])
        out = extract_patch_features(patches, "hash-8", tmp_path / "s.mocb")
        assert read_bag(out).coords is None

    def test_coord_scale_for_grid_indices(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["0_0.png", "1_0.png", "2_1.png"])
        out = extract_patch_features(patches, "hash-8", tmp_path / "s.mocb",
                                     coord_scale=PATCH_SIZE)
        bag = read_bag(out)
        np.testing.assert_array_equal(bag.coords, [[0, 0], [224, 0], [448, 224]])

    def test_negative_coords_parse(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["-224_0.png", "0_-448.png"])
        bag = read_bag(extract_patch_features(patches, "hash-8", tmp_path / "s.mocb"))
        np.testing.assert_array_equal(bag.coords, [[-224, 0], [0, -448]])

    def test_rerun_byte_identical(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["0_0.png", "224_0.png"])
        a = extract_patch_features(patches, "hash-16", tmp_path / "a.mocb")
        b = extract_patch_features(patches, "hash-16", tmp_path / "b.mocb")
        assert a.read_bytes() == b.read_bytes()

    def test_slide_id_and_label_overrides(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["0_0.png"])
        out = extract_patch_features(patches, "hash-8", tmp_path / "s.mocb",
                                     slide_id="renamed", label=2)
        bag = read_bag(out)
        assert bag.slide_id == "renamed"
        assert bag.label == 2

    def test_mixed_extensions_and_case(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["0_0.PNG", "224_0.jpeg", "448_0.tif"])
        assert read_bag(extract_patch_features(patches, "hash-8", tmp_path / "s.mocb")).n_patches == 3

    def test_non_image_files_ignored(self, tmp_path):
        patches = _make_patches(tmp_path / "s", ["0_0.png"])
        (patches / "notes.txt").write_text("not a patch")
        assert read_bag(extract_patch_features(patches, "hash-8", tmp_path / "s.mocb")).n_patches == 1

    def test_empty_dir_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(NoPatches):
            extract_patch_features(tmp_path / "empty", "hash-8", tmp_path / "x.mocb")

    def test_missing_dir_rejected(self, tmp_path):
        with pytest.raises(NoPatches):
            extract_patch_features(tmp_path / "absent", "hash-8", tmp_path / "x.mocb")
