import numpy as np
import pytest

from hsdetect import scene
from hsdetect.envi_io import EnviHeader, SpectralCube
from hsdetect.errors import ValidationError
from hsdetect.scene import GroundTruthMask, Region


def make_cube(lines, samples, bands, region=None, seed=0):
    rng = np.random.default_rng(seed)
    header = EnviHeader(samples=samples, lines=lines, bands=bands,
                        data_type=4, interleave="bsq", byte_order=0)
    return SpectralCube(header=header,
                        values=rng.standard_normal((lines, samples, bands)),
                        region=region)


def test_crop_keeps_all_bands():
    cube = make_cube(500, 1060, 5)
    sub = scene.crop(cube, Region("targets", 100, 200, 50, 60))
    assert sub.values.shape == (50, 60, 5)
    assert np.array_equal(sub.values, cube.values[100:150, 200:260, :])


def test_identity_crop():
    cube = make_cube(8, 9, 3)
    sub = scene.crop(cube, Region("all", 0, 0, 8, 9))
    assert np.array_equal(sub.values, cube.values)


def test_crop_out_of_bounds():
    cube = make_cube(8, 9, 3)
    with pytest.raises(ValidationError, match="does not fit"):
        scene.crop(cube, Region("bad", 4, 0, 8, 9))


def test_chained_crops_use_absolute_coordinates():
    cube = make_cube(20, 30, 2)
    mid = scene.crop(cube, Region("mid", 5, 10, 10, 15))
    inner = scene.crop(mid, Region("inner", 7, 12, 3, 4))
    assert np.array_equal(inner.values, cube.values[7:10, 12:16, :])


def test_scene_split_extents():
    # a 500x1060 target region split at sample 610 gives 500x610 and 500x450
    region = Region("targets", 0, 0, 500, 1060)
    train, test = scene.split_train_test(region, 610)
    assert (train.lines, train.samples) == (500, 610)
    assert (test.lines, test.samples) == (500, 450)
    assert train.sample_offset == 0
    assert test.sample_offset == 610


def test_split_minimal_left():
    region = Region("r", 0, 0, 500, 1060)
    left, right = scene.split_train_test(region, 1)
    assert (left.samples, right.samples) == (1, 1059)


def test_split_rejects_degenerate_right():
    region = Region("r", 0, 0, 500, 1060)
    with pytest.raises(ValidationError, match="boundary"):
        scene.split_train_test(region, 1060)
    with pytest.raises(ValidationError, match="boundary"):
        scene.split_train_test(region, 0)


def test_split_disjoint_and_covering_property():
    rng = np.random.default_rng(11)
    for _ in range(50):
        samples = int(rng.integers(2, 400))
        region = Region("r", int(rng.integers(0, 50)), int(rng.integers(0, 50)),
                        int(rng.integers(1, 100)), samples)
        boundary = int(rng.integers(1, samples))
        left, right = scene.split_train_test(region, boundary)
        assert left.samples + right.samples == region.samples
        assert left.sample_offset + left.samples == right.sample_offset
        assert left.lines == right.lines == region.lines


def test_flatten_line_major_order():
    cube = make_cube(2, 3, 4)
    table = scene.flatten(cube)
    assert len(table) == 6
    assert np.array_equal(table.spectra[4], cube.values[1, 1, :])
    assert (table.line_index[4], table.sample_index[4]) == (1, 1)


def test_flatten_copies_labels_and_counts():
    cube = make_cube(10, 12, 3)
    labels = np.zeros((10, 12), dtype=np.uint8)
    labels[2, 3] = labels[7, 11] = 1
    mask = GroundTruthMask(region=scene.region_of(cube), labels=labels)
    table = scene.flatten(cube, mask)
    assert table.labels.sum() == 2
    assert table.labels[2 * 12 + 3] == 1


def test_flatten_empty_mask_all_zero():
    cube = make_cube(4, 4, 2)
    mask = GroundTruthMask(region=scene.region_of(cube),
                           labels=np.zeros((4, 4), dtype=np.uint8))
    table = scene.flatten(cube, mask)
    assert table.labels.sum() == 0


def test_flatten_mask_misaligned():
    cube = make_cube(4, 4, 2)
    mask = GroundTruthMask(region=Region("other", 0, 0, 4, 5),
                           labels=np.zeros((4, 5), dtype=np.uint8))
    with pytest.raises(ValidationError, match="aligned"):
        scene.flatten(cube, mask)


def test_flatten_of_crop_matches_cropped_coordinates():
    rng = np.random.default_rng(23)
    cube = make_cube(15, 17, 3, seed=2)
    for _ in range(20):
        l0 = int(rng.integers(0, 14))
        nl = int(rng.integers(1, 15 - l0))
        s0 = int(rng.integers(0, 16))
        ns = int(rng.integers(1, 17 - s0))
        sub = scene.crop(cube, Region("w", l0, s0, nl, ns))
        table = scene.flatten(sub)
        # every row must equal the parent pixel at the absolute coordinates
        parent_lines = table.line_index + l0
        parent_samples = table.sample_index + s0
        expect = cube.values[parent_lines, parent_samples, :]
        assert np.array_equal(table.spectra, expect)


def test_positive_count_preserved_through_crop_and_flatten():
    rng = np.random.default_rng(9)
    cube = make_cube(20, 20, 2, seed=3)
    labels = (rng.random((20, 20)) < 0.15).astype(np.uint8)
    mask = GroundTruthMask(region=scene.region_of(cube), labels=labels)
    region = Region("w", 3, 5, 10, 8)
    sub_mask = scene.crop_mask(mask, region)
    assert sub_mask.positive_count == int(labels[3:13, 5:13].sum())
    table = scene.flatten(scene.crop(cube, region), sub_mask)
    assert int(table.labels.sum()) == sub_mask.positive_count


def test_region_validation():
    with pytest.raises(ValidationError):
        Region("bad", -1, 0, 2, 2)
    with pytest.raises(ValidationError):
        Region("bad", 0, 0, 0, 2)


def test_load_presets(tmp_path):
    p = tmp_path / "regions.txt"
    p.write_text(
        "# scene layout\n"
        "full = 0, 0, 1705, 3461\n"
        "targets = 600, 1200, 500, 1060\n"
        "train = 600, 1200, 500, 610\n"
        "test = 600, 1810, 500, 450\n"
    )
    presets = scene.load_presets(p)
    assert presets["targets"].lines == 500
    assert presets["test"].sample_offset == 1810
    assert presets["full"].contains(presets["train"])
    assert presets["full"].contains(presets["test"])


def test_load_presets_bad_line(tmp_path):
    p = tmp_path / "regions.txt"
    p.write_text("targets = 1, 2, 3\n")
    with pytest.raises(ValidationError, match="4 comma-separated"):
        scene.load_presets(p)
