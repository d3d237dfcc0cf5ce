import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gfpc import data
from gfpc.errors import ConfigError, DataError, InputError

TINY = data.SyntheticSceneParams(height=32, width=32, min_boxes=1,
                                 max_boxes=2, seed=77)


@pytest.fixture(scope="module")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    data.generate_synthetic(TINY, root, 6)
    return root


# -- manifest ------------------------------------------------------------

def test_manifest_roundtrip_sorted(tiny_root):
    m = data.load_manifest(tiny_root)
    assert len(m) == 6
    names = [e.rgb.name for e in m.entries]
    assert names == sorted(names)
    assert all(e.depth is not None for e in m.entries)


def test_manifest_missing_file_errors(tmp_path):
    with pytest.raises(DataError, match="no manifest.csv"):
        data.load_manifest(tmp_path)
    (tmp_path / "manifest.csv").write_text("rgb,depth\n")
    with pytest.raises(ConfigError, match="split"):
        data.load_manifest(tmp_path, split="val")


def test_manifest_header_must_contain_rgb(tmp_path):
    (tmp_path / "manifest.csv").write_text("image\nfoo.png\n")
    with pytest.raises(DataError, match="rgb column"):
        data.load_manifest(tmp_path)


def test_manifest_row_errors_carry_line_numbers(tmp_path):
    (tmp_path / "manifest.csv").write_text("rgb,depth\na.png,d.png\n,x.png\n")
    with pytest.raises(DataError, match="row 3"):
        data.load_manifest(tmp_path)
    (tmp_path / "manifest.csv").write_text("rgb,depth\na.png,d.png\n")
    with pytest.raises(DataError, match="row 2.*missing file"):
        data.load_manifest(tmp_path)


def test_manifest_unlabeled_split(tmp_path):
    data.write_rgb_png(tmp_path / "a.png", np.zeros((4, 4, 3)))
    (tmp_path / "manifest.csv").write_text("rgb\na.png\n")
    with pytest.raises(DataError, match="no depth path"):
        data.load_manifest(tmp_path)
    m = data.load_manifest(tmp_path, labeled=False)
    assert m.entries[0].depth is None


def test_manifest_missing_depth_file(tmp_path):
    data.write_rgb_png(tmp_path / "a.png", np.zeros((4, 4, 3)))
    (tmp_path / "manifest.csv").write_text("rgb,depth\na.png,d.png\n")
    with pytest.raises(DataError, match="missing file"):
        data.load_manifest(tmp_path)


# -- image and field files ----------------------------------------------

def test_rgb_png_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(8, 5, 3))
    p = tmp_path / "x.png"
    data.write_rgb_png(p, img)
    back = data.load_rgb(p)
    assert back.dtype == np.float32 and back.shape == (8, 5, 3)
    want = np.rint(img * 255.0) / 255.0
    np.testing.assert_allclose(back, want, atol=1e-7)
    data.write_rgb_png(p, back)  # quantized values survive exactly
    np.testing.assert_array_equal(data.load_rgb(p), back)


def test_load_rgb_rejects_other_modes(tmp_path):
    from PIL import Image
    p = tmp_path / "gray.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(p)
    with pytest.raises(DataError, match="mode"):
        data.load_rgb(p)


def test_depth_png_roundtrip_millimeters(tmp_path):
    meters = np.array([[0.0, 1.5], [65.535, 0.001]])
    p = tmp_path / "d.png"
    data.write_depth_png(p, meters)
    raw = data.load_depth_raw(p)
    assert raw.dtype == np.uint16
    np.testing.assert_array_equal(raw, [[0, 1500], [65535, 1]])


def test_depth_png_range_checks(tmp_path):
    with pytest.raises(DataError, match="16-bit"):
        data.write_depth_png(tmp_path / "d.png", np.array([[70.0]]))
    with pytest.raises(DataError, match="16-bit"):
        data.write_depth_png(tmp_path / "d.png", np.array([[-0.5]]))


def test_load_depth_raw_rejects_rgb(tiny_root):
    m = data.load_manifest(tiny_root)
    with pytest.raises(DataError, match="16-bit grayscale"):
        data.load_depth_raw(m.entries[0].rgb)


def test_raw_field_roundtrip(tmp_path):
    field = np.random.default_rng(3).normal(size=(7, 9)).astype(np.float32)
    p = tmp_path / "f.bin"
    data.write_raw_field(p, field)
    assert p.stat().st_size == 8 + 4 * 7 * 9
    back = data.read_raw_field(p)
    np.testing.assert_array_equal(back, field)
    assert back.flags.writeable


def test_raw_field_corruption(tmp_path):
    p = tmp_path / "f.bin"
    data.write_raw_field(p, np.ones((2, 2), dtype=np.float32))
    blob = p.read_bytes()
    p.write_bytes(blob[:6])
    with pytest.raises(DataError, match="truncated"):
        data.read_raw_field(p)
    p.write_bytes(blob[:-4])
    with pytest.raises(DataError, match="payload"):
        data.read_raw_field(p)
    with pytest.raises(DataError, match="2-D"):
        data.write_raw_field(p, np.ones(3, dtype=np.float32))


# -- half-resolution depth ----------------------------------------------

def test_halve_depth_worked_example():
    d = np.array([[1.0, 2.0, 7.0, 0.0],
                  [3.0, 4.0, 0.0, 0.0]])
    m = np.array([[1, 1, 1, 0],
                  [1, 1, 0, 0]], dtype=bool)
    out, mask = data.halve_depth(d, m)
    np.testing.assert_array_equal(out, [[2.5, 7.0]])
    np.testing.assert_array_equal(mask, [[True, True]])
    out2, mask2 = data.halve_depth(d, np.zeros_like(m))
    assert out2[0, 0] == 0.0 and not mask2.any()


@pytest.mark.parametrize("seed", range(4))
def test_halve_depth_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 9.0, size=(10, 8)).astype(np.float32)
    m = rng.uniform(size=d.shape) < 0.6
    got_d, got_m = data.halve_depth(d, m)
    want_d, want_m = oracles.halve_depth_oracle(d, m)
    np.testing.assert_allclose(got_d, want_d, atol=1e-6)
    np.testing.assert_array_equal(got_m, want_m)


def test_halve_depth_needs_even_dims():
    with pytest.raises(DataError, match="even"):
        data.halve_depth(np.ones((3, 4)), np.ones((3, 4), dtype=bool))


# -- sample loading ------------------------------------------------------

def test_load_sample_full_resolution(tiny_root):
    m = data.load_manifest(tiny_root)
    s = data.load_sample(m.entries[0])
    assert s.rgb.shape == (32, 32, 3) and s.rgb.dtype == np.float32
    assert s.depth.shape == (16, 16) and s.mask.shape == (16, 16)
    assert s.mask.all()                       # synthetic depth is dense
    assert TINY.min_depth <= s.depth.min()
    assert s.depth.max() <= TINY.max_depth + 1e-3


def test_load_sample_half_resolution(tmp_path):
    data.write_rgb_png(tmp_path / "a.png", np.zeros((8, 8, 3)))
    half = np.tile(np.array([[2.0, 0.0, 3.0, 4.0]]), (4, 1))
    data.write_depth_png(tmp_path / "d.png", half)
    entry = data.ManifestEntry(tmp_path / "a.png", tmp_path / "d.png")
    s = data.load_sample(entry)
    assert s.depth.shape == (4, 4)
    assert not s.mask[0, 1] and s.mask[0, 0]  # 0 mm means missing
    assert s.depth[0, 1] == 0.0
    assert s.depth[0, 2] == pytest.approx(3.0)


def test_load_sample_depth_scale(tmp_path):
    data.write_rgb_png(tmp_path / "a.png", np.zeros((4, 4, 3)))
    data.write_depth_png(tmp_path / "d.png", np.full((2, 2), 1.0))
    entry = data.ManifestEntry(tmp_path / "a.png", tmp_path / "d.png")
    s = data.load_sample(entry, depth_scale=2.0)
    assert s.depth[0, 0] == pytest.approx(2.0)


def test_load_sample_shape_mismatch(tmp_path):
    data.write_rgb_png(tmp_path / "a.png", np.zeros((8, 8, 3)))
    data.write_depth_png(tmp_path / "d.png", np.ones((3, 3)))
    entry = data.ManifestEntry(tmp_path / "a.png", tmp_path / "d.png")
    with pytest.raises(DataError, match="neither full nor half"):
        data.load_sample(entry)
    with pytest.raises(DataError, match="no depth path"):
        data.load_sample(data.ManifestEntry(tmp_path / "a.png", None))


def test_load_samples_and_images(tiny_root):
    m = data.load_manifest(tiny_root)
    samples = data.load_samples(m)
    imgs = data.load_images(m)
    assert len(samples) == len(imgs) == 6
    np.testing.assert_array_equal(imgs[0], samples[0].rgb)


# -- subsets -------------------------------------------------------------

def test_subset_basics():
    assert data.subset_indices(10, 1.0, 0) == list(range(10))
    idx = data.subset_indices(10, 0.25, 0)
    assert len(idx) == 3 and idx == sorted(idx)
    assert data.subset_indices(10, 0.25, 0) == idx     # deterministic


def test_subset_validation():
    with pytest.raises(InputError):
        data.subset_indices(0, 0.5, 0)
    with pytest.raises(InputError):
        data.subset_indices(5, 0.0, 0)
    with pytest.raises(InputError):
        data.subset_indices(5, 1.5, 0)


@given(n=st.integers(1, 60), seed=st.integers(0, 50),
       f1=st.floats(0.05, 1.0), f2=st.floats(0.05, 1.0))
@settings(max_examples=60)
def test_subsets_are_nested(n, seed, f1, f2):
    lo, hi = sorted((f1, f2))
    small = set(data.subset_indices(n, lo, seed))
    large = set(data.subset_indices(n, hi, seed))
    assert small <= large
    assert len(small) == math.ceil(lo * n)
    assert len(large) == math.ceil(hi * n)


def test_sample_subset(tiny_root):
    m = data.load_manifest(tiny_root)
    sub = data.sample_subset(m, 0.5, seed=3)
    assert len(sub) == 3
    assert set(sub.entries) <= set(m.entries)
    assert sub.root == m.root and sub.split == m.split


# -- synthetic scenes ----------------------------------------------------

def test_scene_params_validation():
    with pytest.raises(ConfigError):
        data.SyntheticSceneParams(height=1)
    with pytest.raises(ConfigError):
        data.SyntheticSceneParams(min_depth=5.0, max_depth=2.0)
    with pytest.raises(ConfigError):
        data.SyntheticSceneParams(min_boxes=4, max_boxes=2)
    with pytest.raises(ConfigError):
        data.SyntheticSceneParams(noise=-0.1)
    with pytest.raises(ConfigError):
        data.SyntheticSceneParams(tint_low=0.0)


def test_render_scene_ranges():
    p = data.SyntheticSceneParams(seed=9)
    rng = np.random.default_rng(9)
    for _ in range(5):
        rgb, depth = data.render_scene(rng, p)
        assert rgb.shape == (64, 64, 3) and depth.shape == (64, 64)
        assert 0.0 <= rgb.min() and rgb.max() <= 1.0
        assert p.min_depth <= depth.min() and depth.max() <= p.max_depth


def test_render_scene_single_box_geometry():
    p = data.SyntheticSceneParams(height=48, width=48, min_boxes=1,
                                  max_boxes=1, noise=0.0)
    rng = np.random.default_rng(21)
    rgb, depth = data.render_scene(rng, p)
    values = np.unique(depth)
    assert len(values) == 2 and values[-1] == p.max_depth
    box = depth == values[0]
    rows = np.flatnonzero(box.any(axis=1))
    cols = np.flatnonzero(box.any(axis=0))
    # occupied region is an axis-aligned filled rectangle
    assert box.sum() == len(rows) * len(cols)
    assert (np.diff(rows) == 1).all() and (np.diff(cols) == 1).all()
    # noise-free face shows exactly the tint and its darker rim
    colors = np.unique(rgb[box].reshape(-1, 3), axis=0)
    assert colors.shape[0] == 2
    np.testing.assert_allclose(colors[0], colors[1] * 0.35, atol=1e-12)
    corner = rgb[rows[0], cols[0]]
    inner = rgb[rows[0] + 1, cols[0] + 1]
    np.testing.assert_allclose(corner, inner * 0.35, atol=1e-12)


def test_nearer_box_wins_overlaps():
    p = data.SyntheticSceneParams(min_boxes=5, max_boxes=7, noise=0.0, seed=4)
    rng = np.random.default_rng(4)
    for _ in range(4):
        _, depth = data.render_scene(rng, p)
        # the far plane must survive somewhere and every painted depth is
        # the nearest surface at that pixel, so values never exceed it
        assert (depth == p.max_depth).any()
        assert depth.max() == p.max_depth


def test_size_tracks_inverse_depth():
    p = data.SyntheticSceneParams(height=60, width=60, min_boxes=1,
                                  max_boxes=1, noise=0.0)
    near_areas, far_areas = [], []
    rng = np.random.default_rng(11)
    for _ in range(40):
        _, depth = data.render_scene(rng, p)
        vals = np.unique(depth)
        if len(vals) < 2:
            continue
        d = vals[0]
        area = (depth == d).sum()
        (near_areas if d < 4.0 else far_areas).append(area)
    assert near_areas and far_areas
    assert np.mean(near_areas) > 2.5 * np.mean(far_areas)


def test_generate_synthetic_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    data.generate_synthetic(TINY, a, 3)
    data.generate_synthetic(TINY, b, 3)

    def digest(root):
        h = hashlib.sha256()
        for f in sorted(root.rglob("*")):
            if f.is_file():
                h.update(f.name.encode())
                h.update(f.read_bytes())
        return h.hexdigest()

    assert digest(a) == digest(b)
    with pytest.raises(InputError):
        data.generate_synthetic(TINY, tmp_path / "c", 0)


def test_generated_dataset_loads_end_to_end(tmp_path):
    data.generate_synthetic(TINY, tmp_path, 2)
    m = data.load_manifest(tmp_path)
    s = data.load_sample(m.entries[0])
    # stored depth quantizes to millimeters; half-res averaging stays close
    assert abs(s.depth.max() - TINY.max_depth) < 2e-3
