import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pacuda.scene import SceneSpec, SegmentMap, generate_scenes
from pacuda.slic import EmptyImage, SlicParams, enforce_connectivity, seed_grid, slic_segment


def _is_partition(seg: SegmentMap):
    present = np.unique(seg.data)
    return present.min() >= 1 and np.array_equal(present, np.arange(1, seg.count + 1))


def _each_segment_connected(seg: SegmentMap):
    four = ndimage.generate_binary_structure(2, 1)
    return all(ndimage.label(seg.data == k, structure=four)[1] == 1
               for k in range(1, seg.count + 1))


def test_single_segment():
    rng = np.random.default_rng(0)
    seg = slic_segment(rng.random((10, 13, 3)), SlicParams(k_s=1))
    assert seg.count == 1
    assert np.all(seg.data == 1)


def test_constant_image_gives_quadrants():
    # colour distance is zero, so the answer is the spatial Voronoi diagram of a 2x2 grid
    seg = slic_segment(np.full((8, 8, 3), 0.4), SlicParams(k_s=4, compactness=10))
    ys, xs = np.mgrid[0:8, 0:8]
    seeds = [(1.5, 1.5), (1.5, 5.5), (5.5, 1.5), (5.5, 5.5)]
    d = np.stack([(ys - y) ** 2 + (xs - x) ** 2 for y, x in seeds])
    oracle = np.argmin(d, axis=0) + 1
    assert seg.count == 4
    assert np.array_equal(seg.data, oracle)


def test_two_tone_split_at_colour_boundary():
    img = np.zeros((8, 8, 3))
    img[:, 4:] = 1.0
    seg = slic_segment(img, SlicParams(k_s=2, compactness=1))
    assert seg.count == 2
    assert np.all(seg.data[:, :4] == seg.data[0, 0])
    assert np.all(seg.data[:, 4:] == seg.data[0, 7])
    assert seg.data[0, 0] != seg.data[0, 7]


def test_two_tone_matches_brute_force_kmeans():
    # exhaustive check: no single-pixel reassignment lowers the 2-means cost
    img = np.zeros((8, 8, 3))
    img[:, 4:] = 1.0
    from skimage.color import rgb2lab
    lab = rgb2lab(img)
    seg = slic_segment(img, SlicParams(k_s=2, compactness=1)).data
    S = np.sqrt(64 / 2)
    ys, xs = np.mgrid[0:8, 0:8]
    feats = np.concatenate([lab, (ys[..., None] / S), (xs[..., None] / S)], axis=-1).reshape(-1, 5)
    labels = seg.ravel() - 1
    centers = np.stack([feats[labels == k].mean(0) for k in range(2)])
    d = ((feats[:, None, :] - centers[None]) ** 2).sum(-1)
    assert np.array_equal(np.argmin(d, axis=1), labels)


def test_empty_image():
    with pytest.raises(EmptyImage):
        slic_segment(np.zeros((0, 4, 3)))


def test_k_s_larger_than_image_rejected():
    with pytest.raises(ValueError):
        slic_segment(np.zeros((2, 2, 3)), SlicParams(k_s=5))


def test_seed_grid_is_roughly_square():
    assert seed_grid(64, 64, 25) == (5, 5)
    assert seed_grid(8, 8, 2) == (1, 2)
    assert seed_grid(32, 64, 8) == (2, 4)


# -- connectivity -------------------------------------------------------------

def test_connected_map_is_identity_up_to_renaming():
    data = np.array([[3, 3, 1], [3, 2, 1], [2, 2, 1]])
    out = enforce_connectivity(SegmentMap(data, 3), 1)
    assert out.count == 3
    assert len(set(zip(out.data.ravel(), data.ravel()))) == 3


def test_orphan_pixel_absorbed():
    data = np.full((5, 5), 2)
    data[2, 2] = 1
    out = enforce_connectivity(SegmentMap(data, 2), 2)
    assert out.count == 1
    assert np.all(out.data == 1)


def test_checkerboard_kept_when_min_size_is_one():
    data = (np.indices((4, 4)).sum(0) % 2) + 1
    out = enforce_connectivity(SegmentMap(data, 2), 1)
    # each pixel is its own 4-connected component
    assert out.count == 16
    assert _each_segment_connected(out)


def test_split_segment_becomes_two():
    data = np.array([[1, 2, 1], [1, 2, 1]])
    out = enforce_connectivity(SegmentMap(data, 2), 1)
    assert out.count == 3
    assert out.data.tolist() == [[1, 2, 3], [1, 2, 3]]


# -- properties ----------------------------------------------------------------

images = st.tuples(st.integers(4, 16), st.integers(4, 16), st.integers(0, 2 ** 32 - 1))


@settings(max_examples=25, deadline=None)
@given(images, st.integers(1, 12), st.floats(0.5, 40))
def test_output_is_connected_partition(shape, k_s, m):
    h, w, seed = shape
    img = np.random.default_rng(seed).random((h, w, 3))
    seg = slic_segment(img, SlicParams(k_s=min(k_s, h * w), compactness=m))
    seg.validate()
    assert _is_partition(seg)
    assert _each_segment_connected(seg)


@settings(max_examples=10, deadline=None)
@given(images)
def test_deterministic(shape):
    h, w, seed = shape
    img = np.random.default_rng(seed).random((h, w, 3))
    assert slic_segment(img, SlicParams(k_s=6)) == slic_segment(img, SlicParams(k_s=6))


@settings(max_examples=20, deadline=None)
@given(st.integers(6, 20), st.integers(6, 20), st.integers(1, 15), st.integers(1, 15))
def test_monotone_granularity_on_constant_images(h, w, a, b):
    a, b = sorted((a, b))
    img = np.full((h, w, 3), 0.3)
    ka = slic_segment(img, SlicParams(k_s=a)).count
    kb = slic_segment(img, SlicParams(k_s=b)).count
    assert ka <= kb


def _boundary(data):
    b = np.zeros(data.shape, dtype=bool)
    b[:, 1:] |= data[:, 1:] != data[:, :-1]
    b[:, :-1] |= data[:, 1:] != data[:, :-1]
    b[1:, :] |= data[1:, :] != data[:-1, :]
    b[:-1, :] |= data[1:, :] != data[:-1, :]
    return b


def boundary_recall(seg, labels, tol=2):
    gt = _boundary(labels)
    near = ndimage.binary_dilation(_boundary(seg), iterations=tol,
                                   structure=np.ones((3, 3), dtype=bool))
    return (gt & near).sum() / max(gt.sum(), 1)


@pytest.mark.parametrize("k_s", [25, 50])
def test_boundary_recall_on_generated_scenes(k_s):
    scenes = generate_scenes(SceneSpec(seed=21), 8, "source")
    hit = tot = 0
    for s in scenes:
        seg = slic_segment(s.image, SlicParams(k_s=k_s))
        gt = _boundary(s.labels)
        hit += boundary_recall(seg.data, s.labels) * gt.sum()
        tot += gt.sum()
    assert hit / tot >= 0.95
