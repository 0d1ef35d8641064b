import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import peak_prominences

from pacuda.depth import (AllDepthMissing, DepthHistogram, DepthSegParams, cluster_by_peaks,
                          depth_histogram, depth_segment, find_prominent_peaks, prominence)


def _hist(mass):
    mass = np.asarray(mass, dtype=np.float64)
    return DepthHistogram(np.arange(mass.size + 1, dtype=np.float64), mass)


def test_constant_depth_is_one_bin():
    h = depth_histogram(np.full((4, 4), 7.0), 10)
    assert h.mass.max() == 1.0 and np.count_nonzero(h.mass) == 1
    assert np.all(np.diff(h.edges) > 0)
    peaks = find_prominent_peaks(h, 0.0025)
    assert peaks.prominences.tolist() == [1.0]


def test_two_clusters_land_in_end_bins():
    d = np.array([5.0] * 50 + [50.0] * 50)
    h = depth_histogram(d, 10)
    expected = np.zeros(10)
    expected[0] = expected[-1] = 0.5
    assert np.array_equal(h.mass, expected)
    assert h.edges[0] == 5.0 and h.edges[-1] == 50.0


def test_missing_pixels_are_excluded():
    d = np.array([0.0, 0.0, 3.0, 4.0])
    h = depth_histogram(d, 2)
    assert h.mass.tolist() == [0.5, 0.5]


def test_all_missing():
    with pytest.raises(AllDepthMissing):
        depth_histogram(np.zeros((3, 3)), 10)


def test_two_symmetric_peaks():
    mass = np.zeros(10)
    mass[1] = mass[8] = 0.5
    p = find_prominent_peaks(_hist(mass), 0.0025)
    assert p.bins.tolist() == [1, 8]
    assert p.prominences.tolist() == [0.5, 0.5]


def test_fallback_to_global_max():
    p = find_prominent_peaks(_hist([0.4, 0.3, 0.3]), 0.5)
    assert p.bins.tolist() == [0]


def test_plateau_collapses_to_leftmost_bin():
    p = find_prominent_peaks(_hist([0.1, 0.3, 0.3, 0.3, 0.0]), 0.0)
    assert p.bins.tolist() == [1]


def test_one_peak_cluster():
    d = np.array([[0.0, 3.0], [4.0, 9.0]])
    seg = cluster_by_peaks(d, np.array([5.0]))
    assert seg.data.tolist() == [[0, 1], [1, 1]]


def test_nearest_peak_example():
    seg = cluster_by_peaks(np.array([[5.0, 50.0]]), np.array([7.25, 47.75]))
    assert seg.data.tolist() == [[1, 2]]


def test_tie_goes_to_lower_peak():
    seg = cluster_by_peaks(np.array([[2.0, 3.0, 4.0]]), np.array([2.0, 4.0]))
    # 3.0 is equidistant
    assert seg.data.tolist() == [[1, 1, 2]]


def test_histogram_csv(tmp_path):
    h = depth_histogram(np.array([1.0, 2.0, 2.0, 3.0]), 3)
    h.to_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "bin_center,mass"
    assert len(rows) == 4
    assert float(rows[2].split(",")[1]) == 0.5


# -- properties ----------------------------------------------------------------

masses = arrays(np.float64, st.integers(2, 30), elements=st.integers(0, 20).map(float))


@settings(max_examples=200, deadline=None)
@given(masses)
def test_prominence_matches_scipy_on_zero_padded_histogram(raw):
    # padding with zeros reproduces the boundary base of 0
    mass = raw / max(raw.sum(), 1.0)
    padded = np.concatenate([[0.0], mass, [0.0]])
    peaks = find_prominent_peaks(_hist(mass), 0.0)
    if mass.max() == 0:
        return
    oracle = peak_prominences(padded, peaks.bins + 1)[0]
    assert np.allclose(peaks.prominences, oracle, rtol=0, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(masses, st.floats(0.0, 0.3))
def test_peak_invariants(raw, delta):
    mass = raw / max(raw.sum(), 1.0)
    hist = _hist(mass)
    p = find_prominent_peaks(hist, delta)
    assert p.bins.size >= 1
    assert np.all(np.diff(p.centers) > 0)
    if p.bins.size > 1 or p.prominences[0] >= delta:
        assert np.all(p.prominences >= delta)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(0, 100)),
       st.lists(st.floats(0.5, 100), min_size=1, max_size=6, unique=True))
def test_clustering_matches_exhaustive_argmin(depth, centers):
    centers = np.sort(np.array(centers))
    seg = cluster_by_peaks(depth, centers)
    expected = np.zeros(depth.shape, dtype=np.int64)
    for idx, v in np.ndenumerate(depth):
        if v > 0:
            dist = [abs(v - c) for c in centers]
            expected[idx] = dist.index(min(dist)) + 1
    # compare up to compaction of empty peaks
    pairs = set(zip(seg.data.ravel().tolist(), expected.ravel().tolist()))
    assert len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})
    assert np.array_equal(seg.data == 0, depth <= 0)
    assert seg.count <= centers.size
    # compaction keeps peak order
    assert np.all(np.diff([b for _, b in sorted(pairs)]) > 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(0, 1000)),
       st.integers(2, 300))
def test_mass_conservation(depth, bins):
    if not np.any(depth > 0):
        return
    h = depth_histogram(depth, bins)
    assert abs(h.mass.sum() - 1.0) <= 1e-12
    assert np.all(h.mass >= 0)
    assert np.all(np.diff(h.edges) > 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(5, 200), elements=st.floats(0.1, 100)),
       st.sampled_from([0.5, 2.0, 4.0, 0.125]))
def test_prominence_invariant_to_depth_scaling(depth, scale):
    # power-of-two scales keep the bin arithmetic exact
    a = find_prominent_peaks(depth_histogram(depth, 50), 0.0025)
    b = find_prominent_peaks(depth_histogram(depth * scale, 50), 0.0025)
    assert np.array_equal(a.bins, b.bins)
    assert np.array_equal(a.prominences, b.prominences)


def test_separated_layers_each_get_a_segment():
    rng = np.random.default_rng(3)
    layers = [10.0, 25.0, 40.0, 80.0]
    depth = np.concatenate([rng.normal(c, 0.3, 500) for c in layers]).reshape(40, 50)
    seg = depth_segment(depth, DepthSegParams())
    assert seg.count == len(layers)
    for c in layers:
        ids = np.unique(seg.data[np.abs(depth - c) < 2])
        assert ids.size == 1


def test_prominence_direct():
    m = np.array([0.1, 0.4, 0.2, 0.3, 0.0])
    assert prominence(m, 1) == pytest.approx(0.4)
    assert prominence(m, 3) == pytest.approx(0.1)
