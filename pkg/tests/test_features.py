import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partial_reid.errors import DegenerateLabelsError, FormatError, ShapeError, TooSmallError
from partial_reid.features import (CombinedFeature, FeatureRecord, HistogramEmbedder, PrecomputedEmbedder,
                                   StrideClassifier, StrideFeatures, combine, extract_strides, feature_distance,
                                   histogram_embed, identity_key, preset_256, read_feature_file,
                                   stride_bounds, stride_cross_entropy, train_stride_classifier,
                                   write_feature_file)
from partial_reid.imaging import ImageBuffer
from partial_reid.rng import substream


def test_even_split():
    assert np.diff(stride_bounds(12, 6)).tolist() == [2] * 6


def test_uneven_split_puts_remainder_last():
    assert np.diff(stride_bounds(13, 6)).tolist() == [2, 2, 2, 2, 2, 3]


def test_single_stride_is_whole_image():
    img = ImageBuffer(np.random.default_rng(0).random((7, 3, 3)))
    (band,) = extract_strides(img, 1)
    assert band == img


def test_too_small():
    with pytest.raises(TooSmallError):
        stride_bounds(5, 6)


@given(st.integers(1, 500), st.integers(1, 50))
def test_bands_partition_height(h, n):
    if h < n:
        return
    b = stride_bounds(h, n)
    assert b[0] == 0 and b[-1] == h
    assert all(x < y for x, y in zip(b, b[1:]))


def test_constant_image_one_hot():
    f = histogram_embed(ImageBuffer.constant(4, 12, 0.3), n=6, bins_per_channel=10)
    expected = np.zeros(10)
    expected[3] = 1.0
    for row in f.vectors:
        np.testing.assert_array_equal(row.reshape(3, 10), np.tile(expected, (3, 1)))


def test_two_stride_black_white():
    data = np.zeros((4, 2, 3))
    data[2:] = 1.0
    f = histogram_embed(ImageBuffer(data), n=2, bins_per_channel=2)
    np.testing.assert_array_equal(f.vectors[0], [1, 0] * 3)
    np.testing.assert_array_equal(f.vectors[1], [0, 1] * 3)


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_histogram_is_pixel_order_invariant_within_strides(seed):
    rng = np.random.default_rng(seed)
    data = rng.random((12, 5, 3))
    shuffled = data.copy()
    for lo in range(0, 12, 2):
        band = shuffled[lo:lo + 2].reshape(-1, 3)
        shuffled[lo:lo + 2] = band[rng.permutation(len(band))].reshape(2, 5, 3)
    a = histogram_embed(ImageBuffer(data), 6, 8)
    b = histogram_embed(ImageBuffer(shuffled), 6, 8)
    np.testing.assert_array_equal(a.vectors, b.vectors)


@settings(max_examples=30)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(2, 40))
def test_channel_histograms_sum_to_one(seed, n, bins):
    img = ImageBuffer(np.random.default_rng(seed).random((12, 4, 3)))
    f = histogram_embed(img, n, bins)
    np.testing.assert_allclose(f.vectors.reshape(n, 3, bins).sum(axis=2), 1.0, atol=1e-12)


def test_embedder_is_deterministic_and_shape_stable():
    emb = HistogramEmbedder(dim=20, seed=3)
    rng = np.random.default_rng(1)
    a, b = (ImageBuffer(rng.random((24, 8, 3))) for _ in range(2))
    assert np.array_equal(emb(a).vectors, HistogramEmbedder(dim=20, seed=3)(a).vectors)
    assert emb(a).vectors.shape == emb(b).vectors.shape == (6, 20)


def test_default_dim_is_raw_histogram():
    assert HistogramEmbedder().out_dim == 96


def test_combine_length():
    h = StrideFeatures(np.ones((2, 4)))
    assert len(combine(h, h)) == 16


def test_preset_256_length():
    emb = preset_256()
    img = ImageBuffer(np.random.default_rng(2).random((96, 32, 3)))
    f = combine(emb(img), emb(img))
    assert (f.n_strides, f.dim, f.sources, len(f)) == (6, 256, 2, 3072)


def test_combine_with_self_duplicates_strides():
    v = np.random.default_rng(3).random((3, 5))
    f = combine(StrideFeatures(v), StrideFeatures(v))
    np.testing.assert_array_equal(f.vectors, np.hstack([v, v]))


def test_combine_shape_mismatch():
    with pytest.raises(ShapeError):
        combine(StrideFeatures(np.ones((2, 3))), StrideFeatures(np.ones((2, 4))))


def test_distance_cases():
    a = CombinedFeature(np.array([[0.0, 0.0]]), sources=1)
    b = CombinedFeature(np.array([[3.0, 4.0]]), sources=1)
    assert feature_distance(a, a) == 0.0 and feature_distance(a, b) == 5.0


@settings(max_examples=100)
@given(st.integers(0, 10**6))
def test_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (CombinedFeature(rng.normal(size=(3, 4))) for _ in range(3))
    oracle = math.sqrt(sum((x - y) ** 2 for x, y in zip(a.flat(), b.flat())))
    assert abs(feature_distance(a, b) - oracle) <= 1e-12
    assert feature_distance(a, b) == feature_distance(b, a)
    assert feature_distance(a, c) <= feature_distance(a, b) + feature_distance(b, c) + 1e-9


def _separable(n_per=10, seed=0):
    rng = np.random.default_rng(seed)
    feats = []
    for label, centre in ((0, -1.0), (1, 1.0)):
        for _ in range(n_per):
            feats.append((CombinedFeature(centre + 0.3 * rng.normal(size=(3, 4))), label))
    return feats


def test_zero_init_loss_is_n_ln_k():
    feats = _separable()
    fit = train_stride_classifier(feats, steps=1, lr=0.0)
    assert abs(fit.trace[0] - 3 * math.log(2)) <= 1e-9


def test_lr_zero_leaves_parameters():
    feats = _separable()
    init = StrideClassifier(np.ones((3, 2, 4)), np.ones((3, 2)), [0, 1])
    fit = train_stride_classifier(feats, steps=5, lr=0.0, init=init)
    np.testing.assert_array_equal(fit.classifier.weight, init.weight)


def test_separable_training_contracts():
    fit = train_stride_classifier(_separable(), steps=500, lr=0.1)
    assert fit.trace[-1] < 0.1 * fit.trace[0]
    assert all(math.isfinite(v) for v in fit.trace)


def test_single_identity_rejected():
    with pytest.raises(DegenerateLabelsError):
        train_stride_classifier([(CombinedFeature(np.ones((2, 2))), "a")] * 3, steps=1, lr=0.1)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    clf = StrideClassifier(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3)), [0, 1, 2])
    x = rng.normal(size=(5, 2, 4))
    y = rng.integers(0, 3, size=5)
    _, dw, _ = stride_cross_entropy(clf, x, y)
    num = np.zeros_like(dw)
    for idx in np.ndindex(*dw.shape):
        for sign in (1, -1):
            w = clf.weight.copy()
            w[idx] += sign * 1e-5
            num[idx] += sign * stride_cross_entropy(StrideClassifier(w, clf.bias, clf.classes), x, y)[0] / 2e-5
    assert np.max(np.abs(num - dw)) / np.max(np.abs(dw)) < 1e-4


def test_learned_projection_path():
    fit = train_stride_classifier(_separable(), steps=50, lr=0.1)
    proj = fit.classifier.as_projection()
    h = StrideFeatures(np.ones((3, 2)))
    out = combine(h, h, proj)
    assert out.vectors.shape == (3, 2) and out.sources == 1


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    recs = [FeatureRecord(i, i % 2, CombinedFeature(rng.random((6, 8)).astype(np.float32))) for i in range(4)]
    recs.append(FeatureRecord("person-x", 3, CombinedFeature(rng.random((6, 8)).astype(np.float32))))
    write_feature_file(tmp_path / "f.bin", recs)
    ff = read_feature_file(tmp_path / "f.bin")
    assert (ff.n_strides, ff.dim, ff.sources) == (6, 4, 2)
    assert [r.identity for r in ff.records] == [0, 1, 2, 3, identity_key("person-x")]
    for a, b in zip(recs, ff.records):
        np.testing.assert_array_equal(a.feature.vectors, b.feature.vectors)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:6] == b"PRIDF1" and len(raw) == 6 + 16 + 5 * (12 + 4 * 48)


def test_feature_file_rejects_truncation(tmp_path):
    write_feature_file(tmp_path / "f.bin", [FeatureRecord(1, 0, CombinedFeature(np.ones((2, 2))))])
    (tmp_path / "g.bin").write_bytes((tmp_path / "f.bin").read_bytes()[:-3])
    with pytest.raises(FormatError):
        read_feature_file(tmp_path / "g.bin")


def test_precomputed_embedder(tmp_path):
    table = {"a": np.ones((6, 3)), "b": np.zeros((6, 3))}
    np.savez(tmp_path / "t.npz", **table)
    emb = PrecomputedEmbedder.from_npz(tmp_path / "t.npz")
    np.testing.assert_array_equal(emb("a").vectors, table["a"])


def test_minibatch_classifier_is_deterministic():
    feats = _separable()
    a = train_stride_classifier(feats, 20, 0.1, rng=substream(1, 0), batch_size=8)
    b = train_stride_classifier(feats, 20, 0.1, rng=substream(1, 0), batch_size=8)
    assert a.trace == b.trace
