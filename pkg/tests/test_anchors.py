import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgha.anchors import (
    ReferencePool,
    build_anchor_set,
    compute_weights,
    load_pool,
    manifest_text,
    rank_topk,
    read_manifest,
    select_topk,
    write_manifest,
)
from sgha.errors import EmptyPoolError, ImageFormatError, ParameterError
from sgha.io import write_ppm
from sgha.numerics import cosine_similarity
from sgha.surrogate import encode_image, encode_text, tokenize
from sgha.synthetic import synthetic_images

from conftest import SMALL

TEXT = tokenize("a striped pattern")


class TestLoadPool:
    def test_three_images_sorted_by_name(self, tmp_path, rng):
        imgs = [np.round(rng.uniform(size=SMALL.image_shape) * 255) / 255 for _ in range(3)]
        for name, im in zip(["c", "a", "b"], imgs):
            write_ppm(tmp_path / f"{name}.ppm", im)
        pool = load_pool(tmp_path, SMALL.image_shape)
        assert [e.id for e in pool.entries] == ["a", "b", "c"]
        np.testing.assert_array_equal(pool.entries[2].image, imgs[0])

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyPoolError):
            load_pool(tmp_path, SMALL.image_shape)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(EmptyPoolError):
            load_pool(tmp_path / "nope", SMALL.image_shape)

    def test_wrong_size_names_the_file(self, tmp_path):
        write_ppm(tmp_path / "good.ppm", np.zeros(SMALL.image_shape))
        write_ppm(tmp_path / "odd.ppm", np.zeros((8, 8, 3)))
        with pytest.raises(ImageFormatError, match="odd.ppm"):
            load_pool(tmp_path, SMALL.image_shape)

    def test_duplicate_ids(self):
        with pytest.raises(ParameterError):
            ReferencePool.from_images([np.zeros(SMALL.image_shape)] * 2, ids=["x", "x"])


def _brute_force_topk(pool, model, tokens, k):
    te = encode_text(model, tokens)[0]
    scored = [(-cosine_similarity(encode_image(model, e.image)[0], te), e.id) for e in pool.entries]
    return [i for _, i in sorted(scored)[:k]]


class TestSelectTopK:
    def test_k_equals_pool_size_returns_all(self, small_model, small_pool):
        picked = select_topk(small_pool, small_model, TEXT, len(small_pool))
        assert sorted(e.id for e, _ in picked) == sorted(e.id for e in small_pool.entries)
        sims = [s for _, s in picked]
        assert sims == sorted(sims, reverse=True)

    def test_duplicate_ties_resolved_by_id(self, small_model, small_pool):
        img = small_pool.entries[0].image
        pool = ReferencePool.from_images([img, img, small_pool.entries[1].image], ids=["b", "a", "c"])
        picked = select_topk(pool, small_model, TEXT, 2)
        if picked[0][1] == picked[1][1]:
            assert [e.id for e, _ in picked] == ["a", "b"]

    def test_matches_brute_force(self, small_model):
        pool = ReferencePool.from_images(synthetic_images(12, seed=5, size=SMALL.image_size))
        got = [e.id for e, _ in select_topk(pool, small_model, TEXT, 5)]
        assert got == _brute_force_topk(pool, small_model, TEXT, 5)

    @pytest.mark.parametrize("k", [0, 7])
    def test_k_out_of_range(self, small_model, small_pool, k):
        with pytest.raises(ParameterError):
            select_topk(small_pool, small_model, TEXT, k)


@st.composite
def scored_pools(draw):
    n = draw(st.integers(1, 15))
    ids = draw(st.lists(st.text("abcdef", min_size=1, max_size=4), min_size=n, max_size=n, unique=True))
    # coarse grid forces frequent ties
    sims = draw(st.lists(st.integers(-4, 4).map(lambda i: i / 4), min_size=n, max_size=n))
    k = draw(st.integers(1, n))
    return ids, sims, k


@given(scored_pools())
@settings(max_examples=150)
def test_rank_topk_matches_sort_oracle(case):
    ids, sims, k = case
    oracle = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[:k]
    got = rank_topk(ids, sims, k)
    assert got == oracle
    chosen = set(got)
    worst = min(sims[i] for i in got)
    assert all(sims[i] <= worst for i in range(len(ids)) if i not in chosen)


class TestAnchorSet:
    layers = (2, 3, 4)

    def test_weights_are_temperature_softmax(self):
        w = compute_weights([0.9, 0.7, 0.5], 5.0)
        e = np.exp(np.array([0.9, 0.7, 0.5]) / 5.0)
        np.testing.assert_allclose(w, e / e.sum(), rtol=1e-14)

    def test_single_anchor_targets_are_its_features(self, small_model, small_pool):
        a = build_anchor_set(small_pool, small_model, TEXT, 1, 5.0, self.layers)
        assert a.weights.tolist() == [1.0]
        emb, taps = encode_image(small_model, a.anchors[0], self.layers)
        np.testing.assert_array_equal(a.embedding_targets[0], emb)
        for t in taps:
            np.testing.assert_array_equal(a.layer_targets[t.layer_index].cls_target, t.cls)
            np.testing.assert_array_equal(a.layer_targets[t.layer_index].pooled_target, t.pooled)

    def test_identical_anchors_reproduce_the_anchor(self, small_model, small_pool):
        img = small_pool.entries[2].image
        pool = ReferencePool.from_images([img] * 3)
        a = build_anchor_set(pool, small_model, TEXT, 3, 5.0, self.layers)
        _, taps = encode_image(small_model, img, self.layers)
        for t in taps:
            np.testing.assert_allclose(a.layer_targets[t.layer_index].cls_target, t.cls, atol=1e-12)

    def test_weighted_sum_naive_oracle(self, small_model, small_pool):
        a = build_anchor_set(small_pool, small_model, TEXT, 3, 5.0, self.layers)
        feats = [encode_image(small_model, im, self.layers)[1] for im in a.anchors]
        for li, l in enumerate(self.layers):
            cls = np.zeros(SMALL.width)
            pooled = np.zeros(SMALL.width)
            for k in range(3):
                for j in range(SMALL.width):
                    cls[j] += a.weights[k] * feats[k][li].cls[j]
                    pooled[j] += a.weights[k] * feats[k][li].pooled[j]
            np.testing.assert_allclose(a.layer_targets[l].cls_target, cls, atol=1e-12)
            np.testing.assert_allclose(a.layer_targets[l].pooled_target, pooled, atol=1e-12)

    def test_deterministic(self, small_model, small_pool):
        a = build_anchor_set(small_pool, small_model, TEXT, 3, 5.0, self.layers)
        b = build_anchor_set(small_pool, small_model, TEXT, 3, 5.0, self.layers)
        assert a.checksum() == b.checksum()

    def test_targets_are_read_only(self, small_model, small_pool):
        a = build_anchor_set(small_pool, small_model, TEXT, 2, 5.0, self.layers)
        with pytest.raises(ValueError):
            a.layer_targets[2].cls_target[0] = 0.0
        with pytest.raises(ValueError):
            a.embedding_targets[0, 0] = 0.0

    def test_weight_sum_and_order(self, small_model, small_pool):
        a = build_anchor_set(small_pool, small_model, TEXT, 4, 5.0, self.layers)
        assert abs(a.weights.sum() - 1.0) < 1e-12
        assert all(a.weights[i] >= a.weights[i + 1] for i in range(3))


def test_manifest_roundtrip(small_model, small_pool, tmp_path):
    a = build_anchor_set(small_pool, small_model, TEXT, 3, 5.0, (2, 3, 4))
    p = tmp_path / "anchors.txt"
    write_manifest(a, p, {"K": 3, "tau": 5.0})
    header, rows = read_manifest(p)
    assert header == {"K": "3", "tau": "5.0"}
    assert [r[0] for r in rows] == list(a.ids)
    assert [r[1] for r in rows] == a.similarities.tolist()
    assert [r[2] for r in rows] == a.weights.tolist()
    assert p.read_text() == manifest_text(a, {"K": 3, "tau": 5.0})
