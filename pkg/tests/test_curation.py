import json

import numpy as np
import pytest

from vizreward import curation, imaging
from vizreward.errors import KTooLarge, MissingDraft

from conftest import chart_image, rand_image


def entry(i, **kw):
    defaults = dict(
        id=f"e{i}",
        image_path=f"img{i}.png",
        code_path=f"code{i}.py",
        language="python",
    )
    defaults.update(kw)
    return curation.ManifestEntry(**defaults)


# ------------------------------------------------------------ manifest


def test_manifest_round_trip(tmp_path):
    entries = [
        entry(0),
        entry(1, split="rl"),
        entry(2, kind="refinement", draft_code_path="draft2.py"),
    ]
    path = tmp_path / "manifest.jsonl"
    curation.write_manifest(entries, path)
    assert curation.read_manifest(path) == entries


def test_manifest_entry_validation():
    with pytest.raises(ValueError):
        entry(0, id="")
    with pytest.raises(ValueError):
        entry(0, split="test")
    with pytest.raises(ValueError):
        entry(0, kind="refinement")  # no draft path


# ------------------------------------------------------------ phash


def test_phash_deterministic_64bit():
    img = chart_image(0, w=128, h=96)
    h1 = curation.phash64(img)
    h2 = curation.phash64(imaging.from_array(img.samples.copy()))
    assert h1 == h2
    assert h1.hamming(h2) == 0
    assert 0 <= h1.bits < (1 << 64)
    assert len(str(h1)) == 16


def test_phash_brightness_shift_stable():
    img = chart_image(1, w=128, h=96)
    arr = np.clip(img.samples.astype(np.int16), 0, 250).astype(np.uint8)
    base = imaging.from_array(arr)
    brighter = imaging.from_array(arr + 1)
    assert curation.phash64(base).hamming(curation.phash64(brighter)) <= 4


def test_phash_separates_distinct_images():
    h1 = curation.phash64(chart_image(2))
    h2 = curation.phash64(chart_image(3))
    assert h1.hamming(h2) > 6


def test_phash_metric_properties():
    hashes = [curation.phash64(chart_image(10 + i)) for i in range(6)]
    for a in hashes:
        assert a.hamming(a) == 0
    for a in hashes:
        for b in hashes:
            assert a.hamming(b) == b.hamming(a)
    for a in hashes:
        for b in hashes:
            for c in hashes:
                assert a.hamming(c) <= a.hamming(b) + b.hamming(c)


# ------------------------------------------------------------ dedup


def memory_loader(images):
    def load(e):
        img = images[e.id]
        if img is None:
            raise OSError("missing image")
        return img

    return load


def test_dedup_drops_duplicate():
    images = {"e0": chart_image(0), "e1": chart_image(0), "e2": chart_image(1)}
    result = curation.dedup(
        [entry(0), entry(1), entry(2)], threshold=0, loader=memory_loader(images)
    )
    assert [e.id for e in result.kept] == ["e0", "e2"]
    assert [e.id for e in result.dropped] == ["e1"]


def test_dedup_all_distant_kept():
    images = {f"e{i}": chart_image(100 + i) for i in range(8)}
    entries = [entry(i) for i in range(8)]
    result = curation.dedup(entries, threshold=0, loader=memory_loader(images))
    assert result.kept == entries


def test_dedup_matches_pairwise_oracle():
    images = {f"e{i}": chart_image(i % 5, w=96, h=64) for i in range(10)}
    entries = [entry(i) for i in range(10)]
    result = curation.dedup(entries, threshold=0, loader=memory_loader(images))

    hashes = {e.id: curation.phash64(images[e.id]) for e in entries}
    kept_oracle = []
    for e in entries:
        if all(hashes[e.id].hamming(hashes[k.id]) > 0 for k in kept_oracle):
            kept_oracle.append(e)
    assert result.kept == kept_oracle


def test_dedup_skips_unreadable():
    images = {"e0": chart_image(0), "e1": None, "e2": chart_image(1)}
    result = curation.dedup(
        [entry(0), entry(1), entry(2)], threshold=0, loader=memory_loader(images)
    )
    assert [e.id for e in result.kept] == ["e0", "e2"]
    assert len(result.skipped) == 1
    assert result.skipped[0][0].id == "e1"


def test_dedup_output_is_subsequence():
    images = {f"e{i}": chart_image(i % 4) for i in range(12)}
    entries = [entry(i) for i in range(12)]
    result = curation.dedup(entries, threshold=2, loader=memory_loader(images))
    it = iter(entries)
    assert all(e in it for e in result.kept)


def test_dedup_reads_files(tmp_path):
    paths = []
    for i in range(3):
        p = tmp_path / f"img{i}.png"
        p.write_bytes(imaging.encode_png(chart_image(i % 2)))
        paths.append(str(p))
    entries = [entry(i, image_path=paths[i]) for i in range(3)]
    result = curation.dedup(entries, threshold=0)
    assert [e.id for e in result.kept] == ["e0", "e1"]


# ------------------------------------------------------------ kmeans


def blobs(seed, n_per=30, dims=8, separation=10.0):
    rng = np.random.RandomState(seed)
    a = rng.normal(0.0, 1.0, size=(n_per, dims))
    b = rng.normal(separation, 1.0, size=(n_per, dims))
    return np.vstack([a, b]), np.array([0] * n_per + [1] * n_per)


def test_kmeans_single_cluster_converges_to_mean():
    rng = np.random.RandomState(0)
    x = rng.normal(0, 1, size=(40, 4))
    model = curation.minibatch_kmeans(x, k=1, batch=40, iters=3, seed=0)
    assert np.allclose(model.centroids[0], x.mean(axis=0), atol=1e-6)


def test_kmeans_two_blobs_pure():
    x, labels = blobs(1)
    model = curation.minibatch_kmeans(x, k=2, batch=20, iters=50, seed=0)
    assignments = np.array(model.assignments)
    # purity: each true blob maps to a single cluster
    for blob in (0, 1):
        vals = assignments[labels == blob]
        assert len(set(vals.tolist())) == 1
    assert assignments[labels == 0][0] != assignments[labels == 1][0]


def test_kmeans_deterministic():
    x, _ = blobs(2)
    m1 = curation.minibatch_kmeans(x, k=2, batch=16, iters=30, seed=7)
    m2 = curation.minibatch_kmeans(x, k=2, batch=16, iters=30, seed=7)
    assert np.array_equal(m1.centroids, m2.centroids)
    assert m1.assignments == m2.assignments


def test_kmeans_k_too_large():
    with pytest.raises(KTooLarge):
        curation.minibatch_kmeans(np.zeros((3, 2)), k=4)


def test_kmeans_objective_improves_over_init():
    for seed in range(3):
        rng = np.random.RandomState(seed)
        x = rng.normal(0, 1, size=(60, 6))
        init = curation.minibatch_kmeans(x, k=4, batch=20, iters=0, seed=seed)
        final = curation.minibatch_kmeans(x, k=4, batch=20, iters=60, seed=seed)
        assert curation.kmeans_inertia(x, final) <= curation.kmeans_inertia(x, init) + 1e-12


def test_kmeans_accepts_embedding_vectors():
    from vizreward.embedding import EmbedderSpec, embed

    spec = EmbedderSpec()
    vectors = [embed(spec, rand_image(s, w=32, h=32)) for s in range(6)]
    model = curation.minibatch_kmeans(vectors, k=2, batch=6, iters=10, seed=0)
    assert model.centroids.shape == (2, 1024)


# ------------------------------------------------------------ sampling


def make_model(sizes):
    assignments = []
    for c, size in enumerate(sizes):
        assignments.extend([c] * size)
    return curation.ClusterModel(
        k=len(sizes),
        centroids=np.zeros((len(sizes), 2)),
        assignments=tuple(assignments),
    )


def test_sample_saturation_returns_all():
    entries = [entry(i) for i in range(5)]
    model = make_model([3, 2])
    assert curation.diversity_sample(entries, model, n=5) == entries
    assert curation.diversity_sample(entries, model, n=50) == entries


def test_sample_largest_remainder_quotas():
    entries = [entry(i) for i in range(100)]
    model = make_model([60, 40])
    sampled = curation.diversity_sample(entries, model, n=10, seed=0)
    assert len(sampled) == 10
    by_cluster = [0, 0]
    for e in sampled:
        idx = int(e.id[1:])
        by_cluster[model.assignments[idx]] += 1
    assert by_cluster == [6, 4]


def test_sample_deterministic():
    entries = [entry(i) for i in range(50)]
    model = make_model([20, 15, 15])
    s1 = curation.diversity_sample(entries, model, n=12, seed=3)
    s2 = curation.diversity_sample(entries, model, n=12, seed=3)
    assert s1 == s2


def test_sample_quota_sums():
    entries = [entry(i) for i in range(37)]
    model = make_model([11, 9, 17])
    for n in (1, 5, 20, 36, 37, 40):
        sampled = curation.diversity_sample(entries, model, n=n, seed=1)
        assert len(sampled) == min(n, 37)


# ------------------------------------------------------------ refinement


def test_refinement_record_layout():
    e = entry(0, kind="refinement", draft_code_path="d.py")
    record = curation.build_refinement_record(e, "plt.plot([1])", "plt.plot([1,2])")
    user, assistant = record["conversations"]
    assert user["role"] == "user"
    assert "Previously, you generated an incomplete code implementation." in user["content"]
    assert "plt.plot([1])" in user["content"]
    assert "Please modify the previous code snippets" in user["content"]
    prefix_end = user["content"].index("plt.plot([1])")
    assert user["content"].index("Previously, you generated") < prefix_end
    assert user["content"].index("Please modify") > prefix_end
    assert assistant == {"role": "assistant", "content": "plt.plot([1,2])"}
    assert record["image"] == e.image_path


def test_refinement_record_missing_draft():
    e = entry(0, kind="refinement", draft_code_path="d.py")
    with pytest.raises(MissingDraft):
        curation.build_refinement_record(e, "", "gt")


def test_refinement_record_wrong_kind():
    with pytest.raises(ValueError):
        curation.build_refinement_record(entry(0), "draft", "gt")


def test_refinement_record_serialization_round_trip():
    e = entry(0, kind="refinement", draft_code_path="d.py")
    record = curation.build_refinement_record(e, "draft code", "gt code")
    assert curation.parse_record(curation.serialize_record(record)) == record
    assert json.loads(curation.serialize_record(record)) == record


# ------------------------------------------------------------ validation hook


def test_validate_entries_drops_failures(tmp_path):
    import sys

    good = tmp_path / "good.py"
    good.write_text("x = 1\n")
    bad = tmp_path / "bad.py"
    bad.write_text("def broken(:\n")
    entries = [
        entry(0, code_path=str(good)),
        entry(1, code_path=str(bad)),
    ]
    command = [sys.executable, "-m", "py_compile", "{input}"]
    result = curation.validate_entries(entries, command)
    assert [e.id for e in result.kept] == ["e0"]
    assert len(result.dropped) == 1
    assert result.dropped[0][0].id == "e1"


def test_validate_entries_command_needs_placeholder():
    with pytest.raises(ValueError):
        curation.validate_entries([], ["python3", "-m", "py_compile"])
