import struct
import warnings

import numpy as np
import pytest

from supscene import numerics as nx
from supscene.features import (AttentionSumWarning, ConfigurationError, FeatureBundle,
                               FeatureCorruptionError, FeatureFormatError, FeatureStore,
                               LastBlockStub, SynthConfig, check_attention, cls_attention,
                               jaccard, read_features, stub_attention_from_tokens,
                               synth_dataset, synth_scene, synth_views, write_features)
from supscene.model import SupSceneModel


def random_bundle(rng, C=5, H=3, W=4, Nh=2, image_id="img"):
    att = rng.uniform(size=(Nh, H * W))
    att /= att.sum(axis=1, keepdims=True)
    return FeatureBundle(rng.normal(size=(C, H, W)), att.reshape(Nh, H, W), image_id)


# --- cls attention ---------------------------------------------------------------


def test_identical_keys_give_uniform_attention():
    rng = np.random.default_rng(0)
    stub = LastBlockStub.init(6, 3, rng)
    patches = np.tile(rng.normal(size=6), (10, 1))
    A = cls_attention(stub, rng.normal(size=6), patches).data
    np.testing.assert_allclose(A, np.full((3, 10), 0.1), atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_attention_rows_are_distributions(seed):
    rng = np.random.default_rng(seed)
    stub = LastBlockStub.init(12, 3, rng, scale=3.0)
    A = cls_attention(stub, rng.normal(size=(2, 12)), rng.normal(size=(2, 16, 12))).data
    assert A.shape == (2, 3, 16)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_matches_explicit_per_head_scores():
    rng = np.random.default_rng(1)
    D, Nh, N = 8, 2, 5
    stub = LastBlockStub.init(D, Nh, rng)
    cls, patches = rng.normal(size=D), rng.normal(size=(N, D))
    q = cls @ stub.w_query.data
    k = patches @ stub.w_key.data
    dk = D // Nh
    for h in range(Nh):
        sl = slice(h * dk, (h + 1) * dk)
        scores = k[:, sl] @ q[sl] / np.sqrt(dk)
        expect = np.exp(scores - scores.max())
        expect /= expect.sum()
        np.testing.assert_allclose(cls_attention(stub, cls, patches).data[h], expect, atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_stub_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    D, Nh, N = 6, 3, 16
    stub = LastBlockStub.init(D, Nh, rng, scale=2.0)
    cls, patches = rng.normal(size=D), rng.normal(size=(N, D))
    probe = rng.normal(size=(Nh, N))

    def fn(wq, wk):
        s = LastBlockStub(wq, wk, Nh)
        return nx.reduce_sum(cls_attention(s, cls, patches) * probe)

    errs = nx.check_gradients(fn, [stub.w_query, stub.w_key])
    assert max(errs) <= 1e-4


def test_stub_shape_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        LastBlockStub.init(10, 3, rng)
    stub = LastBlockStub.init(6, 2, rng)
    with pytest.raises(ConfigurationError):
        cls_attention(stub, np.zeros(5), np.zeros((4, 5)))


def test_stub_attention_from_tokens_uses_the_token_mean():
    rng = np.random.default_rng(3)
    stub = LastBlockStub.init(8, 2, rng)
    tokens = rng.normal(size=(8, 9))
    A = stub_attention_from_tokens(stub, tokens).data
    B = cls_attention(stub, tokens.mean(axis=1), tokens.T).data
    np.testing.assert_allclose(A, B, atol=1e-15)


# --- synthetic scenes ------------------------------------------------------------


def test_jaccard_cases():
    assert jaccard(frozenset({1, 2}), frozenset({1, 2})) == 1.0
    assert jaccard(frozenset({1}), frozenset({2})) == 0.0
    assert jaccard(frozenset({1, 2, 3}), frozenset({2, 3, 4})) == 0.5


def test_identical_views_give_weight_one_and_disjoint_views_no_edge():
    cfg = SynthConfig(images=4, landmarks=40, window=6, keep_prob=1.0, jitter=0.0)
    g, _ = synth_scene(cfg, 0)
    views = synth_views(cfg, 0)
    # consecutive images are 10 landmarks apart with a 7-wide window: no overlap at all
    assert all(not (views[i] & views[j]) for i in range(4) for j in range(i + 1, 4))
    assert g.edges == ()
    dup = SynthConfig(images=2, landmarks=2, window=4, keep_prob=1.0, jitter=0.0)
    g2, _ = synth_scene(dup, 0)
    assert g2.edges == ((0, 1, 1.0),)


@pytest.mark.parametrize("seed", range(5))
def test_graph_weights_are_the_jaccard_of_views(seed):
    cfg = SynthConfig(images=12)
    g, bundles = synth_scene(cfg, seed, "t")
    views = synth_views(cfg, seed)
    for i in range(cfg.images):
        for j in range(i + 1, cfg.images):
            assert g.weight(g.node_ids[i], g.node_ids[j]) == jaccard(views[i], views[j])
    assert [b.image_id for b in bundles] == list(g.node_ids)


def test_noiseless_shared_landmarks_are_bit_identical():
    cfg = SynthConfig(noise=0.0)
    _, bundles = synth_scene(cfg, 4)
    a, b = bundles[0].tokens().T, bundles[1].tokens().T
    shared = {row.tobytes() for row in a} & {row.tobytes() for row in b}
    views = synth_views(cfg, 4)
    assert len(views[0] & views[1]) > 0
    assert len(shared) == len(views[0] & views[1])


def test_synthetic_bundles_are_well_formed():
    cfg = SynthConfig(images=5)
    _, bundles = synth_scene(cfg, 1)
    for b in bundles:
        assert b.dims == (cfg.channels, *cfg.grid, cfg.heads)
        assert check_attention(b)
        assert np.all(np.isfinite(b.features))


def test_synthetic_generation_is_deterministic():
    cfg = SynthConfig(images=5)
    g1, b1 = synth_scene(cfg, [3, 1], "x")
    g2, b2 = synth_scene(cfg, [3, 1], "x")
    assert g1 == g2
    assert all(x.features.tobytes() == y.features.tobytes() for x, y in zip(b1, b2))
    scenes = synth_dataset(cfg, 2, 3)
    assert [g.scene_id for g, _ in scenes] == ["scene000", "scene001"]
    assert scenes[1][0] == synth_scene(cfg, [3, 1], "scene001")[0]


@pytest.mark.parametrize("kwargs", [dict(landmarks=0), dict(grid=(0, 4)), dict(images=0),
                                    dict(keep_prob=0.0), dict(heads=2, distractor_heads=2)])
def test_bad_synth_configs(kwargs):
    with pytest.raises(ConfigurationError):
        SynthConfig(**kwargs)


def test_similarity_increases_with_overlap_under_linear_pooling():
    """Noiseless scene, equal landmark counts, mean pooling: sim is ordered like overlap."""
    cfg = SynthConfig(images=20, landmarks=60, window=8, keep_prob=1.0, jitter=0.0, noise=0.0,
                      grid=(3, 3), channels=512, semantic_scale=0.0, heads=2)
    g, bundles = synth_scene(cfg, 0)
    assert {len(v) for v in synth_views(cfg, 0)} == {9}
    model = SupSceneModel.init(cfg.channels, cfg.heads, 1, np.random.default_rng(0), mode="avg")
    desc = model.encode(np.stack([b.tokens() for b in bundles])).data
    S = desc @ desc.T
    D = g.dense()
    iu = np.triu_indices(cfg.images, k=1)
    o, s = D[iu], S[iu]
    levels = sorted(set(o))
    assert len(levels) >= 3
    for lo, hi in zip(levels, levels[1:]):
        assert s[o == lo].max() < s[o == hi].min()


# --- feature files --------------------------------------------------------------


def test_feature_file_round_trip_is_bit_identical(tmp_path):
    b = random_bundle(np.random.default_rng(0), image_id="scène_7")
    write_features(b, tmp_path / "f.ssfb")
    back = read_features(tmp_path / "f.ssfb")
    assert back.image_id == "scène_7"
    assert back.features.tobytes() == b.features.tobytes()
    assert back.attention.tobytes() == b.attention.tobytes()
    assert back.warnings == []


def test_feature_file_layout(tmp_path):
    b = random_bundle(np.random.default_rng(1), C=2, H=1, W=3, Nh=1, image_id="ab")
    write_features(b, tmp_path / "f.ssfb")
    raw = (tmp_path / "f.ssfb").read_bytes()
    assert raw[:4] == b"SSFB"
    assert struct.unpack_from("<H4I", raw, 4) == (1, 2, 1, 3, 1)
    assert len(raw) == 22 + 8 * (6 + 3) + 2 + 2
    assert raw[-4:] == struct.pack("<H", 2) + b"ab"


def test_truncated_and_foreign_files(tmp_path):
    b = random_bundle(np.random.default_rng(2))
    path = tmp_path / "f.ssfb"
    write_features(b, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:100])
    with pytest.raises(FeatureCorruptionError):
        read_features(path)
    path.write_bytes(raw[:10])
    with pytest.raises(FeatureCorruptionError):
        read_features(path)
    path.write_bytes(raw + b"xx")
    with pytest.raises(FeatureCorruptionError):
        read_features(path)
    path.write_bytes(b"JPEG" + raw[4:])
    with pytest.raises(FeatureFormatError):
        read_features(path)
    path.write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(FeatureFormatError):
        read_features(path)


def test_attention_not_summing_to_one_warns_but_loads(tmp_path):
    rng = np.random.default_rng(3)
    b = random_bundle(rng)
    att = b.attention.copy()
    att[1] *= 1.01
    bad = FeatureBundle(b.features, att, "bad")
    write_features(bad, tmp_path / "bad.ssfb")
    with pytest.warns(AttentionSumWarning):
        back = read_features(tmp_path / "bad.ssfb")
    assert len(back.warnings) == 1 and "[1]" in back.warnings[0]
    att2 = b.attention.copy()
    att2[0, 0, 0] += 5e-7  # inside the tolerance
    ok = FeatureBundle(b.features, att2, "ok")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_attention(ok)


def test_bundle_shape_checks():
    with pytest.raises(ConfigurationError):
        FeatureBundle(np.zeros((2, 3, 3)), np.zeros((1, 3, 4)), "x")
    with pytest.raises(ConfigurationError):
        FeatureBundle(np.zeros((2, 9)), np.zeros((1, 9)), "x")


def test_store(tmp_path):
    rng = np.random.default_rng(4)
    bundles = [random_bundle(rng, image_id=f"i{k}") for k in range(3)]
    for b in bundles:
        (tmp_path / "sub").mkdir(exist_ok=True)
        write_features(b, tmp_path / "sub" / f"{b.image_id}.ssfb")
    store = FeatureStore.from_dir(tmp_path)
    assert sorted(store.ids()) == ["i0", "i1", "i2"] and "i1" in store
    assert store.dims == (5, 3, 4, 2)
    with pytest.raises(ConfigurationError):
        store.add(random_bundle(rng, C=6, image_id="odd"))
