import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from supscene import numerics as nx
from supscene.loss import (LossConfig, similarity_matrix, soft_supcon_loss, soft_weight_matrix,
                           valid_anchor_count)
from supscene.numerics import Tensor


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_overlap(rng, n, zero_frac=0.3):
    O = rng.uniform(0.01, 1.0, size=(n, n))
    O = np.triu(O, 1)
    O[np.triu(rng.uniform(size=(n, n)) < zero_frac, 1)] = 0.0
    O = O + O.T
    np.fill_diagonal(O, 1.0)
    return O


# --- weights --------------------------------------------------------------------


def test_weight_branches():
    W = soft_weight_matrix(np.array([[1.0, 0.5, 0.1], [0.5, 1.0, 0.0], [0.1, 0.0, 1.0]]))
    hi = float(mpmath.power(mpmath.mpf("0.5"), mpmath.mpf("0.7")))
    lo = float(mpmath.power(mpmath.mpf("0.1"), 1 / mpmath.mpf("0.7")))
    assert (round(hi, 5), round(lo, 5)) == (0.61557, 0.03728)
    assert W[0, 1] == pytest.approx(hi, abs=1e-12)
    assert W[0, 2] == pytest.approx(lo, abs=1e-12)
    assert W[1, 2] == 0.0
    np.testing.assert_array_equal(np.diag(W), 0.0)


def test_threshold_edges():
    O = np.array([[1.0, 0.25], [0.25, 1.0]])
    assert soft_weight_matrix(O)[0, 1] == pytest.approx(0.25 ** 0.7, abs=1e-15)
    assert soft_weight_matrix(O, LossConfig(variant="hard"))[0, 1] == 0.0  # strict
    O[0, 1] = O[1, 0] = 0.2500001
    assert soft_weight_matrix(O, LossConfig(variant="hard"))[0, 1] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 8))
def test_binary_overlaps_give_the_same_soft_and_hard_weights(seed, n):
    rng = np.random.default_rng(seed)
    O = (rng.uniform(size=(n, n)) < 0.5).astype(float)
    O = np.triu(O, 1)
    O = O + O.T
    np.fill_diagonal(O, 1.0)
    np.testing.assert_array_equal(soft_weight_matrix(O), soft_weight_matrix(O, LossConfig(variant="hard")))


def test_config_validation():
    for kwargs in (dict(temperature=0.0), dict(gamma_s=0.0), dict(gamma_s=1.5), dict(tau_iou=1.0),
                   dict(variant="triplet")):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)


# --- similarity -----------------------------------------------------------------


def test_similarity_cases():
    e = np.eye(3)
    D = np.stack([e[0], e[0], e[1], -e[0]])
    S = similarity_matrix(D).data
    assert S[0, 1] == 1.0 and S[0, 2] == 0.0 and S[0, 3] == -1.0
    Sm = similarity_matrix(D, np.array([True, True, False, True])).data
    assert np.all(Sm[2] == 0) and np.all(Sm[:, 2] == 0)
    with pytest.raises(ValueError):
        similarity_matrix(D, np.ones(3, dtype=bool))


# --- loss -----------------------------------------------------------------------


def test_two_images_give_zero_loss():
    S = np.array([[1.0, 0.3], [0.3, 1.0]])
    W = soft_weight_matrix(np.array([[1.0, 0.8], [0.8, 1.0]]))
    assert soft_supcon_loss(S, W).item() == pytest.approx(0.0, abs=1e-15)


def test_no_positive_weight_is_zero_with_an_event():
    events = []
    loss = soft_supcon_loss(np.eye(4), np.zeros((4, 4)), events=events)
    assert loss.item() == 0.0 and events == ["no_valid_anchors"]
    assert valid_anchor_count(np.zeros((4, 4))) == 0


@pytest.mark.parametrize("seed", range(40))
def test_matches_the_double_loop(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    S = similarity_matrix(unit_rows(rng, n, 5)).data
    mask = rng.uniform(size=n) < 0.8
    mask[0] = True
    t = float(rng.choice([0.05, 0.1, 0.5]))
    for variant in ("soft", "hard"):
        cfg = LossConfig(temperature=t, variant=variant)
        W = soft_weight_matrix(random_overlap(rng, n), cfg)
        ours = soft_supcon_loss(S, W, mask, cfg).item()
        assert ours == pytest.approx(oracles.supcon_loss(S, W, mask, t), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_padding_leaves_the_loss_unchanged(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(2, 7)), 8
    D = unit_rows(rng, m, 6)
    O = random_overlap(rng, m)
    ref = soft_supcon_loss(similarity_matrix(D), soft_weight_matrix(O)).item()

    Dp = np.vstack([D, rng.normal(size=(n - m, 6))])  # junk in the padded rows
    Op = np.zeros((n, n))
    Op[:m, :m] = O
    np.fill_diagonal(Op, 1.0)
    mask = np.arange(n) < m
    got = soft_supcon_loss(similarity_matrix(Dp, mask), soft_weight_matrix(Op), mask).item()
    assert got == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_wrt_similarities(seed):
    rng = np.random.default_rng(seed)
    n = 6
    S = Tensor(rng.uniform(-1, 1, size=(n, n)), requires_grad=True)
    W = soft_weight_matrix(random_overlap(rng, n))
    mask = np.ones(n, dtype=bool)
    mask[-1] = seed % 2 == 0
    errs = nx.check_gradients(lambda s: soft_supcon_loss(s, W, mask), [S])
    assert max(errs) <= 1e-4


def anchor_term(S, W, i, cfg=LossConfig()):
    only = np.zeros_like(W)
    only[i] = W[i]
    return soft_supcon_loss(S, only, cfg=cfg).item()


@pytest.mark.parametrize("seed", range(20))
def test_raising_the_sole_positive_lowers_its_anchor_term(seed):
    rng = np.random.default_rng(seed)
    n = 5
    S = rng.uniform(-1, 1, size=(n, n))
    W = np.zeros((n, n))
    W[0, 2] = rng.uniform(0.1, 1.0)
    base = anchor_term(S, W, 0)
    for step in (1e-3, 0.1, 1.0):
        S2 = S.copy()
        S2[0, 2] += step
        assert anchor_term(S2, W, 0) < base


def test_several_positives_can_make_a_larger_similarity_hurt():
    # j=1 already holds most of the softmax mass but only half of the weight
    S = np.array([[0.0, 0.9, -0.5, -0.9], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
    W = np.zeros((4, 4))
    W[0, 1] = W[0, 2] = 0.5
    base = anchor_term(S, W, 0)
    S2 = S.copy()
    S2[0, 1] += 0.05
    assert anchor_term(S2, W, 0) > base


def test_shape_errors():
    with pytest.raises(ValueError):
        soft_supcon_loss(np.zeros((3, 3)), np.zeros((2, 2)))
