import math

import numpy as np
import pytest

from avtrack.attention import (
    AttentionParams,
    FfnParams,
    attention_weights,
    ffn,
    zca,
    zsa,
)
from avtrack.blockchecks import run_block_checks
from avtrack.tensor import ShapeError, Tensor


def identity_params(c, heads=1):
    eye = lambda: Tensor(np.eye(c), requires_grad=True)
    return AttentionParams(wq=eye(), wk=eye(), wv=eye(), wo=eye(), heads=heads)


def test_equal_keys_give_uniform_attention():
    rng = np.random.default_rng(0)
    p = identity_params(2)
    q = Tensor(rng.normal(size=(2, 2)))
    k = Tensor(np.tile(rng.normal(size=(1, 2)), (3, 1)))
    v = Tensor(rng.normal(size=(3, 2)))
    out = zca(q, k, v, p).data
    expected = np.tile(v.data.mean(axis=0), (2, 1))  # wo = identity
    assert np.max(np.abs(out - expected)) <= 1e-12


def test_constant_query_shift_is_removed():
    rng = np.random.default_rng(1)
    p = identity_params(4)
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(5, 4)))
    v = Tensor(rng.normal(size=(5, 4)))
    base = zca(q, k, v, p).data
    for case in range(10):
        c = rng.normal(size=(1, 4)) * (case + 1)
        shifted_q = zca(Tensor(q.data + c), k, v, p).data
        shifted_k = zca(q, Tensor(k.data + c), v, p).data
        assert np.max(np.abs(shifted_q - base)) <= 1e-9
        assert np.max(np.abs(shifted_k - base)) <= 1e-9


def test_zca_matches_scalar_oracle():
    # 1 head, C=2, 2 queries, 3 keys, identity projections: every step done
    # with plain python arithmetic
    q = [[0.3, -1.1], [0.7, 0.2]]
    k = [[1.0, 0.5], [-0.4, 0.9], [0.1, -0.2]]
    v = [[0.6, -0.3], [1.2, 0.8], [-0.5, 0.4]]

    mq = [sum(row[j] for row in q) / 2 for j in range(2)]
    mk = [sum(row[j] for row in k) / 3 for j in range(2)]
    qc = [[q[i][j] - mq[j] for j in range(2)] for i in range(2)]
    kc = [[k[i][j] - mk[j] for j in range(2)] for i in range(3)]
    inv = 1.0 / math.sqrt(2.0)
    expected = []
    for i in range(2):
        scores = [inv * sum(qc[i][d] * kc[t][d] for d in range(2)) for t in range(3)]
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        z = sum(exps)
        weights = [e / z for e in exps]
        expected.append([sum(weights[t] * v[t][d] for t in range(3)) for d in range(2)])

    out = zca(Tensor(q), Tensor(k), Tensor(v), identity_params(2)).data
    assert np.max(np.abs(out - np.array(expected))) <= 1e-12


def test_zsa_single_token_passthrough():
    rng = np.random.default_rng(2)
    p = AttentionParams.init(rng, 4, 2)
    x = Tensor(rng.normal(size=(1, 4)))
    expected = x.data @ p.wv.data @ p.wo.data  # softmax over one key is 1
    assert np.max(np.abs(zsa(x, p).data - expected)) <= 1e-12


def test_zsa_duplicated_rows_duplicate_outputs():
    rng = np.random.default_rng(3)
    p = AttentionParams.init(rng, 4, 2)
    row_a, row_b = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    x = Tensor(np.vstack([row_a, row_a, row_b]))
    out = zsa(x, p).data
    assert np.max(np.abs(out[0] - out[1])) <= 1e-12


def test_zsa_is_zca_of_self_bitwise():
    rng = np.random.default_rng(4)
    p = AttentionParams.init(rng, 6, 3)
    x = Tensor(rng.normal(size=(5, 6)))
    assert np.array_equal(zsa(x, p).data, zca(x, x, x, p).data)


def test_attention_weights_are_convex():
    rng = np.random.default_rng(5)
    p = AttentionParams.init(rng, 6, 2)
    q = Tensor(rng.normal(size=(4, 6)))
    k = Tensor(rng.normal(size=(7, 6)))
    for w in attention_weights(q, k, p):
        assert np.all(w >= 0)
        assert np.max(np.abs(w.sum(axis=1) - 1.0)) <= 1e-9


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    p = AttentionParams.init(rng, 4, 2)
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(5, 4)))
    v = Tensor(rng.normal(size=(5, 4)))
    base = zca(q, k, v, p).data
    perm = rng.permutation(5)
    permuted = zca(q, Tensor(k.data[perm]), Tensor(v.data[perm]), p).data
    assert np.max(np.abs(permuted - base)) <= 1e-9

    qperm = rng.permutation(3)
    out_q = zca(Tensor(q.data[qperm]), k, v, p).data
    assert np.max(np.abs(out_q - base[qperm])) <= 1e-9


def test_heads_must_divide_width():
    rng = np.random.default_rng(7)
    with pytest.raises(ShapeError):
        AttentionParams.init(rng, 6, 4)


def test_kv_row_mismatch_rejected():
    rng = np.random.default_rng(8)
    p = AttentionParams.init(rng, 4, 2)
    with pytest.raises(ShapeError):
        zca(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))),
            Tensor(np.zeros((2, 4))), p)


# -- ffn -------------------------------------------------------------------------


def test_ffn_zero_params_zero_output():
    z = lambda *s: Tensor(np.zeros(s), requires_grad=True)
    p = FfnParams(w1=z(4, 8), b1=z(1, 8), w2=z(8, 4), b2=z(1, 4))
    out = ffn(Tensor(np.ones((3, 4))), p)
    assert np.array_equal(out.data, np.zeros((3, 4)))


def test_ffn_identity_at_ratio_one_linear():
    p = FfnParams(w1=Tensor(np.eye(4)), b1=Tensor(np.zeros((1, 4))),
                  w2=Tensor(np.eye(4)), b2=Tensor(np.zeros((1, 4))),
                  activation="linear")
    x = np.random.default_rng(9).normal(size=(2, 4))
    assert np.max(np.abs(ffn(Tensor(x), p).data - x)) <= 1e-15


def test_ffn_matches_two_matmul_oracle():
    rng = np.random.default_rng(10)
    p = FfnParams.init(rng, 4, 2)
    x = rng.normal(size=(2, 4))
    h = x @ p.w1.data + p.b1.data
    c = math.sqrt(2.0 / math.pi)
    act = 0.5 * h * (1.0 + np.tanh(c * (h + 0.044715 * h ** 3)))
    expected = act @ p.w2.data + p.b2.data
    got = ffn(Tensor(x), p).data
    assert np.max(np.abs(got - expected)) <= 1e-12


def test_attention_blocks_pass_gradient_check():
    reports = run_block_checks(seeds=3, blocks=["zca", "zsa", "ffn"])
    for name, rep in reports.items():
        assert rep.passed, (name, rep.errors)
