import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sse_rec import (
    EmbeddingTable,
    KnowledgeGraph,
    ModelParams,
    Split,
    TrainConfig,
    TransitionModel,
    gen_synthetic,
    split_holdout,
    train,
)
from sse_rec.dataset import InteractionDataset
from sse_rec.models import (
    NegativeSamplingError,
    bpr_loss_grad,
    glr_penalty_grad,
    mf_loss_grad,
    sample_negative,
    sampled_objective,
    sse_objective_exact,
)

from _reference import plain_mf_sgd, sse_mf_sgd


@pytest.fixture(scope="module")
def small():
    ds, g = gen_synthetic(60, 40, 3, 2, 8, 0.4, seed=2)
    return split_holdout(ds, 0.2, 0), g


def test_mf_loss_grad_hand_values():
    loss, gu, gv = mf_loss_grad([1.0, 2.0], [3.0, -1.0], 0.5, 0.1)
    # e = 1 - 0.5 = 0.5; reg = 0.1 * (5 + 10)
    assert loss == pytest.approx(0.25 + 1.5, abs=1e-15)
    np.testing.assert_allclose(gu, [3.0 + 0.2, -1.0 + 0.4], atol=1e-15)
    np.testing.assert_allclose(gv, [1.0 + 0.6, 2.0 - 0.2], atol=1e-15)


def test_bpr_loss_grad_hand_values():
    loss, gu, gp, gn = bpr_loss_grad([1.0, 0.0], [0.0, 0.0], [0.0, 0.0], 0.0)
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)
    np.testing.assert_allclose(gp, [-0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(gn, [0.5, 0.0], atol=1e-15)
    # no overflow far out in the tails
    big, *_ = bpr_loss_grad([1e3], [1.0], [-1.0], 0.0)
    small, *_ = bpr_loss_grad([-1e3], [1.0], [-1.0], 0.0)
    assert big == pytest.approx(0.0, abs=1e-300) and small == pytest.approx(2e3)


def test_glr_penalty_hand_value():
    g = KnowledgeGraph.from_edges(3, [(0, 1), (1, 2)])
    E = np.array([[0.0], [1.0], [3.0]])
    pen, grad = glr_penalty_grad(E, g, 0.5)
    assert pen == pytest.approx(0.5 * (1.0 + 4.0))
    # 2 beta L E with L = [[1,-1,0],[-1,2,-1],[0,-1,1]]
    np.testing.assert_allclose(grad.ravel(), [-1.0, -1.0, 2.0])
    assert glr_penalty_grad(E, KnowledgeGraph.empty(3), 1.0)[0] == 0.0


def test_sample_negative(rng):
    for _ in range(50):
        assert sample_negative(0, [0, 2], 4, rng) in (1, 3)
    with pytest.raises(NegativeSamplingError):
        sample_negative(0, [0, 1], 2, rng)


@pytest.mark.parametrize("bad", [dict(lr=0), dict(weight_decay=-1), dict(dropout=1.0), dict(epochs=0),
                                 dict(minibatch=0), dict(glr_beta=-0.1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_transition_size_mismatch(small):
    sp, _ = small
    cfg = TrainConfig(sse_item=TransitionModel.uniform(3, 0.1), epochs=1)
    with pytest.raises(ValueError, match="sse_item"):
        train("mf", sp, cfg, ModelParams.init(60, 40, 4))


def test_train_matches_plain_python_sgd(small):
    sp, _ = small
    p0 = ModelParams.init(60, 40, 4, seed=5)
    out, rep = train("mf", sp, TrainConfig(lr=0.02, weight_decay=0.01, epochs=3, seed=9), p0)
    tr = sp.train
    U, V = plain_mf_sgd(p0.user_table.values, p0.item_table.values, tr.users.tolist(), tr.items.tolist(),
                        tr.ratings.tolist(), 0.02, 0.01, 3, 9)
    np.testing.assert_array_equal(out.user_table.values, U)
    np.testing.assert_array_equal(out.item_table.values, V)
    assert [r.epoch for r in rep.records] == [1, 2, 3]
    # input parameters are left untouched
    assert np.array_equal(p0.user_table.values, ModelParams.init(60, 40, 4, seed=5).user_table.values)


def test_train_with_sse_updates_replaced_rows(small):
    sp, g = small
    tu = TransitionModel.uniform(60, 0.3)
    ti = TransitionModel.from_graph(g, 0.4, 20.0)
    p0 = ModelParams.init(60, 40, 4, seed=1)
    out, _ = train("mf", sp, TrainConfig(lr=0.01, sse_user=tu, sse_item=ti, epochs=2, seed=3), p0)
    U, V = sse_mf_sgd(p0.user_table.values, p0.item_table.values, sp.train, tu, ti, 0.01, 2, 3)
    np.testing.assert_allclose(out.user_table.values, U, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.item_table.values, V, rtol=0, atol=1e-12)


def test_item_never_rated_is_updated_only_under_sse():
    ds = InteractionDataset([0, 0, 1], [0, 1, 0], [4.0, 2.0, 3.0], 2, 3)
    sp = Split(ds, ds)
    p0 = ModelParams.init(2, 3, 2, seed=0)
    plain, _ = train("mf", sp, TrainConfig(epochs=5), p0)
    np.testing.assert_array_equal(plain.item_table.values[2], p0.item_table.values[2])
    sse, _ = train("mf", sp, TrainConfig(epochs=5, sse_item=TransitionModel.uniform(3, 0.5)), p0)
    assert not np.array_equal(sse.item_table.values[2], p0.item_table.values[2])


def test_minibatch_one_batch_is_full_gradient_step():
    ds = InteractionDataset([0, 1, 1], [0, 0, 1], [1.0, 2.0, 3.0], 2, 2)
    p0 = ModelParams.init(2, 2, 3, seed=4)
    out, _ = train("mf", Split(ds, ds), TrainConfig(lr=0.1, epochs=1, minibatch=3), p0)
    U, V = p0.user_table.values.copy(), p0.item_table.values.copy()
    gU, gV = np.zeros_like(U), np.zeros_like(V)
    for u, i, r in zip(ds.users, ds.items, ds.ratings):
        _, gu, gv = mf_loss_grad(U[u], V[i], r, 0.0)
        gU[u] += gu
        gV[i] += gv
    np.testing.assert_allclose(out.user_table.values, U - 0.1 / 3 * gU, atol=1e-15)
    np.testing.assert_allclose(out.item_table.values, V - 0.1 / 3 * gV, atol=1e-15)


def test_glr_step_applied_once_per_epoch():
    # lr tiny relative to the Laplacian step isolates the GLR contribution
    ds = InteractionDataset([0], [0], [1.0], 1, 3)
    g = KnowledgeGraph.from_edges(3, [(1, 2)])
    p0 = ModelParams.init(1, 3, 2, seed=0)
    no, _ = train("mf", Split(ds, ds), TrainConfig(lr=0.1, epochs=1), p0)
    yes, _ = train("mf", Split(ds, ds), TrainConfig(lr=0.1, epochs=1, glr_beta=0.5, glr_item_graph=g), p0)
    _, grad = glr_penalty_grad(no.item_table.values, g, 0.5)
    np.testing.assert_allclose(yes.item_table.values, no.item_table.values - 0.1 * grad, atol=1e-15)


def test_dropout_changes_training_and_is_seeded(small):
    sp, _ = small
    p0 = ModelParams.init(60, 40, 4, seed=0)
    a, _ = train("mf", sp, TrainConfig(dropout=0.3, epochs=2, seed=1), p0)
    b, _ = train("mf", sp, TrainConfig(dropout=0.3, epochs=2, seed=1), p0)
    c, _ = train("mf", sp, TrainConfig(epochs=2, seed=1), p0)
    np.testing.assert_array_equal(a.user_table.values, b.user_table.values)
    assert not np.array_equal(a.user_table.values, c.user_table.values)


def test_bpr_loss_decreases_with_graph_sse(small):
    sp, g = small
    p0 = ModelParams.init(60, 40, 8, seed=0)
    _, rep = train("bpr", sp, TrainConfig(lr=0.05, epochs=30, metric_k=5,
                                          sse_item=TransitionModel.from_graph(g, 0.1, 10.0)), p0)
    assert rep.metric_name == "p@5"
    assert np.isfinite(rep.curve()).all()
    assert rep.records[-1].train_loss < rep.records[0].train_loss


def test_bpr_rejects_user_with_all_items():
    ds = InteractionDataset([0, 0], [0, 1], [1.0, 1.0], 1, 2)
    with pytest.raises(ValueError, match="every item"):
        train("bpr", Split(ds, ds), TrainConfig(epochs=1), ModelParams.init(1, 2, 2))


def test_divergence_is_reported():
    ds = InteractionDataset([0, 1], [0, 1], [5.0, 5.0], 2, 2)
    with pytest.raises(FloatingPointError, match="diverged"):
        train("mf", Split(ds, ds), TrainConfig(lr=50.0, epochs=20), ModelParams.init(2, 2, 2, scale=1.0))


def test_report_csv(tmp_path, small):
    sp, _ = small
    _, rep = train("mf", sp, TrainConfig(epochs=2), ModelParams.init(60, 40, 4))
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,metric,seconds" and len(lines) == 3


def test_exact_objective_identity_is_plain_loss():
    ds = InteractionDataset([0, 1], [1, 0], [2.0, 3.0], 2, 2)
    p = ModelParams.init(2, 2, 3, seed=0)
    U, V = p.user_table.values, p.item_table.values
    want = sum(mf_loss_grad(U[u], V[i], r, 0.1)[0] for u, i, r in zip(ds.users, ds.items, ds.ratings))
    assert sse_objective_exact("mf", ds, TrainConfig(weight_decay=0.1), p) == pytest.approx(want, abs=1e-13)


def test_exact_objective_uniform_hand_enumeration():
    ds = InteractionDataset([0], [0], [1.0], 2, 2)
    p = ModelParams.init(2, 2, 2, seed=1)
    U, V = p.user_table.values, p.item_table.values
    cfg = TrainConfig(sse_user=TransitionModel.uniform(2, 0.2), sse_item=TransitionModel.uniform(2, 0.4))
    want = sum(pu * pv * (U[a] @ V[b] - 1.0) ** 2
               for a, pu in ((0, 0.8), (1, 0.2)) for b, pv in ((0, 0.6), (1, 0.4)))
    assert sse_objective_exact("mf", ds, cfg, p) == pytest.approx(want, abs=1e-13)


def test_exact_objective_bpr_matches_sampling():
    ds = InteractionDataset([0, 1], [0, 2], [1.0, 1.0], 2, 3)
    p = ModelParams.init(2, 3, 2, scale=0.8, seed=2)
    cfg = TrainConfig(sse_user=TransitionModel.uniform(2, 0.3), sse_item=TransitionModel.uniform(3, 0.2))
    exact = sse_objective_exact("bpr", ds, cfg, p)
    draws = sampled_objective("bpr", ds, cfg, p, 100_000, np.random.default_rng(0))
    assert abs(draws.mean() - exact) < 4 * draws.std(ddof=1) / np.sqrt(draws.size)


def test_exact_objective_guards():
    ds = InteractionDataset([0], [0], [1.0], 1, 1)
    p = ModelParams.init(1, 1, 1)
    with pytest.raises(ValueError, match="dropout"):
        sse_objective_exact("mf", ds, TrainConfig(dropout=0.5), p)
    big = InteractionDataset(np.zeros(300), np.zeros(300), np.ones(300), 100, 100)
    with pytest.raises(ValueError, match="budget"):
        sse_objective_exact("mf", big, TrainConfig(), ModelParams.init(100, 100, 1))


def test_mf_zero_case_and_unit_vectors():
    loss, gu, gv = mf_loss_grad([0.0, 0.0], [0.0, 0.0], 1.0, 0.0)
    assert loss == 1.0 and not gu.any() and not gv.any()
    loss, gu, gv = mf_loss_grad([1.0, 0.0], [1.0, 0.0], 0.0, 0.0)
    assert loss == 1.0 and gu.tolist() == [2.0, 0.0] and gv.tolist() == [2.0, 0.0]


def test_bpr_equal_items_and_saturation():
    u, v = np.array([0.3, -0.2]), np.array([1.0, 2.0])
    loss, *_ = bpr_loss_grad(u, v, v, 0.1)
    assert loss == pytest.approx(np.log(2) + 0.1 * (u @ u + 2 * v @ v), abs=1e-15)
    loss, gu, gp, gn = bpr_loss_grad([50.0], [1.0], [0.0], 0.0)  # x = 50
    assert loss < 1e-20
    assert max(np.linalg.norm(gu), np.linalg.norm(gp), np.linalg.norm(gn)) < 1e-20


def test_glr_two_node_hand_value_and_equal_rows():
    g = KnowledgeGraph.from_edges(2, [(0, 1)])
    pen, grad = glr_penalty_grad(np.array([[1.0, 0.0], [0.0, 1.0]]), g, 1.0)
    assert pen == 2.0 and grad[0].tolist() == [2.0, -2.0]
    pen, grad = glr_penalty_grad(np.ones((2, 3)), g, 1.0)
    assert pen == 0.0 and not grad.any()


def test_sample_negative_forced_and_uniform(rng):
    from scipy import stats

    assert all(sample_negative(0, [0, 1, 2, 4], 5, rng) == 3 for _ in range(20))
    draws = [sample_negative(0, [], 6, rng) for _ in range(100_000)]
    assert stats.chisquare(np.bincount(draws, minlength=6)).pvalue > 1e-3


def test_zero_init_single_interaction_stays_zero():
    ds = InteractionDataset([0], [0], [4.0], 1, 1)
    zero = ModelParams(EmbeddingTable(0, np.zeros((1, 3))), EmbeddingTable(1, np.zeros((1, 3))))
    out, _ = train("mf", Split(ds, ds), TrainConfig(lr=0.1, epochs=1), zero)
    assert not out.user_table.values.any() and not out.item_table.values.any()


@settings(max_examples=200, deadline=None)
@given(x1=st.floats(-30, 30), dx=st.floats(1e-3, 10))
def test_bpr_loss_positive_and_decreasing_in_margin(x1, dx):
    l1 = bpr_loss_grad([x1], [1.0], [0.0], 0.0)[0]
    l2 = bpr_loss_grad([x1 + dx], [1.0], [0.0], 0.0)[0]
    assert l1 > 0 and l2 > 0 and l2 < l1
