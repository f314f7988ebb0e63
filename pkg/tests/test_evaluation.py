import numpy as np
import pytest

from sse_rec import EmbeddingTable, InteractionDataset, ModelParams
from sse_rec.evaluation import evaluate, export_pca_csv, pca_project, precision_at_k, rmse


def _params(U, V):
    return ModelParams(EmbeddingTable(0, np.asarray(U, float)), EmbeddingTable(1, np.asarray(V, float)))


def test_rmse_hand_value_and_clipping():
    p = _params([[1.0], [2.0]], [[3.0], [1.0]])
    test = InteractionDataset([0, 1, 1], [0, 0, 1], [3.0, 5.0, 1.0], 2, 2, rating_min=1, rating_max=5)
    # predictions 3, 6, 2; clipped 3, 5, 2
    assert rmse(p, test) == pytest.approx(np.sqrt(1.0 / 3.0))
    assert rmse(p, test, clip=False) == pytest.approx(np.sqrt(2.0 / 3.0))


def test_precision_hand_value_masks_train_and_breaks_ties_low_index():
    p = _params([[1.0], [1.0]], [[3.0], [2.0], [2.0], [0.0]])
    train = InteractionDataset([0], [0], [1.0], 2, 4)
    test = InteractionDataset([0, 1], [2, 3], [1.0, 1.0], 2, 4)
    res = precision_at_k(p, train, test, [1, 2])
    # user 0: item 0 masked, ranking 1,2,... -> p@1=0, p@2=1/2
    # user 1: ranking 0,1,2,3 -> 0, 0
    assert res == {1: 0.0, 2: 0.25}


def test_precision_errors():
    p = _params([[1.0]], [[1.0]])
    ds = InteractionDataset([0], [0], [1.0], 1, 1)
    with pytest.raises(ValueError):
        precision_at_k(p, ds, ds, [])
    with pytest.raises(ValueError):
        rmse(p, InteractionDataset([], [], [], 1, 1))


def test_evaluate_dispatch():
    p = _params([[1.0]], [[1.0], [0.5]])
    ds = InteractionDataset([0], [1], [1.0], 1, 2, rating_min=0.0, rating_max=5.0)
    assert evaluate(p, ds, ds).as_rows() == [("rmse", pytest.approx(0.5))]
    assert evaluate(p, ds, ds, ks=(1,), kind="bpr").precision_at == {1: 0.0}


def test_pca_matches_numpy_eigh(rng):
    x = rng.standard_normal((300, 6)) * np.array([5, 3, 2, 1, 0.5, 0.1])
    proj = pca_project(x, 3)
    xc = x - x.mean(0)
    w, v = np.linalg.eigh(xc.T @ xc / 299)
    v = v[:, ::-1][:, :3]
    v *= np.sign(v[np.argmax(np.abs(v), 0), range(3)])
    np.testing.assert_allclose(proj, xc @ v, atol=1e-8)
    assert np.all(np.diff(proj.var(0)) < 0)


def test_pca_bad_dim():
    with pytest.raises(ValueError):
        pca_project(np.zeros((4, 2)), 3)


def test_pca_csv(tmp_path):
    p = ModelParams.init(5, 6, 4, seed=0)
    export_pca_csv(p, tmp_path / "p.csv", 2, tables=("item",))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "table,index,pc1,pc2" and len(lines) == 7
    assert all(line.startswith("item,") for line in lines[1:])


def test_rmse_contract_examples():
    p = _params([[1.0], [1.0]], [[1.0], [2.0]])
    ds = InteractionDataset([0, 1], [0, 1], [1.0, 4.0], 2, 2, rating_min=1, rating_max=5)
    assert rmse(p, ds) == pytest.approx(np.sqrt(2.0))
    exact = InteractionDataset([0, 1], [0, 1], [1.0, 2.0], 2, 2, rating_min=1, rating_max=5)
    assert rmse(p, exact) == 0.0
    hi = _params([[7.3]], [[1.0]])
    one = InteractionDataset([0], [0], [4.0], 1, 1, rating_min=1, rating_max=5)
    assert rmse(hi, one) == pytest.approx(1.0)


def test_precision_contract_examples():
    p = _params([[1.0]], [[2.0], [1.0]])
    empty_train = InteractionDataset([], [], [], 1, 2)
    assert precision_at_k(p, empty_train, InteractionDataset([0], [0], [1.0], 1, 2), [1]) == {1: 1.0}
    res = precision_at_k(p, empty_train, InteractionDataset([0], [1], [1.0], 1, 2), [1, 2])
    assert res == {1: 0.0, 2: 0.5}
    # user 1 has no test positives and does not dilute the mean
    p2 = _params([[1.0], [1.0]], [[2.0], [1.0]])
    assert precision_at_k(p2, InteractionDataset([], [], [], 2, 2), InteractionDataset([0], [0], [1.0], 2, 2), [1]) == {1: 1.0}


def test_pca_exact_subspace_and_dense_oracle(rng):
    basis = np.linalg.qr(rng.standard_normal((10, 3)))[0]
    x = rng.standard_normal((200, 3)) @ basis.T
    proj = pca_project(x, 3)
    xc = x - x.mean(0)
    # projecting back through the recovered axes reconstructs the centred data
    axes = np.linalg.lstsq(proj, xc, rcond=None)[0]
    assert np.abs(proj @ axes - xc).max() < 1e-8
    big = rng.standard_normal((400, 50)) * np.linspace(3, 0.1, 50)
    got = pca_project(big, 3)
    bc = big - big.mean(0)
    w, v = np.linalg.eigh(np.cov(bc.T))
    ref = bc @ v[:, ::-1][:, :3]
    sign = np.sign(np.sum(got * ref, 0))
    assert np.abs(got - ref * sign).max() < 1e-6
    var = got.var(0)
    assert var[0] >= var[1] >= var[2]
