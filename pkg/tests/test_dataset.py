import numpy as np
import pytest

from sse_rec import IdMap, InteractionDataset, gen_synthetic, load_tsv, split_holdout
from sse_rec.dataset import DatasetError, export_tsv


def _write(tmp_path, text, name="r.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_tsv_maps_ids_in_first_appearance_order(tmp_path):
    p = _write(tmp_path, "# header\nu9\ti3\t4\t100\nu2\ti3\t2.5\t101\nu9\ti1\t1\t102\n")
    ds, maps = load_tsv(p)
    assert maps["user"].index_to_raw == ["u9", "u2"]
    assert maps["item"].index_to_raw == ["i3", "i1"]
    assert ds.users.tolist() == [0, 1, 0]
    assert ds.items.tolist() == [0, 0, 1]
    assert ds.ratings.tolist() == [4.0, 2.5, 1.0]
    assert ds.timestamps.tolist() == [100, 101, 102]
    assert (ds.rating_min, ds.rating_max) == (1.0, 4.0)


def test_load_tsv_custom_schema_and_no_timestamps(tmp_path):
    p = _write(tmp_path, "3,a,x\n5,b,y\n", "r.csv")
    ds, maps = load_tsv(p, schema=("rating", "user", "item"), sep=",")
    assert ds.timestamps is None
    assert ds.ratings.tolist() == [3.0, 5.0]
    assert maps["user"].index_to_raw == ["a", "b"]


@pytest.mark.parametrize(
    "text, match",
    [("u\ti\n", ":1: expected"), ("u\ti\t3\nu\ti\tbad\n", ":2: non-numeric"), ("# only\n", "no interactions"),
     ("u\ti\tnan\n", "non-finite")],
)
def test_load_tsv_errors(tmp_path, text, match):
    with pytest.raises(DatasetError, match=match):
        load_tsv(_write(tmp_path, text))


def test_export_roundtrip(tmp_path):
    ds, maps = load_tsv(_write(tmp_path, "a\tx\t1.5\t7\nb\ty\t2\t8\n"))
    out = tmp_path / "o.tsv"
    export_tsv(ds, maps, out)
    ds2, maps2 = load_tsv(out)
    assert ds2.interactions == ds.interactions
    assert maps2["item"].index_to_raw == maps["item"].index_to_raw


def test_idmap_csv_roundtrip(tmp_path):
    m = IdMap()
    for r in ("z", "a", "z", "q"):
        m.add(r)
    m.save_csv(tmp_path / "m.csv")
    back = IdMap.load_csv(tmp_path / "m.csv")
    assert back.index_to_raw == ["z", "a", "q"] and back.raw_to_index == m.raw_to_index


def test_dataset_validation_and_readonly():
    with pytest.raises(ValueError):
        InteractionDataset([0, 2], [0, 0], [1.0, 1.0], 2, 1)
    with pytest.raises(ValueError):
        InteractionDataset([0], [0], [6.0], 1, 1, rating_min=1, rating_max=5)
    ds = InteractionDataset([0, 1], [0, 0], [1.0, 2.0], 2, 1)
    with pytest.raises(ValueError):
        ds.users[0] = 1


def test_positives_by_user():
    ds = InteractionDataset([1, 0, 1, 1], [2, 0, 0, 2], [1, 1, 1, 1], 3, 3)
    assert [p.tolist() for p in ds.positives_by_user()] == [[0], [0, 2], []]


def test_split_holdout_sizes_and_user_coverage():
    ds, _ = gen_synthetic(50, 40, 3, 2, 5, 0.5, seed=0)
    sp = split_holdout(ds, 0.3, seed=4)
    assert len(sp.test) == int(np.floor(0.3 * len(ds) + 0.5))
    assert len(sp.train) + len(sp.test) == len(ds)
    assert set(sp.train.users.tolist()) == set(range(50))
    again = split_holdout(ds, 0.3, seed=4)
    assert again.test.interactions == sp.test.interactions


def test_split_holdout_keeps_singleton_users_in_train():
    ds = InteractionDataset([0, 1, 1, 1], [0, 0, 1, 2], [1, 2, 3, 4], 2, 3)
    sp = split_holdout(ds, 0.5, seed=0)
    assert 0 in sp.train.users.tolist()
    assert 0 not in sp.test.users.tolist()


@pytest.mark.parametrize("f", [0.0, 1.0, -0.2])
def test_split_holdout_bad_fraction(f):
    ds = InteractionDataset([0, 0], [0, 1], [1, 2], 1, 2)
    with pytest.raises(ValueError):
        split_holdout(ds, f, 0)


def test_split_holdout_unreachable_target():
    ds = InteractionDataset([0, 1, 2], [0, 0, 0], [1, 1, 1], 3, 1)
    with pytest.raises(ValueError, match="without emptying"):
        split_holdout(ds, 0.5, 0)


def test_gen_synthetic_structure():
    ds, g = gen_synthetic(30, 20, 4, 2, 6, 0.3, seed=1)
    assert len(ds) == 180
    assert ds.ratings.min() >= 1.0 and ds.ratings.max() <= 5.0
    for pos in ds.positives_by_user():
        assert pos.size == 6
    # clusters are cliques of sizes 10 and 10
    assert sorted(set(g.degrees.tolist())) == [9]
    assert g.num_edges == 2 * 45
    ds2, g2 = gen_synthetic(30, 20, 4, 2, 6, 0.3, seed=1)
    assert ds2.interactions == ds.interactions and g2 == g


def test_gen_synthetic_rejects_bad_sizes():
    with pytest.raises(ValueError):
        gen_synthetic(3, 2, 2, 3, 1, 0.1, 0)
    with pytest.raises(ValueError):
        gen_synthetic(3, 2, 2, 1, 3, 0.1, 0)


def test_three_line_file_counts(tmp_path):
    ds, _ = load_tsv(_write(tmp_path, "a\tx\t1\nb\tx\t2\na\tx\t3\n"))
    assert (ds.num_users, ds.num_items, len(ds)) == (2, 1, 3)  # duplicate (a, x) kept


def test_split_100_rows():
    ds, _ = gen_synthetic(10, 20, 2, 2, 10, 0.1, seed=0)
    sp = split_holdout(ds, 0.2, seed=7)
    assert len(ds) == 100 and len(sp.test) == 20
    assert split_holdout(ds, 0.2, seed=7).test.interactions == sp.test.interactions


def test_graph_edges_follow_clusters():
    ds, g = gen_synthetic(5, 30, 3, 3, 2, 0.1, seed=2)
    # recover clusters from the cliques
    comp = {}
    for j in range(30):
        comp.setdefault(tuple(sorted([j, *g.neighbors(j).tolist()])), []).append(j)
    assert len(comp) == 3
    for members in comp.values():
        for a in members:
            for b in range(30):
                if a != b:
                    assert g.has_edge(a, b) == (b in members)


def test_noise_free_data_is_fit_by_rank_d_true_mf():
    from sse_rec import ModelParams, Split, TrainConfig, train
    from sse_rec.evaluation import rmse

    ds, _ = gen_synthetic(60, 40, 3, 2, 30, 0.0, seed=3)
    assert np.all((ds.ratings > 1) & (ds.ratings < 5))  # nothing clipped, so exactly rank 3
    params, _ = train("mf", Split(ds, ds), TrainConfig(lr=0.02, epochs=400, seed=0),
                      ModelParams.init(60, 40, 3, scale=0.5, seed=1))
    assert rmse(params, ds, clip=False) < 0.05
