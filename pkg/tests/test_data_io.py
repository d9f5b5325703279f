import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_triplet import data_io
from adaptive_triplet.data_io import SyntheticSpec, generate_synthetic, generate_synthetic_pairwise
from adaptive_triplet.embed_net import init_net
from adaptive_triplet.errors import InvalidConfigError, ParseError
from adaptive_triplet.losses import LossWeights, MarginMode
from adaptive_triplet.sampling import FeatureDataset, Quadruplet, generate_quadruplets_single
from adaptive_triplet.training import RegressionHead, TrainConfig, train
from adaptive_triplet.evaluation import srocc


def test_feature_dataset_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(n_items=50, seed=1))
    p = tmp_path / "items.csv"
    data_io.save_feature_dataset(ds, p)
    back = data_io.load_feature_dataset(p)
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(1, 5), st.floats(allow_nan=False, allow_infinity=False, width=64),
                          st.floats(-1e-300, 1e-300)), max_size=20))
def test_feature_dataset_round_trip_arbitrary_doubles(rows):
    import tempfile
    from pathlib import Path

    ids = [f"x{k}" for k in range(len(rows))]
    feats = np.array([[a, b] for _, a, b in rows], dtype=float).reshape(len(rows), 2)
    ds = FeatureDataset(ids, feats, [m for m, _, _ in rows], 5)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "i.csv"
        data_io.save_feature_dataset(ds, p)
        back = data_io.load_feature_dataset(p)
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.mos.tobytes() == ds.mos.tobytes()


def test_header_only_is_empty_dataset(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("id,mos,f0,f1\n")
    ds = data_io.load_feature_dataset(p)
    assert len(ds) == 0 and ds.features.shape == (0, 2)


def test_nan_row_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,mos,f0\na,2,0.5\nb,3,nan\n")
    with pytest.raises(ParseError) as info:
        data_io.load_feature_dataset(p)
    assert info.value.line == 3 and ":3:" in str(info.value)


@pytest.mark.parametrize("body, line", [
    ("id,mos,f0\na,2,0.5\na,3,0.1\n", 3),
    ("id,mos,f0\na,2\n", 2),
    ("id,mos,f0\na,9,1\n", 2),
    ("id,score,f0\n", 1),
])
def test_schema_violations(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ParseError) as info:
        data_io.load_feature_dataset(p)
    assert info.value.line == line


def test_pair_dataset_round_trip(tmp_path):
    ds = generate_synthetic_pairwise(SyntheticSpec(n_items=100, seed=2), refs=5, evals_per_ref=4)
    data_io.save_pair_dataset(ds, tmp_path / "i.csv", tmp_path / "p.csv")
    back = data_io.load_pair_dataset(tmp_path / "i.csv", tmp_path / "p.csv")
    assert back.pairs == ds.pairs
    assert back.features.tobytes() == ds.features.tobytes()


def test_pairs_unknown_id(tmp_path):
    ds = generate_synthetic_pairwise(SyntheticSpec(n_items=20, seed=2), refs=2, evals_per_ref=3)
    data_io.save_pair_dataset(ds, tmp_path / "i.csv", tmp_path / "p.csv")
    with open(tmp_path / "p.csv", "a") as fh:
        fh.write("ghost,item00,3\n")
    with pytest.raises(ParseError) as info:
        data_io.load_pair_dataset(tmp_path / "i.csv", tmp_path / "p.csv")
    assert info.value.line == 8


def test_quadruplet_round_trip_and_validation(tmp_path):
    quads = [Quadruplet("a", "b", "c", 0.1 + 0.2), Quadruplet("c", "a", "b", 1.0)]
    p = tmp_path / "q.csv"
    data_io.save_quadruplets(quads, p)
    assert data_io.load_quadruplets(p) == quads
    p.write_text("anchor_id,positive_id,negative_id,margin\na,a,c,0.2\n")
    with pytest.raises(ParseError):
        data_io.load_quadruplets(p)
    p.write_text("anchor_id,positive_id,negative_id,margin\na,b,c,1.5\n")
    with pytest.raises(ParseError):
        data_io.load_quadruplets(p)


def test_model_round_trip(tmp_path):
    net = init_net(5, (4, 3), 2, activation="tanh", seed=3)
    head = RegressionHead(np.array([0.1, -0.7]), 0.25)
    data_io.save_model(net, tmp_path / "m.json", head)
    net2, head2 = data_io.load_model(tmp_path / "m.json")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net.params(), net2.params()))
    assert net2.activation == "tanh"
    assert head2.w.tobytes() == head.w.tobytes() and head2.b == head.b
    data_io.save_model(net, tmp_path / "n.json")
    assert data_io.load_model(tmp_path / "n.json")[1] is None


def test_model_parse_errors(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        data_io.load_model(p)
    p.write_text('{"layers": [{"w": [[1, 2]], "b": [0, 0]}], "activation": "relu"}')
    with pytest.raises(ParseError):
        data_io.load_model(p)


def test_config_and_report_round_trip(tmp_path):
    cfg = TrainConfig(margin_mode=MarginMode.fixed(0.5), loss_weights=LossWeights(1, 0.1), regression="mae")
    data_io.save_config(cfg, tmp_path / "c.json")
    assert data_io.load_config(tmp_path / "c.json") == cfg
    ds = generate_synthetic(SyntheticSpec(n_items=60, seed=0))
    quads = generate_quadruplets_single(ds, 2, 0)
    _, _, report = train(init_net(ds.feature_dim, (8,), 4, seed=0), None, ds, quads, TrainConfig(epochs=2))
    data_io.save_report(report, tmp_path / "r.json")
    assert data_io.load_report(tmp_path / "r.json") == report


def test_bad_config_is_parse_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"batch_size": 0}')
    with pytest.raises(ParseError):
        data_io.load_config(p)


def test_atomic_write_leaves_no_temp(tmp_path):
    data_io.atomic_write(tmp_path / "sub" / "f.txt", "hello\n")
    assert [x.name for x in (tmp_path / "sub").iterdir()] == ["f.txt"]


def test_synthetic_deterministic_and_in_range():
    a = generate_synthetic(SyntheticSpec(n_items=300, seed=4))
    b = generate_synthetic(SyntheticSpec(n_items=300, seed=4))
    assert a == b and a.features.tobytes() == b.features.tobytes()
    assert a.mos.min() >= 1 and a.mos.max() <= 5


def test_synthetic_noiseless_mos_is_affine_in_latent():
    ds, z = generate_synthetic(SyntheticSpec(n_items=200, noise_sigma=0, feature_noise_sigma=0, seed=1),
                               return_latent=True)
    np.testing.assert_allclose(ds.mos, 1 + 4 * z, atol=1e-12)
    assert srocc(ds.mos, z) == 1.0


def test_synthetic_is_learnable_by_linear_probe():
    ds, z = generate_synthetic(SyntheticSpec(n_items=2000), return_latent=True)
    x = np.column_stack([ds.features, np.ones(len(ds))])
    coef, *_ = np.linalg.lstsq(x, z, rcond=None)
    assert srocc(x @ coef, z) > 0.8


@pytest.mark.parametrize("seed", range(5))
def test_seeds_change_mos_multiset(seed):
    a = generate_synthetic(SyntheticSpec(n_items=100, seed=seed))
    b = generate_synthetic(SyntheticSpec(n_items=100, seed=seed + 100))
    assert sorted(a.mos.tolist()) != sorted(b.mos.tolist())


def test_synthetic_spec_validation():
    with pytest.raises(InvalidConfigError):
        SyntheticSpec(n_items=5)
    with pytest.raises(InvalidConfigError):
        SyntheticSpec(noise_sigma=-1)
    with pytest.raises(InvalidConfigError):
        SyntheticSpec.from_dict({"n_items": 20, "colour": 1})


def test_pairwise_counts_and_ranges():
    ds = generate_synthetic_pairwise(SyntheticSpec(n_items=2500, seed=0), refs=100, evals_per_ref=24)
    assert len(ds.pairs) == 2400
    assert len(ds.reference_ids()) == 100
    sims = np.array([p.similarity for p in ds.pairs])
    assert sims.min() >= 1 and sims.max() <= 5
    refs = set(ds.reference_ids())
    assert not refs & {p.eval_id for p in ds.pairs}


def test_pairwise_noiseless_extremes():
    spec = SyntheticSpec(n_items=400, noise_sigma=0, seed=6)
    ds, z = generate_synthetic_pairwise(spec, refs=10, evals_per_ref=30, return_latent=True)
    idx = {i: k for k, i in enumerate(ds.ids)}
    for p in ds.pairs:
        gap = abs(z[idx[p.ref_id]] - z[idx[p.eval_id]])
        assert p.similarity == pytest.approx(5 - 4 * gap, abs=1e-12)


def test_pairwise_infeasible():
    with pytest.raises(InvalidConfigError):
        generate_synthetic_pairwise(SyntheticSpec(n_items=100), refs=10, evals_per_ref=10)


def test_split_ids_disjoint_and_deterministic():
    ids = [f"i{k}" for k in range(100)]
    tr, te = data_io.split_ids(ids, 0.2, 3)
    assert len(te) == 20 and not set(tr) & set(te) and sorted(tr + te) == sorted(ids)
    assert data_io.split_ids(ids, 0.2, 3) == (tr, te)
    with pytest.raises(InvalidConfigError):
        data_io.split_ids(ids, 1.0, 0)


def test_split_pairs_by_reference():
    ds = generate_synthetic_pairwise(SyntheticSpec(n_items=300, seed=0), refs=10, evals_per_ref=5)
    tr, te = data_io.split_pairs_by_reference(ds, 0.3, 0)
    assert not {p.ref_id for p in tr} & {p.ref_id for p in te}
    assert len(tr) + len(te) == 50
