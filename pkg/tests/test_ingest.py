import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confound_mf.ingest import (IngestError, MiceImputer, ModeImputer, mode_impute, read_csv_matrix,
                                read_dataset_csv, read_dense_csv, read_twins_csv, write_csv_matrix,
                                write_dense_csv, write_schema, write_twins_csv)
from confound_mf.losses import Bernoulli, Gaussian, ObservedMatrix, Poisson
from confound_mf.synth import synth_twins_standin


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(IngestError):
        read_csv_matrix(p)


def test_hand_file_with_one_na(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\nNA,0.5\n3,4\n")
    obs = read_csv_matrix(p)
    assert obs.shape == (3, 2) and obs.n_observed == 5
    assert obs.col_names == ("a", "b")


def test_bad_token(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a\n1\nfoo\n")
    with pytest.raises(IngestError, match="x.csv:3"):
        read_csv_matrix(p)


def test_ragged_row(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1\n")
    with pytest.raises(IngestError):
        read_dense_csv(p)


def test_round_trip_with_schema(tmp_path, rng):
    x = np.column_stack([rng.normal(size=6), np.where(rng.random(6) < 0.5, 1.0, -1.0),
                         rng.poisson(3, 6).astype(float)])
    x[2, 0] = x[4, 1] = np.nan
    obs = ObservedMatrix.from_dense(x, (Gaussian(), Bernoulli(), Poisson()), ["g", "b", "p"])
    write_csv_matrix(tmp_path / "x.csv", obs)
    write_schema(tmp_path / "s.json", obs)
    assert json.loads((tmp_path / "s.json").read_text()) == {"g": "gaussian", "b": "bernoulli", "p": "poisson"}
    back = read_csv_matrix(tmp_path / "x.csv", tmp_path / "s.json")
    np.testing.assert_array_equal(back.to_dense(), x)
    assert back.col_losses == obs.col_losses


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20))
def test_round_trip_lossless(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("rt") / "v.csv"
    arr = np.array(vals)[:, None]
    write_dense_csv(p, arr, ["v"])
    back, _ = read_dense_csv(p)
    np.testing.assert_allclose(back, arr, rtol=1e-12, atol=0)


def test_auto_loss_inference(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("s,r\n1,0.5\n-1,2\nNA,3\n")
    obs = read_csv_matrix(p)
    assert obs.col_losses == (Bernoulli(), Gaussian())


def test_schema_unknown_column(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a\n1\n")
    with pytest.raises(IngestError):
        read_csv_matrix(p, {"zzz": "gaussian"})


class TestModeImpute:
    def test_identity_without_missing(self, rng):
        x = rng.integers(0, 5, (6, 3)).astype(float)
        np.testing.assert_array_equal(mode_impute(ObservedMatrix.from_dense(x, Gaussian())), x)

    def test_small_column(self):
        x = np.array([[1.0], [1.0], [2.0], [np.nan]])
        assert mode_impute(ObservedMatrix.from_dense(x, Gaussian()))[3, 0] == 1.0

    def test_tie_goes_to_smallest(self):
        x = np.array([[3.0], [2.0], [np.nan]])
        assert mode_impute(ObservedMatrix.from_dense(x, Gaussian()))[2, 0] == 2.0

    def test_matches_recount(self, rng):
        x = rng.integers(0, 6, (200, 8)).astype(float)
        miss = rng.random(x.shape) < 0.3
        x_obs = np.where(miss, np.nan, x)
        out = ModeImputer().fit_transform(ObservedMatrix.from_dense(x_obs, Gaussian()))
        for j in range(8):
            counts = {}
            for v in x_obs[:, j]:
                if not math.isnan(v):
                    counts[v] = counts.get(v, 0) + 1
            top = max(counts.values())
            mode = min(v for v, c in counts.items() if c == top)
            assert np.all(out[miss[:, j], j] == mode)

    def test_fully_missing_column(self):
        x = np.array([[1.0, np.nan], [2.0, np.nan]])
        with pytest.raises(IngestError):
            mode_impute(ObservedMatrix.from_dense(x, Gaussian()))


def test_mice_is_a_stub():
    obs = ObservedMatrix.from_dense(np.ones((2, 2)), Gaussian())
    with pytest.raises(NotImplementedError):
        MiceImputer().fit_transform(obs)


def test_twins_round_trip(tmp_path):
    rec = synth_twins_standin(30, 0)
    write_twins_csv(tmp_path / "t.csv", rec)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "pair_id,gestat10,weight_lighter,weight_heavier,mortality_lighter,mortality_heavier"
    back = read_twins_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.gestat10, rec.gestat10)
    np.testing.assert_array_equal(back.mortality_heavier, rec.mortality_heavier)
    np.testing.assert_allclose(back.weight_lighter, rec.weight_lighter)


def test_twins_missing_column(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("pair_id,gestat10\n0,1\n")
    with pytest.raises(IngestError):
        read_twins_csv(p)


def test_twins_gestation_range(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("pair_id,gestat10,weight_lighter,weight_heavier,mortality_lighter,mortality_heavier\n"
                 "0,12,1000,1100,0,0\n")
    with pytest.raises(IngestError):
        read_twins_csv(p)


def test_dataset_requires_columns(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("treatment\n1\n")
    with pytest.raises(IngestError):
        read_dataset_csv(p)
