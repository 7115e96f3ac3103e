import numpy as np
import pytest

from conftest import random_point
from fennet.data import (
    export_od_csv,
    gridsearch,
    holdout_mask,
    ingest_od_csv,
    load_dataset,
    save_dataset,
    time_to_bin,
    train_test_refit,
)
from fennet.errors import DimensionError, FormatError, UnderdeterminedError
from fennet.manifold import TuckerPoint, evaluate
from fennet.objective import Grid, Problem
from fennet.optimizer import FitConfig
from fennet.simulation import SimConfig, generate_instance

HEADER = "origin,destination,sample,time,value\n"


def write(tmp_path, body, name="od.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return path


def test_ingest_two_station_example(tmp_path):
    ds = ingest_od_csv(write(tmp_path, "A,B,d1,1,5\nA,B,d1,2,7\n"), 2, 0.0, 2.0)
    a, b = ds.node_index["A"], ds.node_index["B"]
    assert ds.Y[a, b, 0, 0] == 5.0 and ds.Y[a, b, 1, 0] == 7.0
    assert ds.mask[a, b, :, 0].all()
    assert not ds.mask[b, a].any()
    assert not ds.mask[a, a].any()


def test_zero_record_is_observed_and_sums(tmp_path):
    ds = ingest_od_csv(write(tmp_path, "A,B,d1,1,0\nA,B,d1,2,3\nA,B,d1,2,4\n"), 3, 0.0, 3.0)
    assert ds.mask[0, 1, 0, 0] and ds.Y[0, 1, 0, 0] == 0.0
    assert ds.Y[0, 1, 1, 0] == 7.0
    assert not ds.mask[0, 1, 2, 0]


def test_threshold_masks_whole_edge(tmp_path):
    ds = ingest_od_csv(write(tmp_path, "A,B,d1,1,12\nB,A,d1,1,30\n"), 2, 0.0, 2.0, threshold=20)
    assert not ds.mask[0, 1].any()
    assert ds.mask[1, 0, 0, 0]
    assert ds.record_mask[0, 1, 0, 0]


def test_self_loops_dropped(tmp_path):
    ds = ingest_od_csv(write(tmp_path, "A,A,d1,1,5\nA,B,d1,1,1\n"), 2, 0.0, 2.0)
    assert ds.nodes == ["A", "B"] and not ds.record_mask[0, 0].any()


@pytest.mark.parametrize("body,fragment", [
    ("A,B,d1,1\n", "line 2"),
    ("A,B,d1,1,5\nA,B,d1,9,5\n", "line 3"),
    ("A,B,d1,1,abc\n", "line 2"),
    ("A,B,d1,yesterday,1\n", "unknown time format"),
])
def test_malformed_rows_reported_with_line(tmp_path, body, fragment):
    with pytest.raises(FormatError, match=fragment):
        ingest_od_csv(write(tmp_path, body), 4, 0.0, 4.0)


def test_empty_and_bad_inputs(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(FormatError):
        ingest_od_csv(empty, 2, 0.0, 1.0)
    with pytest.raises(FormatError):
        ingest_od_csv(write(tmp_path, ""), 2, 0.0, 1.0)
    with pytest.raises(ValueError):
        ingest_od_csv(write(tmp_path, "A,B,d1,1,1\n"), 1, 0.0, 1.0)
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("a,b,c\n")
    with pytest.raises(FormatError, match="line 1"):
        ingest_od_csv(bad_header, 2, 0.0, 1.0)


def test_time_binning():
    grid = Grid(6.0, 10.0, 4)  # bins (6,7], (7,8], (8,9], (9,10]
    assert time_to_bin("3", grid) == 3
    assert time_to_bin("6.0", grid) == 1
    assert time_to_bin("7.0", grid) == 1
    assert time_to_bin("7.5", grid) == 2
    assert time_to_bin("07:30", grid) == 2
    assert time_to_bin("08:00:01", grid) == 3
    assert time_to_bin("2024-05-01T09:59:00", grid) == 4
    with pytest.raises(FormatError):
        time_to_bin("10:30", grid)


def test_ingest_export_idempotent(tmp_path):
    rng = np.random.default_rng(0)
    lines = [f"{o},{d},day{n},{t},{rng.integers(0, 40)}"
             for o in "ABCD" for d in "ABCD" for n in range(3) for t in range(1, 7)
             if rng.random() < 0.7]
    src = write(tmp_path, "\n".join(lines) + "\n")
    for center in (False, True):
        ds = ingest_od_csv(src, 6, 0.0, 6.0, threshold=15, center=center)
        again = ingest_od_csv(write(tmp_path, export_od_csv(ds)[len(HEADER):], "rt.csv"),
                              6, 0.0, 6.0, threshold=15, center=center)
        assert ds.same_as(again)
        save_dataset(ds, tmp_path / f"ds{center}")
        assert ds.same_as(load_dataset(tmp_path / f"ds{center}"))


def test_centering_recorded(tmp_path):
    ds = ingest_od_csv(write(tmp_path, "A,B,d1,1,4\nA,B,d1,2,8\n"), 3, 0.0, 3.0, center=True)
    assert ds.centering_means[0, 1, 0] == 6.0
    np.testing.assert_array_equal(ds.Y[0, 1, :2, 0], [-2.0, 2.0])
    np.testing.assert_array_equal(ds.raw_values()[0, 1, :2, 0], [4.0, 8.0])


# -- refit ----------------------------------------------------------------

def test_refit_in_span_full_observation():
    P = random_point(5, 2, 8, 3, 2, seed=0)
    Q = TuckerPoint(np.random.default_rng(1).standard_normal((2, 2, 3, 4)), P.phi, P.G)
    Y = evaluate(Q)
    B, Xhat = train_test_refit(P, Y, None, "projection")
    np.testing.assert_allclose(Xhat, Y, atol=1e-10)
    np.testing.assert_allclose(B, Q.core, atol=1e-10)


def test_refit_modes_agree_on_full_mask():
    P = random_point(5, 2, 8, 3, 2, seed=2)
    Y = np.random.default_rng(3).standard_normal((5, 5, 8, 3))
    full = np.ones(Y.shape, bool)
    _, a = train_test_refit(P, Y, full, "projection")
    _, b = train_test_refit(P, Y, full, "masked_ls")
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_refit_orthogonal_data_vanishes():
    P = random_point(5, 2, 8, 3, 1, seed=4)
    # complement of span(Phi) in node space
    U = np.linalg.svd(P.phi, full_matrices=True)[0][:, 2:]
    C = np.random.default_rng(5).standard_normal((3, 3, 3, 2))
    Y = np.einsum("abkn,ia,jb,lk->ijln", C, U, U, P.G)
    _, Xhat = train_test_refit(P, Y, None, "projection")
    assert np.abs(Xhat).max() <= 1e-12
    _, Xhat = train_test_refit(P, Y, np.ones(Y.shape, bool), "masked_ls")
    assert np.abs(Xhat).max() <= 1e-10


def test_refit_projection_mode_is_idempotent():
    P = random_point(5, 2, 8, 3, 2, seed=6)
    Y = np.random.default_rng(7).standard_normal((5, 5, 8, 2))
    _, once = train_test_refit(P, Y, None, "projection")
    _, twice = train_test_refit(P, once, None, "projection")
    np.testing.assert_allclose(twice, once, atol=1e-12)
    np.testing.assert_array_equal(train_test_refit(P, Y, None, "paper")[1], once)


def test_refit_masked_ls_recovers_in_span_with_missingness():
    P = random_point(6, 2, 10, 3, 1, seed=8)
    Q = TuckerPoint(np.random.default_rng(9).standard_normal((2, 2, 3, 2)), P.phi, P.G)
    Y = evaluate(Q)
    mask = np.random.default_rng(10).random(Y.shape) < 0.5
    _, Xhat = train_test_refit(P, np.where(mask, Y, 0.0), mask, "masked_ls")
    np.testing.assert_allclose(Xhat, Y, atol=1e-8)


def test_refit_errors():
    P = random_point(5, 2, 8, 3, 1, seed=11)
    Y = np.zeros((5, 5, 8, 1))
    mask = np.zeros(Y.shape, bool)
    mask[0, 1, 0, 0] = True
    with pytest.raises(UnderdeterminedError):
        train_test_refit(P, Y, mask, "masked_ls")
    with pytest.raises(DimensionError):
        train_test_refit(P, np.zeros((4, 4, 8, 1)))
    with pytest.raises(ValueError):
        train_test_refit(P, Y, None, "other")


# -- grid search -------------------------------------------------------------

def test_holdout_split():
    mask = np.random.default_rng(0).random((4, 4, 5, 2)) < 0.8
    train, val = holdout_mask(mask, 0.1, seed=1)
    assert not (train & val).any()
    np.testing.assert_array_equal(train | val, mask)
    assert val.sum() == round(0.1 * mask.sum())
    with pytest.raises(ValueError):
        holdout_mask(mask, 1.0)


def test_gridsearch_selects_generating_ranks():
    cfg = SimConfig(sigma2=[0.0], omega=[0.1], replications=1)
    inst = generate_instance(cfg, 0, 0.0, 0.1)
    prob = Problem.build(inst.Y, inst.mask, 0.0, cfg.grid)
    result = gridsearch(prob, [2, 3, 4], [6, 8, 10], holdout=0.1, seed=1,
                        base=FitConfig(s=1, K=1, alpha=0.0), refit=False)
    assert result.best == (3, 8)
    assert len(result.table) == 9
    failed = [r for r in result.table if r["error"]]
    assert all(r["heldout_se"] == float("inf") for r in failed)
