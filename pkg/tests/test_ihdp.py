import math

import numpy as np
import pytest

from intactvae.estimate import ate_error, pehe
from intactvae.ihdp import (
    DATA_DIR_ENV,
    SPLIT_FRACTIONS,
    CovariateTable,
    DatasetNotInstalled,
    ResponseLaw,
    covariates_to_text,
    find_covariate_file,
    load_covariates,
    make_standin_text,
    parse_covariates,
    response_means,
    standin_table,
    synthesize_ihdp,
    treated_offset,
)


def toy_cevae_text(n=3):
    rng = np.random.default_rng(0)
    lines = []
    for i in range(n):
        cells = [str(i % 2), "1.5", "2.5", "1.0", "3.0"]
        cells += ["%.6f" % v for v in rng.standard_normal(6)]
        cells += [str(int(v)) for v in rng.integers(1, 3, 19)]  # 1/2 coded binaries
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def test_three_row_file_parses_to_three_by_twenty_five():
    tab = parse_covariates(toy_cevae_text(), "cevae")
    assert tab.x.shape == (3, 25)
    assert tab.t.tolist() == [0, 1, 0]


def test_one_two_coded_columns_are_shifted_to_zero_one():
    tab = parse_covariates(toy_cevae_text(8), "cevae")
    assert set(np.unique(tab.x[:, 6:]).tolist()) <= {0.0, 1.0}
    assert all(j in tab.binary_columns for j in range(6, 25) if np.unique(tab.x[:, j]).size == 2)


def test_bad_cell_names_line_and_column():
    text = "x1,x2,t\n0.5,1.0,1\n0.2,oops,0\n"
    with pytest.raises(ValueError, match=r"line 3, column x2"):
        parse_covariates(text, "table")


def test_wrong_field_count_is_rejected():
    with pytest.raises(ValueError, match="line 2"):
        parse_covariates(toy_cevae_text(1) + "1,2\n", "cevae")


def test_table_format_round_trip_is_exact():
    tab = standin_table()
    back = parse_covariates(covariates_to_text(tab), "table")
    np.testing.assert_array_equal(back.x, tab.x)
    np.testing.assert_array_equal(back.t, tab.t)
    assert back.binary_columns == tab.binary_columns


def test_standin_file_matches_generator():
    tab = standin_table()
    assert tab.x.shape == (30, 25)
    assert len(tab.binary_columns) == 19
    assert covariates_to_text(tab) == make_standin_text()


def test_format_autodetection(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text(toy_cevae_text())
    b = tmp_path / "b.csv"
    b.write_text(covariates_to_text(standin_table()))
    assert load_covariates(a).x.shape == (3, 25)
    assert load_covariates(b).x.shape == (30, 25)


def test_missing_data_raises_not_installed(tmp_path, monkeypatch):
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
    with pytest.raises(DatasetNotInstalled):
        find_covariate_file()
    with pytest.raises(DatasetNotInstalled):
        load_covariates(tmp_path / "nope.csv")
    assert issubclass(DatasetNotInstalled, FileNotFoundError)


def test_table_validation():
    with pytest.raises(ValueError):
        CovariateTable(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        CovariateTable(np.zeros((2, 2)), t=np.array([0, 2]))


def test_zero_coefficients_give_constant_responses():
    x = np.random.default_rng(0).standard_normal((4, 25))
    mu0, mu1 = response_means(x, np.zeros(25), o=2.5)
    np.testing.assert_array_equal(mu0, 1.0)
    np.testing.assert_array_equal(mu1, -2.5)


def test_control_response_example():
    x = np.zeros((1, 25))
    a = np.zeros(25)
    a[0] = 1.0
    mu0, _ = response_means(x, a, 0.0)
    assert mu0[0] == pytest.approx(math.exp(0.5), rel=1e-15)


def test_offset_hits_treated_target_in_a_two_unit_case():
    x = np.zeros((2, 25))
    x[0, 0], x[1, 0] = 1.0, -1.0
    a = np.zeros(25)
    a[0] = 0.2
    t = np.array([1, 0])
    o = treated_offset(x, t, a)
    # treated unit: mu1 - mu0 = 0.2 - o - exp(0.3) must equal 4
    assert o == pytest.approx(0.2 - math.exp(0.3) - 4.0, rel=1e-14)
    mu0, mu1 = response_means(x, a, o)
    assert mu1[0] - mu0[0] == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_replication_invariants(seed):
    tab = standin_table()
    ds = synthesize_ihdp(tab, seed)
    assert ds.check_consistency()
    treated = ds.t == 1
    assert float(np.mean(ds.true_effects()[treated])) == pytest.approx(4.0, abs=1e-10)
    assert set(np.unique(ds.meta["coef"]).tolist()) <= set(ResponseLaw().values)
    n = len(ds)
    assert np.bincount(ds.split, minlength=3).tolist() == [
        round(SPLIT_FRACTIONS[0] * n), round(SPLIT_FRACTIONS[1] * n),
        n - round(SPLIT_FRACTIONS[0] * n) - round(SPLIT_FRACTIONS[1] * n),
    ]


def test_replications_are_deterministic():
    tab = standin_table()
    a, b = synthesize_ihdp(tab, 3), synthesize_ihdp(tab, 3)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.meta["coef"] == b.meta["coef"]
    assert not np.array_equal(a.y, synthesize_ihdp(tab, 4).y)


def test_coefficient_law_frequencies():
    tab = CovariateTable(np.zeros((2, 25)), np.array([0, 1]))
    coefs = np.concatenate([synthesize_ihdp(tab, s).meta["coef"] for s in range(400)])
    freq = np.array([np.mean(coefs == v) for v in ResponseLaw().values])
    se = np.sqrt(np.array(ResponseLaw().probs) * (1 - np.array(ResponseLaw().probs)) / coefs.size)
    assert np.all(np.abs(freq - np.array(ResponseLaw().probs)) <= 4 * se)


def test_oracle_predictions_have_zero_error():
    ds = synthesize_ihdp(standin_table(), 0)
    assert pehe((ds.mu0, ds.mu1), ds) == 0.0
    assert ate_error((ds.mu0, ds.mu1), ds) == 0.0


def test_explicit_offset_and_treatment_override():
    tab = standin_table()
    t = np.zeros(len(tab), dtype=int)
    t[0] = 1
    ds = synthesize_ihdp(tab, 1, offset=0.0, t=t)
    assert ds.meta["offset"] == 0.0
    np.testing.assert_array_equal(ds.t, t)
    with pytest.raises(ValueError):
        synthesize_ihdp(CovariateTable(np.zeros((3, 25))), 0)
