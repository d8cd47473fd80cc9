import dataclasses

import numpy as np
import pytest

from causalvd.data import Dataset
from causalvd.decompose import decompose
from causalvd.errors import FitError, NonPsdCovariance, TooManyFailures
from causalvd.models import fit_models
from causalvd.uncertainty import (
    Pipeline,
    UncertaintySummary,
    bootstrap,
    bootstrap_indices,
    draw_parameters,
    mvn_draws,
    posterior_draws,
    psd_factor,
    stream,
    to_percent,
    write_replicates_csv,
)

from conftest import make_dataset


@pytest.fixture(scope="module")
def fitted():
    ds = make_dataset(np.random.default_rng(8), 400, 3, 2, 1)
    return ds, fit_models(ds)


def _with_vcov(models, scale):
    return dataclasses.replace(
        models,
        outcome=dataclasses.replace(models.outcome, vcov=models.outcome.vcov * scale),
        hospital=dataclasses.replace(models.hospital, vcov=models.hospital.vcov * scale),
        group=dataclasses.replace(models.group, vcov=models.group.vcov * scale),
    )


def test_zero_vcov_gives_point_estimate(fitted):
    ds, models = fitted
    res = posterior_draws(_with_vcov(models, 0.0), ds, 5, seed=1)
    point = decompose(ds, models).vector()
    np.testing.assert_allclose(res.matrix, np.tile(point, (5, 1)), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(res.summary.sd, 0.0, atol=1e-15)


def test_mvn_covariance_reproduced(fitted):
    _, models = fitted
    cov = models.outcome.vcov
    draws = mvn_draws(models.outcome.theta, cov, 10_000, stream(3, 0))
    emp = np.cov(draws, rowvar=False)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05


def test_psd_repair_and_rejection():
    near = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-13]])
    F = psd_factor(near)
    np.testing.assert_allclose(F @ F.T, near, atol=1e-12)
    with pytest.raises(NonPsdCovariance):
        psd_factor(np.array([[1.0, 0.0], [0.0, -0.1]]))


def test_nonpsd_vcov_raises(fitted):
    ds, models = fitted
    bad = dataclasses.replace(models, group=dataclasses.replace(models.group, vcov=-np.eye(len(models.group.vcov))))
    with pytest.raises(NonPsdCovariance):
        posterior_draws(bad, ds, 5, seed=1)


def test_b_too_small(fitted):
    ds, models = fitted
    with pytest.raises(ValueError):
        posterior_draws(models, ds, 1, seed=1)
    with pytest.raises(ValueError):
        bootstrap(ds, 1, seed=1)


def test_draws_deterministic(fitted):
    ds, models = fitted
    a = posterior_draws(models, ds, 20, seed=11)
    b = posterior_draws(models, ds, 20, seed=11)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    c = posterior_draws(models, ds, 20, seed=12)
    assert not np.array_equal(a.matrix, c.matrix)


def test_draws_independent_of_process_count(fitted):
    ds, models = fitted
    a = posterior_draws(models, ds, 12, seed=4, threads=1)
    b = posterior_draws(models, ds, 12, seed=4, threads=3)
    np.testing.assert_array_equal(a.matrix, b.matrix)


def test_draw_sd_scales_with_c(fitted):
    _, models = fitted
    # a linear functional of theta: its SD must scale by |c| when vcov scales by c^2
    th1, _, _ = draw_parameters(models, 4000, seed=5)
    th3, _, _ = draw_parameters(_with_vcov(models, 9.0), 4000, seed=5)
    g = np.linspace(-1, 1, th1.shape[1])
    assert np.std(th3 @ g) / np.std(th1 @ g) == pytest.approx(3.0, rel=1e-10)


def test_each_draw_sums(fitted):
    ds, models = fitted
    mat = posterior_draws(models, ds, 10, seed=2).matrix
    np.testing.assert_allclose(mat[:, :8].sum(axis=1), mat[:, 8], rtol=1e-10)


def test_summary_ordering_and_percent():
    mat = np.random.default_rng(0).uniform(size=(50, 9))
    mat[:, 8] = mat[:, :8].sum(axis=1)
    s = UncertaintySummary.from_matrix(mat, "bootstrap", 0, scale="percent")
    assert np.all(s.lo <= s.point) and np.all(s.point <= s.hi)
    assert s.point[8] == 100.0 and s.sd[8] == 0.0
    np.testing.assert_allclose(to_percent(mat)[:, :8].sum(axis=1), 100.0)
    with pytest.raises(ValueError):
        UncertaintySummary.from_matrix(mat[:1], "bootstrap", 0)


def test_bootstrap_shape_and_determinism(fitted):
    ds, _ = fitted
    a = bootstrap(ds, 2, seed=9)
    assert a.matrix.shape == (2, 9)
    assert not np.array_equal(a.matrix[0], a.matrix[1])
    b = bootstrap(ds, 2, seed=9)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    np.testing.assert_allclose(a.matrix[:, :8].sum(axis=1), a.matrix[:, 8], rtol=1e-10)


def test_bootstrap_replicate_reproducible_in_isolation():
    np.testing.assert_array_equal(bootstrap_indices(100, 5, 7), bootstrap_indices(100, 5, 7))
    assert not np.array_equal(bootstrap_indices(100, 5, 7), bootstrap_indices(100, 5, 8))


def test_bootstrap_constant_outcome(fitted):
    ds0, _ = fitted
    ds = Dataset(y=np.full(ds0.n, 1.5), a=ds0.a, z=ds0.z, x=ds0.x, outcome_kind="continuous",
                 hospitals=ds0.hospitals, groups=ds0.groups)
    res = bootstrap(ds, 5, seed=3)
    np.testing.assert_allclose(res.matrix, 0.0, atol=1e-20)
    np.testing.assert_allclose(res.summary.sd, 0.0, atol=1e-20)


class _Flaky(Pipeline):
    def run(self, dataset):
        raise FitError("forced")


def test_too_many_failures(fitted):
    ds, _ = fitted
    with pytest.raises(TooManyFailures):
        bootstrap(ds, 10, seed=1, pipeline=_Flaky())


def test_replicates_csv(tmp_path, fitted):
    ds, models = fitted
    res = posterior_draws(models, ds, 3, seed=1)
    path = tmp_path / "r.csv"
    write_replicates_csv(res.matrix, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4 and lines[0].split(",")[-1] == "total"
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back, res.matrix)
