import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import importlib

D = importlib.import_module("causalvd.decompose")
from causalvd.data import CategoryMap, Dataset, StandardDesign
from causalvd.models import fit_models

from conftest import make_dataset


def _random_cells(seed, n, J, K, continuous=False, weights=False):
    r = np.random.default_rng(seed)
    pA = r.dirichlet(np.ones(J), size=(n, K)).transpose(0, 2, 1)
    pZ = r.dirichlet(np.ones(K), size=n)
    m = r.normal(size=(n, J, K)) if continuous else r.uniform(0.01, 0.99, size=(n, J, K))
    v = r.gamma(2.0, size=(n, J, K)) if continuous else m * (1 - m)
    w = r.uniform(0.1, 1.0, size=n) if weights else None
    return D.CellTable(m, pA, pZ, v, w)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 40), J=st.integers(2, 6), K=st.integers(2, 4),
       continuous=st.booleans(), weights=st.booleans(), ddof=st.sampled_from([0, 1]))
def test_sum_identity_property(seed, n, J, K, continuous, weights, ddof):
    comp = D.decompose_cells(_random_cells(seed, n, J, K, continuous, weights), ddof)
    assert comp.sum_error() < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 30), J=st.integers(2, 5), K=st.integers(2, 4))
def test_kernel_matches_term_by_term(seed, n, J, K):
    cells = _random_cells(seed, n, J, K, continuous=True)
    comp = D.decompose_cells(cells)
    direct = [
        D.component_group_indirect(cells), D.component_group_direct(cells), D.component_group_covariance(cells),
        D.component_main_hospital(cells), D.component_effect_modification(cells),
        D.component_differential_selection(cells), D.component_case_mix(cells, ddof=1),
        D.component_residual(cells),
    ]
    np.testing.assert_allclose(comp.values(), direct, rtol=1e-10, atol=1e-13)


def test_sub_identities():
    cells = _random_cells(4, 50, 4, 3, continuous=True)
    comp = D.decompose_cells(cells)
    assert D.group_term(cells) == pytest.approx(comp.w1 + comp.w2 + comp.w3, rel=1e-12)
    assert D.hospital_term(cells) == pytest.approx(comp.w4 + comp.w5 + comp.w6, rel=1e-12)


def test_nonnegative_squared_components():
    comp = D.decompose_cells(_random_cells(9, 80, 5, 3))
    for v in (comp.w1, comp.w2, comp.w4, comp.w5, comp.w7, comp.w8):
        assert v >= 0


def test_ddof_scales_case_mix_only():
    cells = _random_cells(2, 25, 3, 2, continuous=True)
    c0, c1 = D.decompose_cells(cells, 0), D.decompose_cells(cells, 1)
    assert c1.w7 == pytest.approx(c0.w7 * 25 / 24, rel=1e-13)
    np.testing.assert_array_equal(c0.values()[:6], c1.values()[:6])


def test_fused_path_matches_cell_table(rng):
    d = StandardDesign(5, 3, 2)
    x = rng.normal(size=(300, 2))
    theta = rng.normal(size=d.outcome_size) * 0.5
    eta = rng.normal(size=(4, d.hospital_size)) * 0.5
    phi = rng.normal(size=(2, d.group_size)) * 0.5
    for link, kind in (("logit", "binary"), ("identity", "continuous")):
        a = D.decompose_params(d, x, theta, eta, phi, link=link, outcome_kind=kind, residual_sd=0.7).vector()
        cells = D.cells_from_params(d, x, theta, eta, phi, link=link, outcome_kind=kind, residual_sd=0.7)
        b = D.decompose_cells(cells).vector()
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_decompose_fitted(rng):
    ds = make_dataset(rng, 600, 4, 3, 2)
    comp = D.decompose(ds, fit_models(ds))
    assert comp.sum_error() < 1e-10
    assert comp.n_used == 600
    assert comp.sample_variance_y == pytest.approx(np.var(ds.y, ddof=1))
    assert comp.empty_cells == ()
    assert comp.proportions.sum() == pytest.approx(1.0)


def test_constant_continuous_outcome_gives_zero(rng):
    ds = make_dataset(rng, 100, 3, 2, 1, "continuous")
    const = Dataset(y=np.full(100, 2.5), a=ds.a, z=ds.z, x=ds.x, outcome_kind="continuous",
                    hospitals=ds.hospitals, groups=ds.groups)
    comp = D.decompose(const, fit_models(const))
    np.testing.assert_allclose(comp.vector(), 0.0, atol=1e-20)


def test_additive_model_zero_mean_effects(rng):
    # no hospital-by-group interaction and identity link: mean indirect and direct effects vanish
    d = StandardDesign(4, 3, 2)
    x = rng.normal(size=(50, 2))
    theta = rng.normal(size=d.outcome_size)
    theta[-(3 * 2):] = 0.0
    cells = D.cells_from_params(d, x, theta, rng.normal(size=(3, d.hospital_size)),
                                rng.normal(size=(2, d.group_size)), link="identity",
                                outcome_kind="continuous", residual_sd=1.0)
    assert np.max(np.abs(np.sum(cells.delta_ind * cells.pZ, axis=1))) < 1e-12
    assert np.max(np.abs(np.sum(cells.delta_dir * cells.pZ, axis=1))) < 1e-12


def test_components_helpers():
    c = D.Components.from_vector(range(1, 10))
    assert c.as_dict()["total"] == 9.0
    assert list(c.as_dict()) == list(D.COLUMNS)
    assert c.sum_error() == pytest.approx(abs(36 - 9) / 9)
    assert math.isnan(D.Components.from_vector([0] * 9).proportions[0])


def test_shape_validation():
    with pytest.raises(ValueError):
        D.CellTable(np.zeros((2, 2, 2)), np.zeros((2, 3, 2)), np.zeros((2, 2)), np.zeros((2, 2, 2)))


def test_dimension_mismatch(rng):
    ds = make_dataset(rng, 200, 3, 2, 1)
    other = make_dataset(rng, 200, 4, 2, 1)
    with pytest.raises(ValueError):
        D.decompose(other, fit_models(ds))
