import numpy as np
import pytest

from causalvd.data import (
    CategoryMap,
    ColumnRoles,
    Dataset,
    SaturatedDesign,
    StandardDesign,
    design_row,
    load_csv,
    roles_for,
    write_csv,
)
from causalvd.errors import DataError, MissingColumn, MissingValue, NonBinaryOutcome, SingleLevelFactor
from causalvd.simulate import builtin, generate

from conftest import make_dataset


def _write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


ROLES = ColumnRoles("y", "hosp", "grp", ("x",), "binary")


def test_two_level_encoding(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,H1,a,0.1\n1,H2,b,0.2\n1,H1,a,0.3\n0,H2,b,0.4\n")
    ds = load_csv(path, ROLES)
    assert ds.a.tolist() == [1, 2, 1, 2]
    assert ds.J == 2 and ds.K == 2 and ds.n == 4
    assert ds.hospitals.labels == ("H1", "H2")


def test_first_appearance_and_explicit_levels(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,B,u,0\n1,A,v,1\n1,C,u,2\n")
    ds = load_csv(path, ROLES)
    assert ds.hospitals.labels == ("B", "A", "C")
    roles = ColumnRoles("y", "hosp", "grp", ("x",), "binary", {"hosp": ("A", "B", "C")})
    ds2 = load_csv(path, roles)
    assert ds2.a.tolist() == [2, 1, 3]


def test_missing_value(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,H1,a,0.1\n1,H2,,0.2\n")
    with pytest.raises(MissingValue) as err:
        load_csv(path, ROLES)
    assert err.value.row == 2 and err.value.column == "grp"


def test_missing_column(tmp_path):
    path = _write(tmp_path, "y,hosp,x\n0,H1,0.1\n")
    with pytest.raises(MissingColumn):
        load_csv(path, ROLES)


def test_non_binary_outcome(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,H1,a,0.1\n2,H2,b,0.2\n")
    with pytest.raises(NonBinaryOutcome) as err:
        load_csv(path, ROLES)
    assert err.value.row == 2


def test_single_level_factor(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,H1,a,0.1\n1,H1,b,0.2\n")
    with pytest.raises(SingleLevelFactor):
        load_csv(path, ROLES)


def test_unlisted_level_rejected(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,H1,a,0.1\n1,H2,b,0.2\n")
    roles = ColumnRoles("y", "hosp", "grp", ("x",), "binary", {"hosp": ("H1",)})
    with pytest.raises(DataError):
        load_csv(path, roles)


def test_continuous_outcome_not_inferred():
    with pytest.raises(DataError):
        ColumnRoles("y", "h", "g", (), "auto")


def test_deterministic_encoding(tmp_path):
    path = _write(tmp_path, "y,hosp,grp,x\n0,H1,a,0.1\n1,H2,b,0.2\n1,H1,b,0.3\n")
    assert load_csv(path, ROLES).digest() == load_csv(path, ROLES).digest()


def test_round_trip_simulated(tmp_path):
    ds = generate(builtin("j5-binary"), 500, seed=3)
    path = tmp_path / "sim.csv"
    write_csv(ds, path)
    back = load_csv(path, roles_for(ds))
    assert back.equals(ds)
    np.testing.assert_array_equal(back.x, ds.x)


def test_dataset_is_immutable(rng):
    ds = make_dataset(rng, 50, 2, 2, 1)
    with pytest.raises(ValueError):
        ds.y[0] = 5.0


def test_design_row_examples():
    ds = Dataset(y=[0, 1], a=[1, 2], z=[1, 2], x=[[0.5], [0.5]], outcome_kind="binary",
                 hospitals=CategoryMap("h", ("1", "2")), groups=CategoryMap("g", ("1", "2")))
    np.testing.assert_array_equal(design_row(ds, 0, 1, 1), [1, 0.5, 0, 0, 0])
    np.testing.assert_array_equal(design_row(ds, 0, 2, 2), [1, 0.5, 1, 1, 1])
    with pytest.raises(IndexError):
        design_row(ds, 5, 1, 1)
    with pytest.raises(IndexError):
        design_row(ds, 0, 3, 1)


def test_design_length_and_dummies(rng):
    ds = make_dataset(rng, 60, 5, 3, 2)
    row = design_row(ds, 0, 1, 1)
    assert row.size == 1 + 2 + 4 + 2 + 8
    assert np.all(row[3:] == 0)
    d = StandardDesign.for_dataset(ds)
    for a in range(1, 6):
        for z in range(1, 4):
            r = design_row(ds, 1, a, z)
            assert r[3:7].sum() == (a > 1)
            assert r[7:9].sum() == (z > 1)
            assert r[9:].sum() == (a > 1 and z > 1)


def test_structured_linear_matches_matrix(rng):
    d = StandardDesign(4, 3, 2)
    x = rng.normal(size=(7, 2))
    theta = rng.normal(size=d.outcome_size)
    eta = rng.normal(size=(3, d.hospital_size))
    fast = d.outcome_linear(theta, x)
    hfast = d.hospital_linear(eta, x)
    for a in range(1, 5):
        for z in range(1, 4):
            slow = d.outcome_matrix(x, np.full(7, a), np.full(7, z)) @ theta
            np.testing.assert_allclose(fast[:, a - 1, z - 1], slow, rtol=0, atol=1e-13)
    for z in range(1, 4):
        np.testing.assert_allclose(hfast[:, :, z - 1], d.hospital_matrix(x, np.full(7, z)) @ eta.T, atol=1e-13)


def test_saturated_design_shapes():
    d = SaturatedDesign(2, 3, 4)
    x = np.array([[0], [3]])
    assert d.outcome_matrix(x, [1, 2], [3, 1]).shape == (2, 24)
    assert d.hospital_matrix(x, [1, 2]).shape == (2, 12)
    assert d.group_matrix(x).shape == (2, 4)
