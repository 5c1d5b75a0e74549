import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddarr.errors import (
    DegenerateInputError,
    InsufficientDataError,
    MissingVariableError,
    NameCollisionError,
    ValidationError,
)
from ddarr.timeseries import (
    Dataset,
    FeatureRef,
    SplitSpec,
    add_integral_columns,
    build_design_matrix,
    chrono_split,
    integrate,
    read_csv,
    write_csv,
)


def make(n=20, dt=0.5):
    t = np.arange(n, dtype=float)
    return Dataset.from_columns({"a": t, "b": t ** 2, "c": np.sin(t)}, dt=dt)


def test_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        Dataset.from_columns({"a": [1.0, 2.0]}, dt=0.0)
    with pytest.raises(ValidationError):
        Dataset.from_columns({"a": [1.0, np.nan]}, dt=1.0)
    with pytest.raises(InsufficientDataError):
        Dataset.from_columns({"a": [1.0]}, dt=1.0)
    with pytest.raises(NameCollisionError):
        Dataset(("a", "a"), np.zeros((3, 2)), 1.0)


def test_missing_variable_is_a_key_error():
    ds = make()
    with pytest.raises(MissingVariableError):
        ds["nope"]
    with pytest.raises(KeyError):
        ds.require(["a", "zz"])


def test_with_columns_refuses_to_overwrite():
    ds = make()
    with pytest.raises(NameCollisionError):
        ds.with_columns({"a": np.zeros(len(ds))})


def test_values_are_read_only():
    ds = make()
    with pytest.raises(ValueError):
        ds.values[0, 0] = 1.0


def test_slice_time_moves_origin():
    ds = make(dt=0.5)
    tail = ds.slice_time(3.0)
    assert tail.t0 == pytest.approx(3.0)
    assert tail["a"][0] == 6.0


def test_integrate_exact_on_constants_and_ramps():
    dt = 0.1
    t = np.arange(101) * dt
    assert np.allclose(integrate(np.full(101, 2.5), dt), 2.5 * t, atol=1e-12)
    # trapezoid is exact for piecewise linear signals
    assert np.allclose(integrate(3.0 * t - 1.0, dt), 1.5 * t ** 2 - t, atol=1e-12)


def test_integrate_needs_two_samples():
    with pytest.raises(DegenerateInputError):
        integrate([1.0], 0.1)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60),
       st.floats(1e-3, 10.0))
def test_integral_differences_match_trapezoids(x, dt):
    x = np.asarray(x)
    cum = integrate(x, dt)
    assert cum[0] == 0.0
    assert np.allclose(np.diff(cum), (x[1:] + x[:-1]) * dt / 2, rtol=1e-9, atol=1e-9)


def test_add_integral_columns_names():
    ds = add_integral_columns(make(), ["a"])
    assert "int_a" in ds
    assert ds["int_a"][-1] == pytest.approx(np.trapezoid(ds["a"], dx=ds.dt))


def test_feature_ref_rules():
    assert FeatureRef("x", 2).label == "x[t-2]"
    with pytest.raises(ValidationError):
        FeatureRef("x", -1)
    with pytest.raises(ValidationError):
        FeatureRef("x", 1, "integral")
    f = FeatureRef("x", 0, "integral")
    assert FeatureRef.from_dict(f.to_dict()) == f


def test_design_matrix_alignment():
    ds = make(10)
    X, y = build_design_matrix(ds, [FeatureRef("a", 2), FeatureRef("c", 0)], "b")
    assert X.shape == (8, 2)
    # row for t = 2 reads a[0] and c[2]
    assert X[0, 0] == 0.0 and X[0, 1] == pytest.approx(np.sin(2.0))
    assert y[0] == 4.0


def test_design_matrix_lag_too_long():
    with pytest.raises(InsufficientDataError):
        build_design_matrix(make(3), [FeatureRef("a", 3)], "b")


@settings(max_examples=50)
@given(st.integers(10, 500), st.floats(0.05, 0.95), st.integers(0, 3))
def test_chrono_split_partitions(n, frac, lag):
    ds = Dataset.from_columns({"a": np.arange(n, dtype=float)}, dt=1.0)
    try:
        tr, va = chrono_split(ds, SplitSpec(frac), lag)
    except InsufficientDataError:
        return
    assert len(tr) + len(va) == n
    assert tr["a"][-1] < va["a"][0]
    assert va.t0 == pytest.approx(len(tr))


def test_csv_roundtrip(tmp_path):
    ds = make()
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    back = read_csv(path)
    assert back.names == ds.names
    assert back.dt == pytest.approx(ds.dt)
    assert np.array_equal(back.values, ds.values)


def test_csv_needs_uniform_time(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,a\n0,1\n1,2\n3,3\n")
    with pytest.raises(ValidationError):
        read_csv(path)
