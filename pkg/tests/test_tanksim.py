import numpy as np
import pytest
from scipy.linalg import expm

from ddarr.errors import ValidationError
from ddarr.tanksim import (
    ABRUPT,
    INCIPIENT,
    MEASURED,
    NO_FAULT,
    FaultScenario,
    InflowProfile,
    TankParams,
    label_fault,
    mass_balance_check,
    simulate,
)

SHORT = TankParams(duration=400.0)
FLAT = InflowProfile(amplitude=0.0)


def test_channels_and_shape():
    ds = simulate(SHORT, seed=3)
    assert ds.names == MEASURED
    assert len(ds) == SHORT.n_steps + 1
    assert ds.dt == pytest.approx(0.1)


def test_deterministic_for_seed():
    a = simulate(SHORT, seed=5)
    b = simulate(SHORT, seed=5)
    c = simulate(SHORT, seed=6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_rejects_bad_parameters():
    with pytest.raises(ValidationError):
        TankParams(dt=0.0)
    with pytest.raises(ValidationError):
        TankParams(capacities=(1, 1, 1, -1))
    with pytest.raises(ValidationError):
        FaultScenario(kind="incipient", ramp_duration=0.0)
    with pytest.raises(ValidationError):
        simulate(SHORT, FaultScenario(kind=ABRUPT, onset=500.0))


def test_steady_state_at_rest():
    p = TankParams(u1=FLAT, u2=FLAT, duration=100.0, noise_fraction=0.0)
    ds = simulate(p, keep_states=True)
    for name, val in zip(("p1", "p2", "p3", "p4"), p.equilibrium()):
        assert np.allclose(ds[name], val, atol=1e-12)


def test_noise_level_tracks_clean_std():
    p = TankParams(duration=2000.0)
    clean = simulate(TankParams(duration=2000.0, noise_fraction=0.0), seed=2)
    noisy = simulate(p, seed=2)
    diff = noisy.values - clean.values
    ratio = diff.std(axis=0) / clean.values.std(axis=0)
    assert np.allclose(ratio, 0.05, rtol=0.05)


def test_leak_lowers_pressure_only_after_onset():
    p = TankParams(duration=1000.0)
    fault = FaultScenario("tank1", ABRUPT, onset=500.0, magnitude=0.02)
    nominal = simulate(p, seed=4, keep_states=True)
    leaky = simulate(p, fault, seed=4, keep_states=True)
    k = nominal.index_at(500.0)
    assert np.array_equal(nominal.values[:k], leaky.values[:k])
    assert np.all(leaky["p1"][k:] < nominal["p1"][k:])


def test_incipient_conductance_ramps():
    f = FaultScenario(kind=INCIPIENT, onset=100.0, magnitude=0.2, ramp_duration=50.0)
    g = f.conductance(np.array([0.0, 99.9, 100.0, 125.0, 150.0, 400.0]))
    assert np.allclose(g, [0, 0, 0, 0.1, 0.2, 0.2])
    assert np.array_equal(label_fault([99.0, 100.0, 101.0], f), [0, 1, 1])
    assert label_fault([1.0, 2.0], NO_FAULT).sum() == 0


def test_mass_balance_is_tight():
    p = TankParams(duration=1000.0, noise_fraction=0.0)
    ds = simulate(p, FaultScenario("tank2", ABRUPT, onset=300.0, magnitude=0.05), seed=1,
                  keep_states=True)
    assert mass_balance_check(ds, p) < 1e-6


def _exact_lti(p, t_end):
    """Closed-form response to a constant inflow from an offset start."""
    C = np.array(p.capacities)
    G = 1.0 / np.array(p.resistances)
    A = np.array([
        [-G[0], G[0], 0, 0],
        [G[0], -G[0] - G[1], G[1], 0],
        [0, G[1], -G[1] - G[2], G[2]],
        [0, 0, G[2], -G[2] - G[3]],
    ]) / C[:, None]
    x_eq = np.array(p.equilibrium())
    x0 = np.array(p.initial_pressures)
    return x_eq + expm(A * t_end) @ (x0 - x_eq)


def test_rk4_fourth_order_convergence():
    errs = []
    for dt in (0.8, 0.4, 0.2):
        p = TankParams(u1=FLAT, u2=FLAT, dt=dt, duration=80.0, noise_fraction=0.0,
                       initial_pressures=(8.0, 3.0, 1.0, 0.5))
        ds = simulate(p, keep_states=True)
        got = np.array([ds[n][-1] for n in ("p1", "p2", "p3", "p4")])
        errs.append(np.max(np.abs(got - _exact_lti(p, 80.0))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.7), (errs, orders)


def test_mass_balance_shows_integrator_order():
    gaps = []
    for dt in (0.4, 0.2):
        p = TankParams(dt=dt, duration=400.0, noise_fraction=0.0,
                       u1=InflowProfile(w_max=2.0), u2=InflowProfile(w_max=2.0))
        gaps.append(mass_balance_check(simulate(p, seed=0, keep_states=True), p))
    assert 10.0 < gaps[0] / gaps[1] < 22.0


def test_params_dict_roundtrip():
    p = TankParams(u1=InflowProfile(mean=2.0), initial_pressures=(1, 2, 3, 4))
    assert TankParams.from_dict(p.to_dict()) == p
