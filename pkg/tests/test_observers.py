import warnings

import numpy as np
import pytest

from delayeso.gain import place_poles_decoupled
from delayeso.model import NOMINAL_DC_DRIVE, LtiPlant, build_extended, dc_drive_plant
from delayeso.observers import (
    DELAY_ESO,
    DELAY_SMO,
    INTEGRAL_OUTPUT_DELAY_ESO,
    SMO,
    STANDARD_ESO,
    HistoryBuffer,
    ObserverError,
    ObserverSpec,
    SmoParams,
    check_gain_margin,
    delay_eso_derivative,
    delay_steps,
    eso_derivative,
    integral_output_delay_eso_derivative,
    integral_output_system,
    lower,
    smo_correction,
    smo_derivative,
    stacked_smo_gain,
)

PRINTED_L = np.array([[1.3451, 1.4595], [1.8493, 2.5647], [-0.1343, -0.3293], [-0.1093, -1.0129]])
CROSS_L = np.array([[0.0, -5.0], [-5.0, 0.0]])


@pytest.fixture
def drive():
    plant = dc_drive_plant(NOMINAL_DC_DRIVE)
    return plant, build_extended(plant), place_poles_decoupled(plant, ((-20, -30), (-10, -40))).L


@pytest.fixture
def related():
    A = np.array([[-1.0, -2.0], [1.0, -4.0]])
    return LtiPlant(A=A, B=np.zeros((2, 0)), C=np.array([[1.0, 1.0]]), D=np.eye(2))


def test_spec_validation():
    L = np.zeros((4, 2))
    with pytest.raises(ObserverError, match="unknown"):
        ObserverSpec("Kalman", L)
    with pytest.raises(ObserverError, match="delay h"):
        ObserverSpec(DELAY_ESO, L)
    with pytest.raises(ObserverError, match="delay h"):
        ObserverSpec(STANDARD_ESO, L, h=0.1)
    with pytest.raises(ObserverError, match="positive"):
        ObserverSpec(DELAY_ESO, L, h=-0.1)
    with pytest.raises(ObserverError, match="smo"):
        ObserverSpec(SMO)
    with pytest.raises(ObserverError, match="order"):
        ObserverSpec(DELAY_ESO, L, h=0.1, order=2)
    with pytest.raises(ObserverError, match="commas"):
        ObserverSpec(STANDARD_ESO, L, name="a,b")
    assert ObserverSpec(DELAY_ESO, L, h=0.5).name == "DelayEso_h0.5"
    assert ObserverSpec(INTEGRAL_OUTPUT_DELAY_ESO, L, h=0.05).max_delay == pytest.approx(0.1)


def test_delay_steps():
    assert delay_steps(0.1, 1e-3) == 100
    assert delay_steps(0.05, 5e-3) == 10
    with pytest.raises(ObserverError):
        delay_steps(0.0015, 1e-3)
    with pytest.raises(ObserverError):
        delay_steps(1e-4, 1e-3)


def test_history_buffer_warm_up_and_capacity():
    buf = HistoryBuffer(3, [0.0])
    assert buf.delayed(3)[0] == 0.0
    for k in range(1, 6):
        buf.push([float(k)])
    assert buf.latest[0] == 5.0
    assert [buf.delayed(m)[0] for m in range(4)] == [5.0, 4.0, 3.0, 2.0]
    with pytest.raises(ObserverError):
        buf.delayed(4)
    with pytest.raises(ObserverError):
        HistoryBuffer(0, [0.0])


def test_eso_derivative_by_hand():
    plant = LtiPlant(A=np.array([[-1.0]]), B=np.array([[2.0]]), C=np.array([[1.0]]), D=np.array([[1.0]]))
    ext = build_extended(plant)
    spec = ObserverSpec(STANDARD_ESO, np.array([[-3.0], [-4.0]]))
    # xhat = [1, 0.5], y = 2, u = 1: Abar xhat = [-0.5, 0], Bbar u = [2, 0], L (1 - 2) = [3, 4]
    np.testing.assert_allclose(eso_derivative(spec, [1.0, 0.5], [2.0], [1.0], ext), [4.5, 4.0])
    dspec = ObserverSpec(DELAY_ESO, spec.L, h=0.5)
    # plus (1/h) D2 (xhat - xhat(t-h)) = [0, 2 (0.5 - 0.25)]
    np.testing.assert_allclose(delay_eso_derivative(dspec, [1.0, 0.5], [1.0, 0.25], [2.0], [1.0], ext), [4.5, 4.5])


def test_smo_correction_conventions():
    Gn = stacked_smo_gain(CROSS_L, 2)
    np.testing.assert_array_equal(Gn, [[0, -5], [-5, 0], [-1, 0], [0, -1]])
    spec = ObserverSpec(SMO, smo=SmoParams(Gn, 10.0))
    Cbar = np.hstack([np.eye(2), np.zeros((2, 2))])
    # nu = rho sign(y - Cbar xhat) = [10, -10]
    np.testing.assert_allclose(smo_correction(spec, [0, 0, 0, 0], [1.0, -2.0], Cbar), Gn @ [10.0, -10.0])
    # sign(0) = 0
    np.testing.assert_allclose(smo_correction(spec, [1.0, 0, 0, 0], [1.0, 0.0], Cbar), np.zeros(4))
    layer = ObserverSpec(SMO, smo=SmoParams(Gn, 10.0, boundary_layer=0.5))
    np.testing.assert_allclose(smo_correction(layer, [0, 0, 0, 0], [0.25, 3.0], Cbar), Gn @ [5.0, 10.0])
    with pytest.raises(ObserverError):
        SmoParams(Gn, 0.0)


def test_integral_output_matrices(related):
    ios = integral_output_system(related)
    # A^-1 = [[-2/3, 1/3], [-1/6, -1/6]] so C A^-1 = [-5/6, 1/6]
    np.testing.assert_allclose(ios.CAinv, [[-5 / 6, 1 / 6]], rtol=1e-14)
    np.testing.assert_allclose(ios.C2, [[1, 1, 0, 0], [-5 / 6, 1 / 6, 5 / 6, -1 / 6]], rtol=1e-14)
    np.testing.assert_allclose(ios.C3, [[0, 0, 0, 0], [5 / 6, -1 / 6, -5 / 6, 1 / 6]], rtol=1e-14)
    np.testing.assert_allclose(ios.D45, [[0, 0, 0, 0], [0, 0, -5 / 6, 1 / 6]], rtol=1e-14)
    with pytest.raises(ObserverError):
        integral_output_system(LtiPlant(A=np.zeros((2, 2)), B=np.zeros((2, 0)), C=np.eye(2), D=np.eye(2)))


def test_printed_gain_places_slow_poles(related):
    ios = integral_output_system(related)
    eig = np.sort(np.linalg.eigvals(ios.ext.Abar + PRINTED_L @ ios.C2).real)
    # the printed four-digit gain sits on {-1, -1, -0.5, -0.2} up to rounding
    np.testing.assert_allclose(eig, [-1.0, -1.0, -0.5, -0.2], atol=5e-4)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert not check_gain_margin(ios, PRINTED_L)
    assert any("spectral radius" in str(x.message) for x in w)


def _kernel_rhs(form, X, Xh, X2h, Y, u):
    out = form.M0 @ X + form.M1 @ Xh + form.M2 @ X2h + form.Bbar @ u - form.Lin @ Y
    if form.smo:
        out = out + form.Gn @ (form.rho * np.sign(Y - form.Cs @ X))
    return out


def test_lowered_forms_reproduce_derivatives(drive, related, rng):
    plant, ext, L = drive
    X, Xh, y, u = rng.normal(size=4), rng.normal(size=4), rng.normal(size=2), rng.normal(size=1)
    dt = 1e-3
    std, dly = ObserverSpec(STANDARD_ESO, L), ObserverSpec(DELAY_ESO, L, h=0.1)
    cases = [
        (std, eso_derivative(std, X, y, u, ext)),
        (dly, delay_eso_derivative(dly, X, Xh, y, u, ext)),
    ]
    for kind, h in ((SMO, None), (DELAY_SMO, 0.2)):
        s = ObserverSpec(kind, h=h, smo=SmoParams(stacked_smo_gain(CROSS_L, 2), 10.0))
        cases.append((s, smo_derivative(s, X, Xh, y, u, ext)))
    for spec, expected in cases:
        form = lower(spec, ext, dt)
        np.testing.assert_allclose(_kernel_rhs(form, X, Xh, np.zeros(4), y, u), expected, rtol=1e-12, atol=1e-9)

    ios = integral_output_system(related)
    spec = ObserverSpec(INTEGRAL_OUTPUT_DELAY_ESO, PRINTED_L, h=0.05)
    X, Xh, X2h, Yaug = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4), rng.normal(size=2)
    form = lower(spec, ios, 5e-3)
    assert (form.m1, form.m2) == (10, 20)
    expected = integral_output_delay_eso_derivative(spec, X, (Xh, X2h), Yaug, (), ios)
    np.testing.assert_allclose(_kernel_rhs(form, X, Xh, X2h, Yaug, np.zeros(0)), expected, rtol=1e-12, atol=1e-12)


def test_lower_rejects_wrong_gain_shape(drive):
    _, ext, _ = drive
    with pytest.raises(ObserverError, match="shape"):
        lower(ObserverSpec(STANDARD_ESO, np.zeros((3, 2))), ext, 1e-3)
    with pytest.raises(ObserverError, match="Gn"):
        lower(ObserverSpec(SMO, smo=SmoParams(np.zeros((3, 2)), 1.0)), ext, 1e-3)


def test_sign_consistent_smo_variant_orders_delays():
    # The printed cross gain with sign(y - Cbar xhat) pushes the estimate away
    # from the output. With Gn = [5I; I] the switching term drives the error
    # toward the sliding surface, and the delay ordering shows up.
    from delayeso.scenario import load
    from delayeso.sim import metrics, simulate

    sc = load("smo_fig5")
    data = sc.model_dump(mode="json", exclude_none=True)
    for o in data["observers"]:
        o["smo"] = {"Gn": [[5.0, 0.0], [0.0, 5.0], [1.0, 0.0], [0.0, 1.0]], "rho": 10.0}
    exp = type(sc).model_validate(data).build()
    tr = simulate(exp.setup, exp.observers, exp.config)
    rms = {r.observer: r.rms_disturbance for r in metrics(tr, exp.setup.disturbance, exp.warmup_fraction)
           if r.segment == 2}
    assert not tr.diverged
    assert rms["DelaySmo_h0.1"] < rms["DelaySmo_h0.5"] < rms["DelaySmo_h1"]
    assert rms["DelaySmo_h0.1"] < rms["Smo"]
