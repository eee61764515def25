import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from selfhomodyne import channels as C


def random_state(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


def entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def test_states_are_normalised():
    assert np.trace(C.thermal_state(2, 200)).real == pytest.approx(1, abs=1e-12)
    assert np.trace(C.coherent_state(1 + 1j, 60)).real == pytest.approx(1, abs=1e-12)
    assert C.fock_state(3, 5)[3, 3] == 1
    with pytest.raises(ValueError):
        C.fock_state(6, 5)
    R = C.twin_beam_state(0.5, 60)
    assert C.FockDensityMatrix(R).trace() == pytest.approx(1, abs=1e-12)
    assert np.allclose(np.diag(C.two_mode_number_probs(R))[:5], 0.75 * 0.25 ** np.arange(5))


def test_fock_density_matrix_checks():
    C.FockDensityMatrix(C.thermal_state(1, 80)).check()
    with pytest.raises(ValueError):
        C.FockDensityMatrix(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        C.FockDensityMatrix(np.array([[0.5, 0.1], [0.3, 0.5]])).check()
    with pytest.raises(ValueError):
        C.FockDensityMatrix(np.diag([1.2, -0.2])).check()
    m = C.FockDensityMatrix(C.twin_beam_state(0.3, 30))
    assert m.arity == 2 and m.nmax == 30
    m.check()


@pytest.mark.parametrize("fn", [C.gaussian_dress, C.loss_dress])
def test_unit_efficiency_is_identity(fn):
    rho = random_state(8, 0)
    assert np.allclose(fn(rho, 1.0), rho, atol=1e-15)


@pytest.mark.parametrize("eta", [0.0, -0.1, 1.5])
def test_eta_range(eta):
    with pytest.raises(ValueError):
        C.gaussian_dress(C.fock_state(0, 2), eta)
    with pytest.raises(ValueError):
        C.loss_dress(C.fock_state(0, 2), eta)


def test_gaussian_thermal_to_thermal():
    eta = 0.8
    mbar = (1 - eta) / (2 * eta)
    out, f = C.gaussian_dress(C.thermal_state(2.0, 60), eta, nmax_out=40, return_renorm=True)
    assert np.abs(out - C.thermal_state(2.0 + mbar, 40)).max() < 1e-6
    assert np.all(np.abs(f - 1) <= 1e-6)


def test_gaussian_convolution_oracle_for_single_photon():
    eta = 0.8
    d2 = (1 - eta) / (4 * eta)
    out = C.gaussian_dress(C.fock_state(1, 1), eta, nmax_out=40)
    one = C.fock_state(1, 1)
    for x in (-2.0, -0.4, 0.0, 0.7, 1.9):
        ref = quad(lambda y: C.quadrature_pdf(one, y) * math.exp(-(x - y) ** 2 / (2 * d2)), -8, 8)[0]
        ref /= math.sqrt(2 * math.pi * d2)
        assert C.quadrature_pdf(out, x, 0.4) == pytest.approx(ref, abs=1e-10)


def test_loss_single_photon():
    eta = 0.6
    out = C.loss_dress(C.fock_state(1, 3), eta)
    ref = np.zeros((4, 4))
    ref[0, 0], ref[1, 1] = 1 - eta, eta
    assert np.allclose(out, ref, atol=1e-15)


def test_loss_thermal_thinning():
    out = C.loss_dress(C.thermal_state(3.0, 200), 0.7)
    assert np.abs(out[:40, :40] - C.thermal_state(2.1, 39)).max() < 1e-8


def test_inverse_loss_undoes_loss():
    rho = random_state(12, 1)
    assert np.allclose(C.loss_dress(C.inverse_loss(rho, 0.7), 0.7), rho, atol=1e-12)
    assert np.allclose(C.inverse_loss(C.loss_dress(rho, 0.7), 0.7), rho, atol=1e-10)


@given(e1=st.floats(0.05, 1.0), e2=st.floats(0.05, 1.0), seed=st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_loss_composition(e1, e2, seed):
    rho = random_state(10, seed)
    lhs = C.loss_dress(C.loss_dress(rho, e1), e2)
    assert np.abs(lhs - C.loss_dress(rho, e1 * e2)).max() < 1e-8


@pytest.mark.parametrize("eta", [0.9, 0.6, 0.3])
def test_trace_hermiticity_positivity(eta):
    rho = random_state(10, 3)
    g = C.gaussian_dress(rho, eta, nmax_out=9 + 8 * C.PAD)
    l = C.loss_dress(rho, eta)
    for out in (g, l):
        assert abs(np.trace(out).real - 1) < 1e-8
        assert np.array_equal(out, out.conj().T)
        assert np.linalg.eigvalsh(out).min() >= -1e-9


def test_loss_to_vacuum_limit():
    rho = random_state(8, 4)
    out = C.loss_dress(rho, 1e-9)
    assert out[0, 0].real == pytest.approx(1, abs=1e-7)


def test_gaussian_entropy_grows_with_noise():
    for nbar in (0.5, 2.0):
        rho = C.thermal_state(nbar, 60)
        ent = [entropy(np.real(np.diag(C.gaussian_dress(rho, eta, nmax_out=60))))
               for eta in (1.0, 0.95, 0.9, 0.8, 0.7, 0.6)]
        assert all(b > a for a, b in zip(ent, ent[1:]))


def test_superops_match_direct_maps():
    rho = random_state(9, 5)
    assert np.allclose(C.apply_superop(C.loss_superop(0.7, 8), rho), C.loss_dress(rho, 0.7), atol=1e-14)
    S = C.gaussian_superop(0.85, 8, 12)
    assert S.shape == (13, 13, 9, 9)
    assert np.allclose(C.apply_superop(S, rho), C.gaussian_dress(rho, 0.85, nmax_out=12), atol=1e-14)


def test_gaussian_padding_grows_when_needed():
    # a high Fock state leaks well past 16 extra levels at low eta
    out, f = C.gaussian_dress(C.fock_state(30, 30), 0.6, nmax_out=30, return_renorm=True)
    assert np.all(np.abs(f - 1) <= 1e-6)
    assert np.trace(out).real < 1


def test_apply_per_mode_twin_beam_loss_oracle():
    eta, tau = 0.8, math.sqrt(10 / 11)
    out = C.apply_per_mode(C.twin_beam_state(tau, 12 + C.PAD + 40), "loss", eta, nmax_out=12)
    p = C.two_mode_number_probs(out)
    ref = np.array([[sum(comb(k, n) * comb(k, m) * eta ** (n + m) * (1 - eta) ** (2 * k - n - m)
                         * (1 - tau**2) * tau ** (2 * k) for k in range(max(n, m), 201))
                     for m in range(13)] for n in range(13)])
    assert np.abs(p - ref).max() < 1e-8


def test_apply_per_mode_trace_identity_and_product_states():
    R = C.twin_beam_state(0.4, 25)
    assert np.allclose(C.apply_per_mode(R, "gaussian", 1.0), R)
    out = C.apply_per_mode(R, "loss", 0.7)
    assert C.FockDensityMatrix(out).trace() == pytest.approx(C.FockDensityMatrix(R).trace(), abs=1e-8)
    # on a product state the two-mode map factorises
    a, b = C.coherent_state(0.5, 10), C.thermal_state(0.3, 10)
    prod = np.einsum("ac,bd->abcd", a, b)
    res = C.apply_per_mode(prod, "gaussian", 0.9, nmax_out=8)
    ref = np.einsum("ac,bd->abcd", C.gaussian_dress(a, 0.9, 8), C.gaussian_dress(b, 0.9, 8))
    assert np.allclose(res, ref, atol=1e-13)
    wrapped = C.apply_per_mode(C.FockDensityMatrix(prod), "loss", 0.5)
    assert isinstance(wrapped, C.FockDensityMatrix)
    with pytest.raises(ValueError):
        C.apply_per_mode(a, "loss", 0.5)
