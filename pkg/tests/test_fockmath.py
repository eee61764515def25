import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import eval_genlaguerre, eval_hermite

from selfhomodyne.fockmath import (
    displacement_matrix,
    displacement_matrix_element,
    laguerre_assoc,
    log_factorial,
    quad_char_element,
    quad_char_matrix,
    quad_wavefunction,
    quad_wavefunctions,
)


def test_log_factorial_matches_math():
    for n in (0, 1, 5, 20, 170):
        assert log_factorial(n) == pytest.approx(math.log(math.factorial(n)), rel=1e-13)
    arr = log_factorial(np.arange(6))
    assert np.allclose(arr, [math.log(math.factorial(k)) for k in range(6)])


def test_log_factorial_rejects_negative():
    with pytest.raises(ValueError):
        log_factorial(-1)
    with pytest.raises(ValueError):
        log_factorial(np.array([1, -2]))


@given(degree=st.integers(0, 25), order=st.integers(0, 25), x=st.floats(0.0, 30.0))
def test_laguerre_matches_scipy(degree, order, x):
    ref = eval_genlaguerre(degree, order, x)
    assert laguerre_assoc(degree, order, x) == pytest.approx(ref, rel=1e-9, abs=1e-9 * max(1.0, abs(ref)))


def test_displacement_vacuum_column_is_coherent_state():
    alpha = 0.8 - 0.6j
    col = np.array([displacement_matrix_element(n, 0, alpha) for n in range(15)])
    ref = np.array([math.exp(-abs(alpha) ** 2 / 2) * alpha**n / math.sqrt(math.factorial(n)) for n in range(15)])
    assert np.allclose(col, ref, atol=1e-14)


@given(re=st.floats(-2, 2), im=st.floats(-2, 2))
@settings(max_examples=30, deadline=None)
def test_displacement_matrix_is_unitary_block(re, im):
    w = complex(re, im)
    D = displacement_matrix(w, 80)
    block = (D.conj().T @ D)[:20, :20]
    assert np.allclose(block, np.eye(20), atol=1e-10)


def test_displacement_adjoint_is_negative_argument():
    w = 0.4 + 1.1j
    D = displacement_matrix(w, 12)
    assert np.allclose(D.conj().T, displacement_matrix(-w, 12), atol=1e-14)


def test_displacement_matrix_matches_elements_and_rectangular():
    w = np.array([0.3 + 0.2j, -1.0j])
    M = displacement_matrix(w, 6, n_cols=9)
    assert M.shape == (2, 7, 9)
    for i, wi in enumerate(w):
        for n in range(7):
            for m in range(9):
                assert M[i, n, m] == pytest.approx(displacement_matrix_element(n, m, wi), abs=1e-14)


def test_displacement_composition_phase():
    # D(a) D(b) = exp((a conj(b) - conj(a) b)/2) D(a + b)
    a, b = 0.3 + 0.1j, -0.2 + 0.4j
    big = 90
    lhs = (displacement_matrix(a, big) @ displacement_matrix(b, big))[:15, :15]
    phase = np.exp(0.5 * (a * np.conj(b) - np.conj(a) * b))
    assert np.allclose(lhs, phase * displacement_matrix(a + b, 14), atol=1e-12)


def test_quad_char_vacuum():
    for k in (0.0, 0.5, 3.0):
        assert quad_char_element(0, 0, k, 0.7) == pytest.approx(math.exp(-k * k / 8), abs=1e-15)


def test_quad_char_phase_dependence():
    k, phi = 1.3, 0.9
    for n, m in [(2, 0), (1, 3), (4, 4)]:
        ref = quad_char_element(n, m, k, 0.0) * np.exp(1j * (n - m) * phi)
        assert quad_char_element(n, m, k, phi) == pytest.approx(ref, abs=1e-14)
    M = quad_char_matrix(np.array([k]), 4, phi)[0]
    assert M[2, 0] == pytest.approx(quad_char_element(2, 0, k, phi), abs=1e-15)


def test_quad_char_matches_wavefunction_integral():
    # <n|exp(-ik X)|m> = int <n|x> exp(-ikx) <x|m> dx with real wavefunctions
    k = 1.7
    for n, m in [(0, 0), (1, 0), (3, 2), (5, 5)]:
        re = quad(lambda x: quad_wavefunction(n, x) * quad_wavefunction(m, x) * math.cos(k * x), -10, 10)[0]
        im = -quad(lambda x: quad_wavefunction(n, x) * quad_wavefunction(m, x) * math.sin(k * x), -10, 10)[0]
        assert quad_char_element(n, m, k, 0.0) == pytest.approx(complex(re, im), abs=1e-10)


def test_wavefunctions_orthonormal():
    x = np.linspace(-12, 12, 6001)
    psi = quad_wavefunctions(40, x)
    gram = psi @ psi.T * (x[1] - x[0])
    assert np.allclose(gram, np.eye(41), atol=1e-10)


def test_wavefunctions_match_hermite_formula():
    x = np.linspace(-3, 3, 31)
    for n in range(8):
        ref = ((2 / math.pi) ** 0.25 / math.sqrt(2.0**n * math.factorial(n))
               * eval_hermite(n, math.sqrt(2) * x) * np.exp(-x * x))
        assert np.allclose(quad_wavefunction(n, x), ref, atol=1e-13)


def test_vacuum_variance_is_quarter():
    x = np.linspace(-8, 8, 4001)
    p = quad_wavefunction(0, x) ** 2
    assert np.sum(p * x * x) * (x[1] - x[0]) == pytest.approx(0.25, rel=1e-10)
