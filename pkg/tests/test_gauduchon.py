"""Gauduchon conformal factor: operator oracles, adjointness, solver."""

import numpy as np
import pytest

from affinehe.errors import KernelNotOneDimensional, ValidationError
from affinehe.forms import MetricField
from affinehe.gauduchon import (
    apply_Q,
    apply_Qstar,
    assemble_Q,
    find_gauduchon_factor,
    pairing,
)
from affinehe.torus import AffineTorus, random_smooth_scalar


def sin_metric(torus, amplitude=0.5, axis=0):
    x = torus.coordinate(axis)
    n = torus.dim
    factor = 1.0 + amplitude * np.sin(2 * np.pi * x)
    return MetricField(torus, np.eye(n)[(None,) * n] * factor[..., None, None])


def test_Q_constant_metric_on_constants():
    t = AffineTorus(2, 16)
    g = MetricField(t, np.array([[2.0, 0.3], [0.3, 1.0]]))
    assert np.abs(apply_Q(g, np.ones(t.grid_shape))).max() < 1e-13


def test_Q_equals_Qstar_for_constant_metric(rng):
    t = AffineTorus(2, 16)
    g = MetricField(t, np.array([[2.0, 0.3], [0.3, 1.0]]))
    phi = random_smooth_scalar(t, rng, real=True)
    assert np.abs(apply_Q(g, phi) - apply_Qstar(g, phi)).max() < 1e-11


def test_Q_rejects_n1():
    t = AffineTorus(1, 16)
    g = MetricField(t, np.eye(1))
    with pytest.raises(ValidationError):
        apply_Q(g, np.ones(t.grid_shape))


def test_Qstar_oracle_T2():
    # psi = sin(2 pi x^1), g = I: Q*(psi) = -(pi^2/2) sin(2 pi x^1)
    t = AffineTorus(2, 32)
    g = MetricField(t, np.eye(2))
    x1 = t.coordinate(0)
    psi = np.sin(2 * np.pi * x1)
    out = apply_Qstar(g, psi)
    assert np.abs(out - (-(np.pi**2) / 2) * psi).max() < 1e-10
    assert np.abs(apply_Qstar(g, np.ones(t.grid_shape))).max() < 1e-13


def test_adjointness(rng):
    t = AffineTorus(2, 16)
    g = sin_metric(t, 0.4)
    for _ in range(5):
        phi = random_smooth_scalar(t, rng, real=True)
        psi = random_smooth_scalar(t, rng, real=True)
        lhs = pairing(g, apply_Q(g, phi), psi)
        rhs = pairing(g, phi, apply_Qstar(g, psi))
        assert abs(lhs - rhs) <= 10 / 16**2


def test_discrete_Qstar_kills_constants_exactly():
    # row structure of the assembled Q: constants lie in ker Q* exactly,
    # i.e. the volume-weighted column sums of Q vanish
    t = AffineTorus(2, 12)
    g = sin_metric(t, 0.4)
    A = assemble_Q(g)
    w = g.volume_density().ravel()
    assert np.abs(w @ A).max() < 1e-12 * np.abs(A).max()


def test_factor_constant_metric_trivial():
    t = AffineTorus(2, 16)
    g = MetricField(t, np.array([[2.0, 0.3], [0.3, 1.0]]))
    res = find_gauduchon_factor(g)
    assert res.already_gauduchon
    assert np.abs(res.factor - 1.0).max() == 0.0


def test_factor_n1_trivial():
    t = AffineTorus(1, 16)
    x = t.coordinate(0)
    g = MetricField(t, (2.0 + np.sin(2 * np.pi * x))[..., None, None])
    res = find_gauduchon_factor(g)
    assert np.abs(res.factor - 1.0).max() == 0.0
    assert res.residual == 0.0


def test_factor_T2_solver_and_analytic():
    t = AffineTorus(2, 32)
    g = sin_metric(t, 0.5)
    res = find_gauduchon_factor(g)
    assert res.q_residual <= 1e-8
    assert res.factor.min() > 0
    assert res.kernel_gap > 1e-6
    # conformal metric: the exact kernel is const / (1 + a sin)
    x1 = t.coordinate(0)
    c = 1.0 + 0.5 * np.sin(2 * np.pi * x1)
    phi_true = 1.0 / c
    phi_true *= t.integrate(g.volume_density()).real / t.integrate(
        phi_true * g.volume_density()).real
    assert np.abs(res.factor - phi_true).max() < 1e-8


def test_factor_idempotent():
    t = AffineTorus(2, 32)
    g = sin_metric(t, 0.5)
    res = find_gauduchon_factor(g)
    res2 = find_gauduchon_factor(res.metric)
    assert np.abs(res2.factor - 1.0).max() < 1e-6


def test_factor_T3_small():
    t = AffineTorus(3, 8)
    g = sin_metric(t, 0.4)
    res = find_gauduchon_factor(g)
    assert res.q_residual <= 1e-8
    assert res.factor.min() > 0


def test_fd_backend_degenerate_kernel_detected():
    t = AffineTorus(2, 16, backend="fd")
    g = sin_metric(t, 0.5)
    with pytest.raises(KernelNotOneDimensional):
        find_gauduchon_factor(g)
