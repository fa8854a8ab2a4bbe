"""Affine Gauduchon conformal factors.

Every conformal class [g] on the special affine torus contains a metric with
del delbar (omega^{n-1}) = 0, obtained as phi^{1/(n-1)} g from a positive
zero mode of the linear operator

    Q(phi) = del delbar (phi omega_g^{n-1}) / omega_g^n .

Q is assembled column by column from the form primitives; its kernel vector
is extracted with shifted inverse iteration, and a dense SVD certifies that
the discrete kernel is one-dimensional.  For n = 1 every metric is affine
Gauduchon and the factor is identically one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    KernelNotOneDimensional,
    NoPositiveKernel,
    ValidationError,
)
from .forms import (
    Form,
    MetricField,
    div_by_nu,
    dolbeault_del,
    dolbeault_delbar,
)


@dataclass
class GauduchonResult:
    """Positive factor, rescaled metric, and certification diagnostics."""

    factor: np.ndarray          # positive scalar field, normalized
    metric: MetricField         # g_G = factor^{1/(n-1)} g
    residual: float             # sup |del delbar omega_{g_G}^{n-1} / nu|
    q_residual: float           # sup |Q(factor)|
    kernel_gap: float           # sigma_2 / sigma_max of the assembled Q
    iterations: int = 0
    already_gauduchon: bool = field(default=False)


def apply_Q(metric: MetricField, phi: np.ndarray) -> np.ndarray:
    """Q(phi) = del delbar (phi omega^{n-1}) / omega^n; linear in phi."""
    torus = metric.torus
    n = torus.dim
    if n < 2:
        raise ValidationError(
            "Q is identically zero for n = 1; every metric is affine Gauduchon"
        )
    base = metric.omega_pow(n - 1)
    scaled = Form(torus, n - 1, n - 1,
                  base.coeffs * np.asarray(phi, dtype=complex)[..., None, None])
    top = dolbeault_del(dolbeault_delbar(scaled))
    return div_by_nu(top) / metric.volume_density()


def apply_Qstar(metric: MetricField, psi: np.ndarray) -> np.ndarray:
    """Adjoint of Q in the omega^n/nu pairing: (1/4n) g^{ij} psi_{,ij}."""
    torus = metric.torus
    n = torus.dim
    out = np.zeros(torus.grid_shape, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    dpsi = [torus.partial(psi, j) for j in range(n)]
    for i in range(n):
        for j in range(n):
            out += metric.inv[..., i, j] * torus.partial(dpsi[j], i)
    return out / (4.0 * n)


def pairing(metric: MetricField, phi: np.ndarray, psi: np.ndarray) -> complex:
    """<phi, psi>_g = int phi psi omega^n / nu."""
    return metric.torus.integrate(
        np.asarray(phi) * np.asarray(psi) * metric.volume_density()
    )


def assemble_Q(metric: MetricField) -> np.ndarray:
    """Dense matrix of Q acting on grid scalar fields (row-major raveling)."""
    torus = metric.torus
    npts = torus.n_points
    A = np.empty((npts, npts), dtype=complex)
    e = np.zeros(npts)
    for j in range(npts):
        e[j] = 1.0
        A[:, j] = apply_Q(metric, e.reshape(torus.grid_shape)).ravel()
        e[j] = 0.0
    return A


def _normalize_factor(metric: MetricField, phi: np.ndarray) -> np.ndarray:
    """Scale so int phi omega^n/nu = int omega^n/nu (fixes the free scale)."""
    w = metric.volume_density()
    scale = metric.torus.integrate(w).real / metric.torus.integrate(phi * w).real
    return phi * scale


GAUDUCHON_TOL = 1e-10       # residual below this counts as already Gauduchon
SIGN_TOL = 1e-6             # relative negativity allowed in the kernel vector
KERNEL_GAP_MIN = 1e-6       # sigma_2 must exceed this times sigma_max


def find_gauduchon_factor(metric: MetricField, tol: float = 1e-10,
                          max_iter: int = 50) -> GauduchonResult:
    """Positive kernel element of Q, normalized, with the rescaled metric.

    Shifted inverse iteration on the assembled discrete Q; a dense SVD
    certifies the one-dimensional kernel (the desk-scale grids keep the
    matrix small).  Raises NoPositiveKernel if the kernel vector changes
    sign, KernelNotOneDimensional if a second near-null direction exists.
    """
    torus = metric.torus
    n = torus.dim
    ones = np.ones(torus.grid_shape)
    if n == 1:
        return GauduchonResult(
            factor=ones, metric=metric, residual=0.0, q_residual=0.0,
            kernel_gap=np.inf, already_gauduchon=True,
        )
    res0 = metric.gauduchon_residual()
    if res0 <= GAUDUCHON_TOL:
        return GauduchonResult(
            factor=ones, metric=metric, residual=res0,
            q_residual=float(np.abs(apply_Q(metric, ones)).max()),
            kernel_gap=np.inf, already_gauduchon=True,
        )

    A = assemble_Q(metric)
    npts = A.shape[0]
    scale = np.abs(A).max()
    sv = scipy.linalg.svdvals(A)
    sigma_min, sigma_2 = sv[-1], sv[-2]
    gap = sigma_2 / sv[0]
    if sigma_2 < KERNEL_GAP_MIN * sv[0]:
        raise KernelNotOneDimensional(
            f"second smallest singular value {sigma_2:.3e} is not separated "
            f"from zero (largest {sv[0]:.3e}); discrete kernel is degenerate"
        )

    shift = 1e-13 * scale
    lu, piv = scipy.linalg.lu_factor(A + shift * np.eye(npts))
    x = np.ones(npts, dtype=complex)
    x /= np.linalg.norm(x)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        x = scipy.linalg.lu_solve((lu, piv), x)
        x /= np.linalg.norm(x)
        if np.linalg.norm(A @ x) <= tol * scale:
            break

    phi = x.reshape(torus.grid_shape)
    if np.abs(phi.imag).max() > 1e-8 * np.abs(phi.real).max():
        raise NoPositiveKernel("kernel vector has a significant imaginary part")
    phi = phi.real
    if phi.mean() < 0:
        phi = -phi
    if phi.min() < -SIGN_TOL * phi.max():
        raise NoPositiveKernel(
            f"kernel vector changes sign (min {phi.min():.3e}, max {phi.max():.3e}); "
            "discretization failed to produce a signed zero mode"
        )
    phi = np.maximum(phi, 1e-300)
    phi = _normalize_factor(metric, phi)

    g_G = metric.conformal(phi ** (1.0 / (n - 1)))
    return GauduchonResult(
        factor=phi,
        metric=g_G,
        residual=g_G.gauduchon_residual(),
        q_residual=float(np.abs(apply_Q(metric, phi)).max()),
        kernel_gap=float(gap),
        iterations=iterations,
    )
