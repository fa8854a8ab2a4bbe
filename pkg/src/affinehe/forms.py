"""Scalar-valued (p,q)-forms on the discrete affine torus.

A (p,q)-form is stored densely as a complex array of shape
``grid_shape + (C(n,p), C(n,q))`` over increasing multi-indices.  The two
Dolbeault operators act by

    del    = (1/2) (d (x) I)          on the first slot,
    delbar = (-1)^p (1/2) (I (x) d)   on the second slot,

the wedge product carries the sign (-1)^{q1 p2} in front of the slot-wise
exterior products, and conjugation maps a (p,q)-form to a (q,p)-form with
the sign (-1)^{pq}.  Division of an (n,n)-form by the parallel volume form
uses the sign (-1)^{n(n-1)/2}, which makes omega_g^n / nu positive for
positive definite g.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from .errors import NonHPD, ValidationError
from .torus import AffineTorus


@lru_cache(maxsize=None)
def increasing_indices(n: int, p: int) -> tuple[tuple[int, ...], ...]:
    """All strictly increasing p-tuples from range(n), lexicographic."""
    return tuple(combinations(range(n), p))


@lru_cache(maxsize=None)
def index_position(n: int, p: int) -> dict[tuple[int, ...], int]:
    return {idx: i for i, idx in enumerate(increasing_indices(n, p))}


def merge_sign(a: tuple[int, ...], b: tuple[int, ...]):
    """Sort the concatenation of two disjoint increasing tuples.

    Returns (sorted tuple, permutation sign), or (None, 0) on overlap.
    """
    if set(a) & set(b):
        return None, 0
    merged = a + b
    # count inversions of the concatenation
    inv = sum(1 for i in range(len(merged)) for j in range(i + 1, len(merged))
              if merged[i] > merged[j])
    return tuple(sorted(merged)), (-1) ** inv


@lru_cache(maxsize=None)
def _derivative_table(n: int, p: int):
    """Entries (axis, column_in, column_out, sign) for d on the p-slot."""
    table = []
    for i_in, idx in enumerate(increasing_indices(n, p)):
        for k in range(n):
            out, sgn = merge_sign((k,), idx)
            if out is None:
                continue
            table.append((k, i_in, index_position(n, p + 1)[out], sgn))
    return tuple(table)


@lru_cache(maxsize=None)
def _wedge_table(n: int, pa: int, qa: int, pb: int, qb: int):
    """Entries (ia, ja, ib, jb, iout, jout, sign) including (-1)^{qa pb}."""
    table = []
    front = (-1) ** (qa * pb)
    for ia, I1 in enumerate(increasing_indices(n, pa)):
        for ib, I2 in enumerate(increasing_indices(n, pb)):
            Iout, sI = merge_sign(I1, I2)
            if Iout is None:
                continue
            io = index_position(n, pa + pb)[Iout]
            for ja, J1 in enumerate(increasing_indices(n, qa)):
                for jb, J2 in enumerate(increasing_indices(n, qb)):
                    Jout, sJ = merge_sign(J1, J2)
                    if Jout is None:
                        continue
                    jo = index_position(n, qa + qb)[Jout]
                    table.append((ia, ja, ib, jb, io, jo, front * sI * sJ))
    return tuple(table)


@dataclass
class Form:
    """Scalar-valued (p,q)-form with dense increasing-multi-index storage."""

    torus: AffineTorus
    p: int
    q: int
    coeffs: np.ndarray  # grid_shape + (C(n,p), C(n,q)), complex

    def __post_init__(self):
        n = self.torus.dim
        if not (0 <= self.p <= n and 0 <= self.q <= n):
            raise ValidationError(f"degree ({self.p},{self.q}) out of range for n={n}")
        want = self.torus.grid_shape + (comb(n, self.p), comb(n, self.q))
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != want:
            raise ValidationError(
                f"coefficient shape {self.coeffs.shape} != expected {want}"
            )

    @classmethod
    def zero(cls, torus: AffineTorus, p: int, q: int) -> "Form":
        n = torus.dim
        return cls(torus, p, q, torus.zeros(comb(n, p), comb(n, q)))

    @classmethod
    def from_scalar(cls, torus: AffineTorus, values: np.ndarray) -> "Form":
        return cls(torus, 0, 0, np.asarray(values, dtype=complex)[..., None, None])

    def scalar(self) -> np.ndarray:
        if (self.p, self.q) != (0, 0):
            raise ValidationError("scalar() only defined for (0,0)-forms")
        return self.coeffs[..., 0, 0]

    def __add__(self, other: "Form") -> "Form":
        self._same_degree(other)
        return Form(self.torus, self.p, self.q, self.coeffs + other.coeffs)

    def __sub__(self, other: "Form") -> "Form":
        self._same_degree(other)
        return Form(self.torus, self.p, self.q, self.coeffs - other.coeffs)

    def __mul__(self, c) -> "Form":
        # scalar constant or pointwise scalar field
        c = np.asarray(c)
        if c.ndim > 0:
            c = c[..., None, None]
        return Form(self.torus, self.p, self.q, self.coeffs * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Form":
        return Form(self.torus, self.p, self.q, -self.coeffs)

    def _same_degree(self, other: "Form"):
        if (self.p, self.q) != (other.p, other.q) or self.torus is not other.torus:
            raise ValidationError("forms live on different spaces or degrees")

    def sup_norm(self) -> float:
        return float(np.abs(self.coeffs).max())


def dolbeault_del(omega: Form) -> Form:
    """del = (1/2)(d (x) I): (p,q) -> (p+1,q)."""
    n, p, q = omega.torus.dim, omega.p, omega.q
    if p >= n:
        import warnings

        warnings.warn("del of a top-degree form vanishes identically")
        return Form.zero(omega.torus, p, q)
    out = Form.zero(omega.torus, p + 1, q)
    for axis, i_in, i_out, sgn in _derivative_table(n, p):
        out.coeffs[..., i_out, :] += (0.5 * sgn) * omega.torus.partial(
            omega.coeffs[..., i_in, :], axis
        )
    return out


def dolbeault_delbar(omega: Form) -> Form:
    """delbar = (-1)^p (1/2)(I (x) d): (p,q) -> (p,q+1)."""
    n, p, q = omega.torus.dim, omega.p, omega.q
    if q >= n:
        import warnings

        warnings.warn("delbar of a top-degree form vanishes identically")
        return Form.zero(omega.torus, p, q)
    sign_p = (-1) ** p
    out = Form.zero(omega.torus, p, q + 1)
    for axis, j_in, j_out, sgn in _derivative_table(n, q):
        out.coeffs[..., :, j_out] += (0.5 * sign_p * sgn) * omega.torus.partial(
            omega.coeffs[..., :, j_in], axis
        )
    return out


def wedge(a: Form, b: Form) -> Form:
    """(phi1 (x) psi1) ^ (phi2 (x) psi2) = (-1)^{q1 p2} (phi1^phi2) (x) (psi1^psi2)."""
    if a.torus is not b.torus:
        raise ValidationError("wedge of forms on different tori")
    n = a.torus.dim
    if a.p + b.p > n or a.q + b.q > n:
        raise ValidationError(
            f"wedge degree overflow: ({a.p},{a.q}) ^ ({b.p},{b.q}) on n={n}"
        )
    out = Form.zero(a.torus, a.p + b.p, a.q + b.q)
    for ia, ja, ib, jb, io, jo, sgn in _wedge_table(n, a.p, a.q, b.p, b.q):
        out.coeffs[..., io, jo] += sgn * a.coeffs[..., ia, ja] * b.coeffs[..., ib, jb]
    return out


def conjugate_form(omega: Form) -> Form:
    """conj(alpha (x) beta) = (-1)^{pq} conj(beta) (x) conj(alpha): (p,q) -> (q,p)."""
    sign = (-1) ** (omega.p * omega.q)
    coeffs = sign * np.conj(np.swapaxes(omega.coeffs, -1, -2))
    return Form(omega.torus, omega.q, omega.p, coeffs)


def div_by_nu(chi: Form) -> np.ndarray:
    """Divide an (n,n)-form by the parallel volume form; scalar field out."""
    n = chi.torus.dim
    if (chi.p, chi.q) != (n, n):
        raise ValidationError(f"div_by_nu needs degree ({n},{n}), got ({chi.p},{chi.q})")
    sign = (-1) ** (n * (n - 1) // 2)
    return sign * chi.coeffs[..., 0, 0]


class MetricField:
    """Riemannian metric g: one real SPD n x n matrix per grid point."""

    def __init__(self, torus: AffineTorus, g: np.ndarray):
        self.torus = torus
        n = torus.dim
        g = np.asarray(g, dtype=float)
        if g.shape == (n, n):
            g = np.broadcast_to(g, torus.grid_shape + (n, n)).copy()
        if g.shape != torus.grid_shape + (n, n):
            raise ValidationError(f"metric shape {g.shape} invalid for {torus}")
        sym_defect = np.abs(g - np.swapaxes(g, -1, -2)).max()
        if sym_defect > 1e-12 * max(1.0, np.abs(g).max()):
            raise ValidationError(f"metric not symmetric (defect {sym_defect:.2e})")
        ev = np.linalg.eigvalsh(g)
        if ev.min() <= 0:
            raise NonHPD(f"metric not positive definite (min eigenvalue {ev.min():.3e})")
        self.g = g
        self._inv = None
        self._det = None
        self._omega_pow: dict[int, Form] = {}

    @property
    def inv(self) -> np.ndarray:
        if self._inv is None:
            self._inv = np.linalg.inv(self.g)
        return self._inv

    @property
    def det(self) -> np.ndarray:
        if self._det is None:
            self._det = np.linalg.det(self.g)
        return self._det

    def omega(self) -> Form:
        """The nondegenerate (1,1)-form g_ij dz^i (x) dzbar^j."""
        return Form(self.torus, 1, 1, self.g.astype(complex))

    def omega_pow(self, k: int) -> Form:
        """Wedge power omega^k, cached."""
        n = self.torus.dim
        if not 0 <= k <= n:
            raise ValidationError(f"omega power {k} out of range for n={n}")
        if k not in self._omega_pow:
            if k == 0:
                pw = Form.from_scalar(self.torus, np.ones(self.torus.grid_shape))
            else:
                pw = self.omega()
                for _ in range(k - 1):
                    pw = wedge(pw, self.omega())
            self._omega_pow[k] = pw
        return self._omega_pow[k]

    def volume_density(self) -> np.ndarray:
        """omega^n / nu as a positive scalar field (equals n! det g)."""
        return div_by_nu(self.omega_pow(self.torus.dim)).real

    def total_volume(self) -> float:
        return self.torus.integrate(self.volume_density()).real

    def conformal(self, factor: np.ndarray) -> "MetricField":
        """Pointwise rescaling factor * g for a positive scalar field."""
        f = np.asarray(factor, dtype=float)
        if f.shape != self.torus.grid_shape:
            raise ValidationError("conformal factor must be a scalar grid field")
        if f.min() <= 0:
            raise NonHPD("conformal factor must be positive")
        return MetricField(self.torus, self.g * f[..., None, None])

    def gauduchon_residual(self) -> float:
        """sup |del delbar(omega^{n-1}) / nu|; zero means affine Gauduchon."""
        n = self.torus.dim
        if n == 1:
            return 0.0
        ddbar = dolbeault_del(dolbeault_delbar(self.omega_pow(n - 1)))
        return float(np.abs(div_by_nu(ddbar)).max())


def trace_g(metric: MetricField, T: Form) -> np.ndarray:
    """g^{ij} T_{i jbar} for a scalar (1,1)-form; pointwise scalar field."""
    if (T.p, T.q) != (1, 1):
        raise ValidationError(f"trace_g needs a (1,1)-form, got ({T.p},{T.q})")
    return np.einsum("...ij,...ij->...", metric.inv, T.coeffs)


def integrate_top(torus: AffineTorus, chi: Form) -> complex:
    """Integral of an (n,n)-form over the torus: int chi / nu."""
    return torus.integrate(div_by_nu(chi))


def laplacian_type(metric: MetricField, psi: np.ndarray) -> np.ndarray:
    """tr_g del delbar psi = (1/4) g^{ij} psi_{,ij} for a scalar field."""
    phi = Form.from_scalar(metric.torus, psi)
    return trace_g(metric, dolbeault_del(dolbeault_delbar(phi)))
