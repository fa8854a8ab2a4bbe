"""Flat bundles from commuting monodromy, and their extended Hermitian geometry.

A flat bundle over T^n is a list of commuting invertible r x r matrices
rho_1..rho_n.  Fields twisted by the monodromy (bundle metrics h, endomorphism
fields f) are stored in the *periodic gauge*: with B_k = log rho_k and
W(x) = exp(-sum_j x^j B_j),

    endomorphism fields   F_gauge = W F_flat W^{-1}     (periodic),
    metric fields         H_gauge = W^{-dag} H_flat W^{-1}  (periodic).

Periodicity of the stored arrays is exact, so both derivative backends apply
without boundary twists; the flat-frame derivative acquires the constant
correction terms

    (d_k F)_gauge = D_k F_gauge + [B_k, F_gauge],
    (d_k H)_gauge = D_k H_gauge - B_k^dag H_gauge - H_gauge B_k.

The flat frame is materialized only at the edges (I/O, wrap-semantics checks).
This storage also keeps the exponentially separated eigenvalue scales of
blow-up states from mixing additively, which matters once |log f| gets large.

Conventions: the metric matrix H acts as h(v, w) = w^dag H v, so the change
endomorphism between two metrics is F = H0^{-1} H, the connection form is
theta = H^{-1} del H, curvature Omega = delbar theta, mean curvature
K = g^{ij} Omega_{ij}, and c_1 = -del delbar log det H.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.linalg

from .errors import NonCommuting, NonHPD, NotAProjection, Singular, ValidationError
from .forms import Form, _derivative_table, dolbeault_del, dolbeault_delbar, MetricField
from .torus import AffineTorus


def _as_matrices(monodromy) -> list[np.ndarray]:
    mats = [np.asarray(m, dtype=complex) for m in monodromy]
    if not mats:
        raise ValidationError("monodromy list is empty")
    r = mats[0].shape[0]
    for m in mats:
        if m.ndim != 2 or m.shape != (r, r):
            raise ValidationError("monodromy matrices must be square and equally sized")
    return mats


class FlatBundle:
    """Rank-r flat vector bundle over T^n given by commuting monodromies."""

    def __init__(self, monodromy, field: str = "complex"):
        mats = _as_matrices(monodromy)
        if field not in ("real", "complex"):
            raise ValidationError(f"field must be 'real' or 'complex', got {field!r}")
        if field == "real":
            for m in mats:
                if np.abs(m.imag).max() > 0:
                    raise ValidationError("real bundle needs real monodromy matrices")
        r = mats[0].shape[0]
        for i, m in enumerate(mats):
            if abs(np.linalg.det(m)) < 1e-300 or not np.isfinite(m).all():
                raise Singular(f"monodromy matrix {i} is singular")
        scale = max(np.abs(m).max() for m in mats)
        for i in range(len(mats)):
            for j in range(i + 1, len(mats)):
                c = mats[i] @ mats[j] - mats[j] @ mats[i]
                norm = np.abs(c).max()
                if norm > 1e-12 * max(1.0, scale**2):
                    raise NonCommuting(i, j, norm)
        self.monodromy = mats
        self.rank = r
        self.field = field
        self.n_axes = len(mats)
        self._logs: list[np.ndarray] | None = None
        self._gauge_cache: dict[tuple[int, int], "GaugeData"] = {}

    def __repr__(self):
        return f"FlatBundle(rank={self.rank}, field={self.field!r}, n={self.n_axes})"

    @property
    def logs(self) -> list[np.ndarray]:
        """Principal logarithms B_k = log rho_k (commute pairwise)."""
        if self._logs is None:
            logs = [scipy.linalg.logm(m) for m in self.monodromy]
            logs = [np.asarray(b, dtype=complex) for b in logs]
            for i in range(len(logs)):
                for j in range(i + 1, len(logs)):
                    c = logs[i] @ logs[j] - logs[j] @ logs[i]
                    if np.abs(c).max() > 1e-8 * max(1.0, np.abs(logs[i]).max() * np.abs(logs[j]).max()):
                        raise ValidationError(
                            "monodromy logarithms do not commute; branch problem"
                        )
            self._logs = logs
        return self._logs

    def gauge(self, torus: AffineTorus) -> "GaugeData":
        if torus.dim != self.n_axes:
            raise ValidationError(
                f"bundle has {self.n_axes} monodromies but torus has dim {torus.dim}"
            )
        key = (torus.dim, torus.resolution)
        if key not in self._gauge_cache:
            self._gauge_cache[key] = GaugeData(self, torus)
        return self._gauge_cache[key]

    def is_trivial(self) -> bool:
        return all(
            np.abs(m - np.eye(self.rank)).max() < 1e-14 for m in self.monodromy
        )

    def det_twist_slopes(self) -> np.ndarray:
        """Linear slopes of log det h per axis: -2 log |det rho_k|."""
        return np.array(
            [-2.0 * np.log(abs(np.linalg.det(m))) for m in self.monodromy]
        )


def build_bundle(monodromy, field: str = "complex") -> FlatBundle:
    """Validated flat bundle; rejects non-commuting or singular input."""
    return FlatBundle(monodromy, field)


class GaugeData:
    """Cached gauge factors W(x) = exp(-sum_j x^j B_j) on one grid."""

    def __init__(self, bundle: FlatBundle, torus: AffineTorus):
        self.bundle = bundle
        self.torus = torus
        r, n, N = bundle.rank, torus.dim, torus.resolution
        logs = bundle.logs
        # per-axis cumulative powers of exp(-B_k / N); exact for commuting logs
        axis_pows = []
        for k in range(n):
            step = scipy.linalg.expm(-logs[k] / N)
            pows = np.empty((N, r, r), dtype=complex)
            pows[0] = np.eye(r)
            for i in range(1, N):
                pows[i] = pows[i - 1] @ step
            axis_pows.append(pows)
        W = axis_pows[0]
        for k in range(1, n):
            W = np.einsum("...ab,jbc->...jac", W, axis_pows[k])
        self.W = np.ascontiguousarray(W)
        self.Winv = np.linalg.inv(self.W)

    # conversions between the flat frame and the periodic gauge
    def end_to_gauge(self, F_flat: np.ndarray) -> np.ndarray:
        return self.W @ F_flat @ self.Winv

    def end_to_flat(self, F_gauge: np.ndarray) -> np.ndarray:
        return self.Winv @ F_gauge @ self.W

    def herm_to_gauge(self, H_flat: np.ndarray) -> np.ndarray:
        Winv_dag = np.conj(np.swapaxes(self.Winv, -1, -2))
        return Winv_dag @ H_flat @ self.Winv

    def herm_to_flat(self, H_gauge: np.ndarray) -> np.ndarray:
        W_dag = np.conj(np.swapaxes(self.W, -1, -2))
        return W_dag @ H_gauge @ self.W


# ---------------------------------------------------------------------------
# derivatives of twisted fields (gauge representation)
# ---------------------------------------------------------------------------

def d_end(bundle: FlatBundle, torus: AffineTorus, F: np.ndarray, axis: int) -> np.ndarray:
    """Flat-frame d/dx^axis of an endomorphism field, in the gauge."""
    B = bundle.logs[axis]
    dF = torus.partial(F, axis)
    return dF + B @ F - F @ B


def d_herm(bundle: FlatBundle, torus: AffineTorus, H: np.ndarray, axis: int) -> np.ndarray:
    """Flat-frame d/dx^axis of a bundle metric field, in the gauge."""
    B = bundle.logs[axis]
    Bd = np.conj(B.T)
    dH = torus.partial(H, axis)
    return dH - Bd @ H - H @ B


def shift_equivariant(bundle: FlatBundle, torus: AffineTorus, values: np.ndarray,
                      axis: int, step: int, kind: str = "end") -> np.ndarray:
    """Shift a *flat-frame* field by one grid step with the monodromy twist.

    Interior points shift plainly; the slab that crossed the fundamental
    domain boundary acquires the twist factor required by the field type
    (``end``: F -> rho F rho^{-1} per positive crossing, ``herm``:
    H -> rho^{-dag} H rho^{-1}).
    """
    if step not in (1, -1):
        raise ValidationError("step must be +1 or -1")
    if kind not in ("end", "herm"):
        raise ValidationError("kind must be 'end' or 'herm'")
    torus._check_axis(axis)
    rho = bundle.monodromy[axis]
    out = np.roll(values, -step, axis=axis)
    slab = [slice(None)] * out.ndim
    slab[axis] = -1 if step == 1 else 0
    slab = tuple(slab)
    if kind == "end":
        if step == 1:
            out[slab] = rho @ out[slab] @ np.linalg.inv(rho)
        else:
            out[slab] = np.linalg.inv(rho) @ out[slab] @ rho
    else:
        rho_inv = np.linalg.inv(rho)
        if step == 1:
            out[slab] = np.conj(rho_inv.T) @ out[slab] @ rho_inv
        else:
            out[slab] = np.conj(rho.T) @ out[slab] @ rho
    return out


# ---------------------------------------------------------------------------
# bundle-valued forms
# ---------------------------------------------------------------------------

@dataclass
class EndForm:
    """End(E)-valued (p,q)-form; coefficients in the periodic gauge."""

    torus: AffineTorus
    bundle: FlatBundle
    p: int
    q: int
    coeffs: np.ndarray  # grid + (C(n,p), C(n,q), r, r)

    def __post_init__(self):
        n, r = self.torus.dim, self.bundle.rank
        want = self.torus.grid_shape + (comb(n, self.p), comb(n, self.q), r, r)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != want:
            raise ValidationError(f"EndForm shape {self.coeffs.shape} != {want}")

    @classmethod
    def zero(cls, torus, bundle, p, q) -> "EndForm":
        n, r = torus.dim, bundle.rank
        return cls(torus, bundle, p, q,
                   torus.zeros(comb(n, p), comb(n, q), r, r))

    def __add__(self, other):
        return EndForm(self.torus, self.bundle, self.p, self.q,
                       self.coeffs + other.coeffs)

    def __sub__(self, other):
        return EndForm(self.torus, self.bundle, self.p, self.q,
                       self.coeffs - other.coeffs)

    def __neg__(self):
        return EndForm(self.torus, self.bundle, self.p, self.q, -self.coeffs)

    def sup_norm(self) -> float:
        return float(np.abs(self.coeffs).max())


def end_del(ef: EndForm) -> EndForm:
    """del on bundle-valued forms (coefficient derivative plus gauge terms)."""
    n, p = ef.torus.dim, ef.p
    if p >= n:
        return EndForm.zero(ef.torus, ef.bundle, p, ef.q)
    out = EndForm.zero(ef.torus, ef.bundle, p + 1, ef.q)
    for axis, i_in, i_out, sgn in _derivative_table(n, p):
        der = d_end(ef.bundle, ef.torus, ef.coeffs[..., i_in, :, :, :], axis)
        out.coeffs[..., i_out, :, :, :] += (0.5 * sgn) * der
    return out


def end_delbar(ef: EndForm) -> EndForm:
    """delbar on bundle-valued forms; sign (-1)^p as in the scalar case."""
    n, p, q = ef.torus.dim, ef.p, ef.q
    if q >= n:
        return EndForm.zero(ef.torus, ef.bundle, p, q)
    sign_p = (-1) ** p
    out = EndForm.zero(ef.torus, ef.bundle, p, q + 1)
    for axis, j_in, j_out, sgn in _derivative_table(n, q):
        der = d_end(ef.bundle, ef.torus, ef.coeffs[..., :, j_in, :, :], axis)
        out.coeffs[..., :, j_out, :, :] += (0.5 * sign_p * sgn) * der
    return out


def end_trace_g(metric: MetricField, ef: EndForm) -> np.ndarray:
    """g^{ij} T_{i jbar} for an End-valued (1,1)-form; EndField out."""
    if (ef.p, ef.q) != (1, 1):
        raise ValidationError("end_trace_g needs an End-valued (1,1)-form")
    return np.einsum("...ij,...ijab->...ab", metric.inv, ef.coeffs)


# ---------------------------------------------------------------------------
# Hermitian metrics on the bundle
# ---------------------------------------------------------------------------

HPD_FLOOR = 1e-12  # reject if min eigenvalue < floor * max eigenvalue


def check_hpd(H: np.ndarray, what: str = "metric") -> None:
    herm_defect = np.abs(H - np.conj(np.swapaxes(H, -1, -2))).max()
    scale = max(1.0, np.abs(H).max())
    if herm_defect > 1e-10 * scale:
        raise NonHPD(f"{what} is not Hermitian (defect {herm_defect:.2e})")
    ev = np.linalg.eigvalsh(H)
    if ev.min() <= HPD_FLOOR * max(ev.max(), 1e-300):
        raise NonHPD(f"{what} is not positive definite (min eig {ev.min():.3e})")


def hermitize(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))


def canonical_metric(bundle: FlatBundle, torus: AffineTorus) -> np.ndarray:
    """The exponential background metric; identity in the periodic gauge."""
    r = bundle.rank
    return np.broadcast_to(np.eye(r, dtype=complex),
                           torus.grid_shape + (r, r)).copy()


def random_hermitian_metric(bundle: FlatBundle, torus: AffineTorus, rng,
                            amplitude: float = 0.5, modes: int = 2) -> np.ndarray:
    """Random smooth HPD bundle metric (gauge storage): exp of a random
    low-frequency Hermitian field."""
    from .torus import random_smooth_scalar

    r = bundle.rank
    X = torus.zeros(r, r)
    for a in range(r):
        for b in range(a, r):
            s = random_smooth_scalar(torus, rng, modes=modes, amplitude=amplitude)
            if a == b:
                X[..., a, a] = s.real
            else:
                X[..., a, b] = 0.5 * s
                X[..., b, a] = 0.5 * np.conj(s)
    w, U = np.linalg.eigh(X)
    return (U * np.exp(w)[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))


@dataclass
class LogMetricDecomposition:
    """log det h split into a monodromy-fixed linear part and a periodic part."""

    linear_part: np.ndarray   # (n,) real; slope per axis
    periodic_part: np.ndarray  # grid, real


def log_metric_decomposition(bundle: FlatBundle, torus: AffineTorus,
                             H: np.ndarray) -> LogMetricDecomposition:
    """Decompose log det h for a gauge-stored metric.

    The twist fixes the slope exactly: crossing axis k scales det h by
    |det rho_k|^{-2}.  The gauge factor carries the whole linear part, so the
    periodic remainder is just log det of the stored array.
    """
    sign, logdet = np.linalg.slogdet(H)
    if np.any(sign.real <= 0):
        raise NonHPD("metric determinant is not positive")
    return LogMetricDecomposition(bundle.det_twist_slopes(), logdet.real)


def hermitian_connection(bundle: FlatBundle, torus: AffineTorus,
                         H: np.ndarray) -> EndForm:
    """Connection form theta = h^{-1} del h as an End-valued (1,0)-form.

    Rank one uses theta = del log h through the log-metric decomposition,
    which keeps the curvature exactly linear in log h on the grid.
    """
    check_hpd(H)
    n, r = torus.dim, bundle.rank
    out = EndForm.zero(torus, bundle, 1, 0)
    if r == 1:
        dec = log_metric_decomposition(bundle, torus, H)
        for k in range(n):
            # flat-frame log h = periodic part + linear part; the linear slope
            # -2 log|rho_k| differentiates to a constant, exactly
            c = 0.5 * (torus.partial(dec.periodic_part.astype(complex), k)
                       + dec.linear_part[k])
            out.coeffs[..., k, 0, 0, 0] = c
        return out
    Hinv = np.linalg.inv(H)
    for k in range(n):
        out.coeffs[..., k, 0, :, :] = Hinv @ (0.5 * d_herm(bundle, torus, H, k))
    return out


def extended_curvature(bundle: FlatBundle, torus: AffineTorus,
                       H: np.ndarray) -> EndForm:
    """Curvature Omega = delbar theta, an End-valued (1,1)-form."""
    return end_delbar(hermitian_connection(bundle, torus, H))


def mean_curvature(metric: MetricField, bundle: FlatBundle, torus: AffineTorus,
                   H: np.ndarray) -> np.ndarray:
    """Extended mean curvature K = g^{ij} R_{ij}; EndField (gauge)."""
    return end_trace_g(metric, extended_curvature(bundle, torus, H))


def first_chern_form(bundle: FlatBundle, torus: AffineTorus,
                     H: np.ndarray) -> Form:
    """c_1(E,h) = -del delbar log det h as a scalar (1,1)-form.

    The linear part of log det h has vanishing second derivatives and drops
    out; only the periodic part is differentiated.
    """
    check_hpd(H)
    dec = log_metric_decomposition(bundle, torus, H)
    u = Form.from_scalar(torus, dec.periodic_part.astype(complex))
    return -dolbeault_del(dolbeault_delbar(u))


def covariant_del0(bundle: FlatBundle, torus: AffineTorus, theta0: EndForm,
                   phi: np.ndarray) -> EndForm:
    """del_0 phi = del phi + [theta_0, phi] for an endomorphism field phi."""
    if (theta0.p, theta0.q) != (1, 0):
        raise ValidationError("theta0 must be an End-valued (1,0)-form")
    n = torus.dim
    out = EndForm.zero(torus, bundle, 1, 0)
    for k in range(n):
        th = theta0.coeffs[..., k, 0, :, :]
        out.coeffs[..., k, 0, :, :] = (
            0.5 * d_end(bundle, torus, phi, k) + th @ phi - phi @ th
        )
    return out


def second_fundamental_form(bundle: FlatBundle, torus: AffineTorus,
                            H: np.ndarray, pi: np.ndarray,
                            tol: float = 1e-8) -> EndForm:
    """A = (I - pi) del_0 pi for an h-orthogonal projection field pi.

    Vanishes exactly when the h-orthogonal complement of the image is flat.
    """
    r = bundle.rank
    eye = np.eye(r)
    proj_defect = np.abs(pi @ pi - pi).max()
    Hinv = np.linalg.inv(H)
    adj = Hinv @ np.conj(np.swapaxes(pi, -1, -2)) @ H
    adj_defect = np.abs(adj - pi).max()
    if proj_defect > tol or adj_defect > tol:
        raise NotAProjection(
            f"pi^2-pi defect {proj_defect:.2e}, pi*-pi defect {adj_defect:.2e} "
            f"exceed tolerance {tol:.1e}"
        )
    theta = hermitian_connection(bundle, torus, H)
    d0pi = covariant_del0(bundle, torus, theta, pi)
    comp = eye - pi
    out = EndForm.zero(torus, bundle, 1, 0)
    for k in range(torus.dim):
        out.coeffs[..., k, 0, :, :] = comp @ d0pi.coeffs[..., k, 0, :, :]
    return out


# ---------------------------------------------------------------------------
# pointwise functional calculus for h-self-adjoint endomorphism fields
# ---------------------------------------------------------------------------

class HermCalculus:
    """Spectral calculus w.r.t. a fixed bundle metric h (gauge storage).

    An endomorphism F is h-self-adjoint iff S = h^{1/2} F h^{-1/2} is plain
    Hermitian; functions of F are pulled through that conjugation.
    """

    def __init__(self, H: np.ndarray):
        H = np.asarray(H, dtype=complex)
        check_hpd(H)
        self.H = H
        self._identity = bool(
            np.abs(H - np.eye(H.shape[-1])).max() < 1e-14
        )
        if self._identity:
            self.sqrt = None
            self.isqrt = None
        else:
            w, U = np.linalg.eigh(hermitize(H))
            Ud = np.conj(np.swapaxes(U, -1, -2))
            self.sqrt = (U * np.sqrt(w)[..., None, :]) @ Ud
            self.isqrt = (U * (1.0 / np.sqrt(w))[..., None, :]) @ Ud

    def adjoint(self, F: np.ndarray) -> np.ndarray:
        """h-adjoint F^* = h^{-1} F^dag h."""
        Fd = np.conj(np.swapaxes(F, -1, -2))
        if self._identity:
            return Fd
        return self.isqrt @ (self.isqrt @ Fd @ self.sqrt) @ self.sqrt

    def hermitize(self, F: np.ndarray) -> np.ndarray:
        return 0.5 * (F + self.adjoint(F))

    def herm_defect(self, F: np.ndarray) -> float:
        return float(np.abs(F - self.adjoint(F)).max())

    def to_hermitian(self, F: np.ndarray) -> np.ndarray:
        if self._identity:
            return F
        return self.sqrt @ F @ self.isqrt

    def from_hermitian(self, S: np.ndarray) -> np.ndarray:
        if self._identity:
            return S
        return self.isqrt @ S @ self.sqrt

    def eig(self, F: np.ndarray):
        """Eigenvalues (real, ascending) and h-orthonormal frame of an
        h-self-adjoint field."""
        S = hermitize(self.to_hermitian(F))
        w, U = np.linalg.eigh(S)
        return w, U

    def eigvals(self, F: np.ndarray) -> np.ndarray:
        return self.eig(F)[0]

    def apply(self, F: np.ndarray, func, floor: float | None = None) -> np.ndarray:
        w, U = self.eig(F)
        if floor is not None:
            w = np.maximum(w, floor)
        fw = func(w)
        S = (U * fw[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))
        return self.from_hermitian(S)

    def log(self, F: np.ndarray, floor: float = 1e-30) -> np.ndarray:
        return self.apply(F, np.log, floor=floor)

    def exp(self, F: np.ndarray) -> np.ndarray:
        # clip keeps a wild Newton trial finite; the line search rejects it
        return self.apply(F, lambda w: np.exp(np.minimum(w, 500.0)))

    def power(self, F: np.ndarray, sigma: float, floor: float = 1e-30) -> np.ndarray:
        return self.apply(F, lambda w: w**sigma, floor=floor)

    def sqrt_of(self, F: np.ndarray) -> np.ndarray:
        return self.power(F, 0.5)

    def dlog(self, F: np.ndarray, Phi: np.ndarray) -> np.ndarray:
        """Frechet derivative of log at the HPD field F in direction Phi.

        Divided-difference (Daleckii-Krein) formula in the h-orthonormal
        eigenframe of F; complex-linear in Phi.
        """
        w, U = self.eig(F)
        w = np.maximum(w, 1e-300)
        Ud = np.conj(np.swapaxes(U, -1, -2))
        M = Ud @ self.to_hermitian(Phi) @ U
        wi = w[..., :, None]
        wj = w[..., None, :]
        diff = wi - wj
        small = np.abs(diff) < 1e-14 * np.maximum(wi, wj)
        ratio = np.where(
            small,
            2.0 / (wi + wj),
            np.log(np.where(small, 1.0, wi / wj)) / np.where(small, 1.0, diff),
        )
        S = M * ratio
        return self.from_hermitian(U @ S @ Ud)

    def inner(self, F: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Pointwise h-pairing tr(F G^*); scalar field."""
        return np.einsum("...ab,...ba->...", F, self.adjoint(G))

    def norm(self, F: np.ndarray) -> np.ndarray:
        """Pointwise h-Frobenius norm |F|; real scalar field."""
        return np.sqrt(np.maximum(self.inner(F, F).real, 0.0))

    def sup_norm(self, F: np.ndarray) -> float:
        return float(self.norm(F).max())

    def form_norm_sq(self, metric: MetricField, a: EndForm) -> np.ndarray:
        """|a|^2 = g^{ij} tr(a_i a_j^*) for an End-valued (1,0)-form."""
        if (a.p, a.q) != (1, 0):
            raise ValidationError("form_norm_sq expects a (1,0) End-form")
        n = a.torus.dim
        out = np.zeros(a.torus.grid_shape, dtype=complex)
        adj = [self.adjoint(a.coeffs[..., j, 0, :, :]) for j in range(n)]
        for i in range(n):
            for j in range(n):
                out += metric.inv[..., i, j] * np.einsum(
                    "...ab,...ba->...", a.coeffs[..., i, 0, :, :], adj[j]
                )
        return out.real
