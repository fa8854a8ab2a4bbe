"""Continuity method for affine Hermitian-Einstein metrics.

Solves L_eps(f) = K_0 - gamma I + tr_g delbar(f^{-1} del_0 f) + eps log f = 0
along a decreasing eps-path from 1, where f is Hermitian positive with
respect to a normalized background metric h_0 with tr K_0 = r gamma.  Each
eps-step runs a Newton iteration on the Hermitian form f L_eps(f); updates
are parametrized as f -> f^{1/2} exp(s) f^{1/2} with s traceless Hermitian,
which preserves positivity and keeps det f = 1 structurally.

On convergence (eps below eps_min and the eps = 0 equation solvable) the
final metric h = h_0 f satisfies K = gamma I to solver accuracy.  When the
bundle admits no Hermitian-Einstein metric the path blows up instead:
m = max |log f| grows as eps decreases, and once it exceeds m_max the run
stops and hands the hot endomorphism to the destabilizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .bundle import (
    EndForm,
    FlatBundle,
    HermCalculus,
    canonical_metric,
    covariant_del0,
    end_delbar,
    end_trace_g,
    hermitian_connection,
    hermitize,
    mean_curvature,
)
from .errors import (
    Diverged,
    LinearSolveStagnation,
    NonHPD,
    PoissonSolveFailed,
    ValidationError,
)
from .forms import MetricField, laplacian_type
from .gauduchon import pairing
from .stability import degree
from .torus import AffineTorus

DEFAULT_M_MAX = 25.0
DEFAULT_EPS_MIN = 1e-4
DEFAULT_FACTOR = 0.5


def einstein_constant(bundle: FlatBundle, torus: AffineTorus, H: np.ndarray,
                      gG: MetricField, degree_offset: float = 0.0,
                      snap: bool = True) -> float:
    """gamma with gamma int omega^n/nu = n mu_g(E), snapped to 0 on tori.

    Torus degrees vanish up to quadrature error; values below 10/N^2 are
    replaced by the exact 0 so the path target does not drift.
    """
    n = torus.dim
    deg = degree(bundle, torus, H, gG) + degree_offset
    gamma = n * deg / bundle.rank / gG.total_volume()
    if snap and abs(gamma) < 10.0 / torus.resolution**2:
        gamma = 0.0
    return gamma


def solve_scalar_elliptic(gG: MetricField, rhs: np.ndarray, tol: float = 1e-12,
                          maxiter: int = 400) -> tuple[np.ndarray, float]:
    """Solve tr_g del delbar rho = rhs for a periodic scalar field.

    Constants are pinned by augmenting the operator with the grid mean; an
    FFT inverse of the constant-coefficient principal part preconditions the
    Krylov iterates.  Returns (rho, achieved sup residual).
    """
    torus = gG.torus
    n, N = torus.dim, torus.resolution
    shape = torus.grid_shape
    rhs = np.asarray(rhs, dtype=complex)
    scale = max(np.abs(rhs).max(), 1e-30)

    gbar = gG.inv.reshape(-1, n, n).mean(axis=0).real
    freqs = np.meshgrid(*(torus._freq for _ in range(n)), indexing="ij")
    mult = np.zeros(shape)
    for i in range(n):
        for j in range(n):
            mult -= (np.pi**2) * gbar[i, j] * freqs[i] * freqs[j]
    mult[mult == 0.0] = 1.0

    def op(v):
        rho = v.reshape(shape)
        out = laplacian_type(gG, rho) + rho.mean()
        return out.ravel()

    def prec(v):
        rho = v.reshape(shape)
        out = np.fft.ifftn(np.fft.fftn(rho) / mult)
        return out.ravel()

    A = spla.LinearOperator((torus.n_points,) * 2, matvec=op, dtype=complex)
    M = spla.LinearOperator((torus.n_points,) * 2, matvec=prec, dtype=complex)
    x, info = spla.lgmres(A, rhs.ravel(), M=M, rtol=tol, atol=tol * scale,
                          maxiter=maxiter)
    rho = x.reshape(shape)
    rho -= rho.mean()
    achieved = float(np.abs(laplacian_type(gG, rho) - rhs).max())
    # fd consistency floor: the discrete range misses rhs by O(N^-2)
    floor = tol * scale if torus.backend == "spectral" else 20.0 * scale / N**2
    if achieved > max(100 * tol * scale, 2 * floor, 1e-13):
        if info != 0 or achieved > max(1e-8 * scale, 10 * floor):
            raise PoissonSolveFailed(
                f"scalar elliptic solve residual {achieved:.3e} "
                f"(rhs scale {scale:.3e}, lgmres info {info})"
            )
    return rho, achieved


def normalize_background(bundle: FlatBundle, torus: AffineTorus,
                         h0_prime: np.ndarray, gG: MetricField,
                         gamma: float | None = None):
    """Produce the normalized background h_0 with tr K_0 = r gamma and the
    eps = 1 solution f_1.

    Conformally rescales h_0' by exp(rho) so that the trace of the mean
    curvature is the constant r gamma, then sets f_1 = exp(-K_1 + gamma I)
    and h_0 = h_1 f_1^{-1}; by construction L_1(f_1) = 0 up to
    discretization error.
    """
    r = bundle.rank
    if gamma is None:
        gamma = einstein_constant(bundle, torus, h0_prime, gG)
    K0p = mean_curvature(gG, bundle, torus, h0_prime)
    tr0 = np.einsum("...aa->...", K0p)
    # tr K is real in exact arithmetic; residual imaginary content is
    # truncation noise of the derivative backend
    imag_noise = float(np.abs(tr0.imag).max())
    if imag_noise > 0.1 * max(1.0, np.abs(tr0.real).max()):
        raise PoissonSolveFailed(
            f"trace of the mean curvature is not real (imag {imag_noise:.2e}); "
            "the background metric is not resolved on this grid"
        )
    rhs = tr0.real / r - gamma
    imbalance = abs(pairing(gG, rhs, np.ones(torus.grid_shape)))
    rho, solve_res = solve_scalar_elliptic(gG, rhs)
    rho = rho.real
    H1 = hermitize(np.exp(rho)[..., None, None] * h0_prime)
    K1 = mean_curvature(gG, bundle, torus, H1)
    tr_defect = float(np.abs(np.einsum("...aa->...", K1) - r * gamma).max())
    calc1 = HermCalculus(H1)
    eye = np.eye(r)
    f1 = calc1.exp(-(K1 - gamma * eye))
    f1 = calc1.hermitize(f1)
    H0 = hermitize(H1 @ np.linalg.inv(f1))
    diagnostics = {
        "gamma": gamma,
        "trK_defect": tr_defect,
        "rhs_imbalance": imbalance,
        "poisson_residual": solve_res,
        "trK_imag_noise": imag_noise,
    }
    return H0, f1, diagnostics


class ContinuationProblem:
    """Fixed data of one continuity-method run: bundle, grids, h_0, gamma."""

    def __init__(self, bundle: FlatBundle, torus: AffineTorus, H0: np.ndarray,
                 gG: MetricField, gamma: float):
        self.bundle = bundle
        self.torus = torus
        self.H0 = H0
        self.gG = gG
        self.gamma = gamma
        self.rank = bundle.rank
        self.calc0 = HermCalculus(H0)
        self.theta0 = hermitian_connection(bundle, torus, H0)
        self.K0 = mean_curvature(gG, bundle, torus, H0)
        self.eye = np.eye(bundle.rank)
        self.K0_shift = self.K0 - gamma * self.eye
        self._freqs = np.meshgrid(*(torus._freq for _ in range(torus.dim)),
                                  indexing="ij")
        gbar = gG.inv.reshape(-1, torus.dim, torus.dim).mean(axis=0).real
        lap = np.zeros(torus.grid_shape)
        for i in range(torus.dim):
            for j in range(torus.dim):
                lap += (np.pi**2) * gbar[i, j] * self._freqs[i] * self._freqs[j]
        self._principal_symbol = lap  # symbol of tr_g delbar del_0 at f = I

    # -- residual ----------------------------------------------------------
    def curvature_change(self, f: np.ndarray) -> np.ndarray:
        """tr_g delbar (f^{-1} del_0 f); exactly linear in log f at rank 1."""
        bundle, torus = self.bundle, self.torus
        n = torus.dim
        a = EndForm.zero(torus, bundle, 1, 0)
        if self.rank == 1:
            v = np.log(np.maximum(f[..., 0, 0].real, 1e-300)).astype(complex)
            for k in range(n):
                a.coeffs[..., k, 0, 0, 0] = 0.5 * torus.partial(v, k)
        else:
            finv = np.linalg.inv(f)
            d0f = covariant_del0(bundle, torus, self.theta0, f)
            for k in range(n):
                a.coeffs[..., k, 0, :, :] = finv @ d0f.coeffs[..., k, 0, :, :]
        return end_trace_g(self.gG, end_delbar(a))

    def residual(self, f: np.ndarray, eps: float) -> np.ndarray:
        """L_eps(f) as an endomorphism field (gauge storage)."""
        logf = self.calc0.log(f)
        return self.K0_shift + self.curvature_change(f) + eps * logf

    def residual_hat(self, f: np.ndarray, eps: float) -> np.ndarray:
        """f L_eps(f), Hermitian with respect to h_0 up to discretization."""
        return f @ self.residual(f, eps)

    def res_norm(self, f: np.ndarray, eps: float) -> float:
        return self.calc0.sup_norm(self.residual(f, eps))

    def m_value(self, f: np.ndarray) -> float:
        """max over the grid of the flat-frame Frobenius norm of log f."""
        if self.rank == 1:
            v = np.log(np.maximum(np.abs(f[..., 0, 0]), 1e-300))
            return float(np.abs(v).max())
        w, U = self.calc0.eig(f)
        w = np.maximum(w, 1e-300)
        Ud = np.conj(np.swapaxes(U, -1, -2))
        logf = self.calc0.from_hermitian(
            (U * np.log(w)[..., None, :]) @ Ud
        )
        gauge = self.bundle.gauge(self.torus)
        logf_flat = gauge.end_to_flat(logf)
        return float(np.sqrt(
            np.abs(np.einsum("...ab,...ab->...", logf_flat, np.conj(logf_flat)))
        ).max())

    def det_defect(self, f: np.ndarray) -> float:
        w = self.calc0.eigvals(f)
        return float(np.abs(w.prod(axis=-1) - 1.0).max())

    # -- linearization ------------------------------------------------------
    def linearize_residual(self, f: np.ndarray, phi: np.ndarray,
                           eps: float) -> np.ndarray:
        """Directional derivative of L_eps at f in direction phi (analytic)."""
        bundle, torus, n = self.bundle, self.torus, self.torus.dim
        a = EndForm.zero(torus, bundle, 1, 0)
        if self.rank == 1:
            # d/dt log(f + t phi) = phi / f for positive scalars
            v = (phi[..., 0, 0] / f[..., 0, 0]).astype(complex)
            for k in range(n):
                a.coeffs[..., k, 0, 0, 0] = 0.5 * torus.partial(v, k)
        else:
            finv = np.linalg.inv(f)
            d0f = covariant_del0(bundle, torus, self.theta0, f)
            d0phi = covariant_del0(bundle, torus, self.theta0, phi)
            for k in range(n):
                dk = d0f.coeffs[..., k, 0, :, :]
                a.coeffs[..., k, 0, :, :] = (
                    -finv @ phi @ finv @ dk + finv @ d0phi.coeffs[..., k, 0, :, :]
                )
        out = end_trace_g(self.gG, end_delbar(a))
        if eps != 0.0:
            out = out + eps * self.calc0.dlog(f, phi)
        return out

    def linearize_apply(self, f: np.ndarray, phi: np.ndarray, eps: float,
                        mode: str = "analytic", t_rel: float = 1e-6) -> np.ndarray:
        """Directional derivative of f L_eps(f) at f in direction phi.

        ``analytic`` assembles the exact derivative (complex-linear in phi);
        ``fd`` is the matrix-free central difference with step
        t = t_rel |f| / |phi|.
        """
        if not np.any(phi):
            return np.zeros_like(f)
        if mode == "fd":
            t = t_rel * max(np.abs(f).max(), 1e-30) / max(np.abs(phi).max(), 1e-30)
            plus = self.residual_hat(f + t * phi, eps)
            minus = self.residual_hat(f - t * phi, eps)
            return (plus - minus) / (2.0 * t)
        if mode != "analytic":
            raise ValidationError(f"unknown linearization mode {mode!r}")
        L = self.residual(f, eps)
        return phi @ L + f @ self.linearize_residual(f, phi, eps)

    def principal_term(self, phi: np.ndarray) -> np.ndarray:
        """tr_g delbar del_0 phi, the second-order part of the linearization."""
        d0phi = covariant_del0(self.bundle, self.torus, self.theta0, phi)
        return end_trace_g(self.gG, end_delbar(d0phi))

    # -- inner linear solves -------------------------------------------------
    def _precondition(self, v: np.ndarray, eps: float) -> np.ndarray:
        sym = self._principal_symbol + max(eps, 1e-8)
        vhat = np.fft.fftn(v, axes=tuple(range(self.torus.dim)))
        vhat /= sym[..., None, None]
        return np.fft.ifftn(vhat, axes=tuple(range(self.torus.dim)))

    def _traceless(self, s: np.ndarray) -> np.ndarray:
        if self.rank == 1:
            return s
        tr = np.einsum("...aa->...", s) / self.rank
        return s - tr[..., None, None] * self.eye

    def solve_newton_direction(self, f: np.ndarray, eps: float,
                               L: np.ndarray, tol: float = 1e-8,
                               dense_limit: int = 2600):
        """Solve DL(f)[f^{1/2} s f^{1/2}] = -L over traceless Hermitian s.

        The traceless constraint restricts the step to determinant-preserving
        moves, where every solution lives (det f = 1); the pointwise-trace
        sector of L vanishes there up to discretization, so nothing is lost.
        Without the restriction the scale sector couples to the eps log f
        term and produces useless giant Newton directions near scale
        degeneracy.  Krylov first (matvecs respect whatever invariant
        subspace the residual spans); dense minimum-norm fallback for small
        stagnating systems.
        """
        torus, r = self.torus, self.rank
        shape = torus.grid_shape + (r, r)
        size = torus.n_points * r * r
        sqf = self.calc0.sqrt_of(f)

        def apply_A(svec):
            s = self._traceless(svec.reshape(shape))
            phi = sqf @ s @ sqf
            return self._traceless(
                self.linearize_residual(f, phi, eps)
            ).ravel()

        def apply_M(v):
            return self._precondition(v.reshape(shape), eps).ravel()

        b = self._traceless(-L).ravel()
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros(shape, dtype=complex)

        x = None
        res = np.inf
        A = spla.LinearOperator((size, size), matvec=apply_A, dtype=complex)
        M = spla.LinearOperator((size, size), matvec=apply_M, dtype=complex)
        with np.errstate(over="ignore", invalid="ignore"):
            x, info = spla.lgmres(A, b, M=M, rtol=tol, atol=tol * bnorm,
                                  maxiter=60, inner_m=30)
        if np.isfinite(x).all():
            res = np.linalg.norm(apply_A(x) - b) / max(bnorm, 1e-300)
        else:
            x = None
        if (x is None or res > 0.5) and size <= dense_limit:
            Amat = np.empty((size, size), dtype=complex)
            e = np.zeros(size, dtype=complex)
            for j in range(size):
                e[j] = 1.0
                Amat[:, j] = apply_A(e)
                e[j] = 0.0
            x, *_ = np.linalg.lstsq(Amat, b, rcond=None)
            res = np.linalg.norm(Amat @ x - b) / max(bnorm, 1e-300)
        if res > 0.9 or not np.isfinite(x).all():
            raise LinearSolveStagnation(
                f"Newton linear solve stagnated (relative residual {res:.2e})"
            )
        s = self._traceless(self.calc0.hermitize(x.reshape(shape)))
        return s

    def renormalize_det(self, f: np.ndarray) -> np.ndarray:
        """Pointwise rescale to det f = 1 (exact projection onto the
        determinant-one states every converged solution lies on).

        Rank one is exempt: there the whole state is its determinant and the
        discrete equation owns the remaining scalar degree of freedom.
        """
        if self.rank == 1:
            return f
        sign, logdet = np.linalg.slogdet(f)
        scale = np.exp(-logdet.real / self.rank)
        return f * scale[..., None, None]

    def update(self, f: np.ndarray, s: np.ndarray, step: float = 1.0) -> np.ndarray:
        """f -> f^{1/2} exp(step s) f^{1/2}; stays Hermitian positive."""
        sqf = self.calc0.sqrt_of(f)
        es = self.calc0.exp(step * s)
        return self.calc0.hermitize(sqf @ es @ sqf)


@dataclass
class ContinuationState:
    epsilon: float
    f: np.ndarray
    h0: np.ndarray
    residual: float
    m: float
    det_defect: float
    history: list = field(default_factory=list)
    converged: bool = False
    message: str = ""


@dataclass
class HEResult:
    status: str                  # converged | blowup | max-iters
    final_metric: np.ndarray | None
    gamma: float
    K_defect: float
    blowup_data: np.ndarray | None
    history: list
    h0: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


STALL_ACCEPT = 50.0  # accept a stalled Newton iterate within this factor of tol


def newton_solve(problem: ContinuationProblem, eps: float, f_init: np.ndarray,
                 tol: float = 1e-8, max_newton: int = 30,
                 m_max: float | None = None,
                 rel_target: float | None = None) -> ContinuationState:
    """Newton iteration for L_eps(f) = 0 from f_init.

    With ``rel_target`` set, the goal is a fixed reduction of the entry
    residual (path-following mode: every eps-step must make real progress
    tracking the solution family even when residuals are tiny).  The
    achievable residual is bounded below by the discretization mismatch of
    the curvature-change identity, so an iterate that stalls within
    STALL_ACCEPT of the target counts as converged.  Raises Diverged when
    damping cannot reduce a genuinely large residual; returns early with
    the hot state when m crosses m_max (blow-up hand-off).
    """
    calc0 = problem.calc0
    f = calc0.hermitize(np.asarray(f_init, dtype=complex))
    res = problem.res_norm(f, eps)
    state = ContinuationState(eps, f, problem.H0, res, problem.m_value(f),
                              problem.det_defect(f))
    hard_floor = 1e-14 * max(1.0, float(np.abs(problem.K0).max()))
    tol_eff = max(tol, hard_floor)
    if rel_target is not None:
        tol_eff = max(min(tol_eff, rel_target * res), hard_floor)
    for it in range(max_newton):
        if res <= tol_eff:
            state.converged = True
            break
        if m_max is not None and state.m >= m_max:
            state.message = "m_max exceeded"
            break
        L = problem.residual(f, eps)
        try:
            s = problem.solve_newton_direction(f, eps, L)
        except LinearSolveStagnation as exc:
            state.message = str(exc)
            raise Diverged(f"Newton at eps={eps:.3e}: {exc}") from exc
        s_scale = float(np.abs(s).max())
        if s_scale > 30.0:
            # a factor beyond e^30 in one step is never a Newton step
            s = s * (30.0 / s_scale)
        accepted = False
        best = None
        for k in range(9):
            step = 0.5**k
            f_try = problem.renormalize_det(problem.update(f, s, step))
            try:
                res_try = problem.res_norm(f_try, eps)
            except (NonHPD, FloatingPointError):
                continue
            if not np.isfinite(res_try):
                continue
            if best is None or res_try < best[1]:
                best = (f_try, res_try)
            if res_try < 0.3 * res:
                break
        if best is not None and (best[1] < res * (1.0 - 1e-4) or best[1] < tol_eff):
            f, res = best
            accepted = True
        state.f = f
        state.residual = res
        state.m = problem.m_value(f)
        state.det_defect = problem.det_defect(f)
        state.history.append((eps, res, state.m, state.det_defect))
        if not accepted:
            if res <= STALL_ACCEPT * tol_eff:
                state.converged = True
                state.message = f"stalled near discretization floor ({res:.2e})"
                break
            raise Diverged(
                f"Newton at eps={eps:.3e} stalled at residual {res:.3e}"
            )
    else:
        if res > STALL_ACCEPT * tol_eff:
            raise Diverged(
                f"Newton at eps={eps:.3e} did not reach tol in {max_newton} steps "
                f"(residual {res:.3e})"
            )
        state.converged = True
    state.residual = res
    return state


def run_continuation(bundle: FlatBundle, torus: AffineTorus, gG: MetricField,
                     h0_prime: np.ndarray | None = None,
                     factor: float = DEFAULT_FACTOR,
                     eps_min: float = DEFAULT_EPS_MIN,
                     newton_tol: float = 1e-8,
                     max_steps: int = 200,
                     m_max: float = DEFAULT_M_MAX) -> HEResult:
    """Full continuity-method run: normalization, eps-path, blow-up watch.

    eps decreases geometrically (adaptive backtracking on Newton failure),
    with a relative per-step target so the iterate genuinely tracks the
    solution family.  Once eps falls below eps_min the eps = 0 equation is
    attempted directly.  A converged eps = 0 attempt only counts if the
    iterate barely moved: for strictly semistable bundles the eps = 0
    residual decays along the degenerating family without a solution
    existing, and the m-drift of the attempt exposes that.  Failing the
    attempt the path keeps descending (m grows roughly like log(1/eps))
    until m_max or the step budget is hit.  Never silently returns a
    non-converged metric.
    """
    if h0_prime is None:
        h0_prime = canonical_metric(bundle, torus)
    gamma = einstein_constant(bundle, torus, h0_prime, gG)
    H0, f1, norm_diag = normalize_background(bundle, torus, h0_prime, gG, gamma)
    problem = ContinuationProblem(bundle, torus, H0, gG, gamma)

    history: list[tuple[float, float, float, float]] = []
    eps = 1.0
    f = f1
    last_good: tuple[float, np.ndarray] | None = None
    tried_zero_at = -10
    blown = None

    def record(st: ContinuationState):
        history.append((st.epsilon, st.residual, st.m, st.det_defect))

    steps = 0
    while steps < max_steps:
        steps += 1
        try:
            st = newton_solve(problem, eps, f, tol=newton_tol, m_max=m_max,
                              rel_target=0.03)
        except Diverged:
            if last_good is None:
                return HEResult("max-iters", None, gamma, np.inf, None, history,
                                H0, norm_diag | {"message": "diverged at eps=1"})
            new_eps = float(np.sqrt(eps * last_good[0]))
            if new_eps / last_good[0] > 0.97:
                return HEResult("max-iters", None, gamma, np.inf, None, history,
                                H0, norm_diag | {"message":
                                                 f"stuck below eps={last_good[0]:.3e}"})
            f = last_good[1]
            eps = new_eps
            continue
        record(st)
        f = st.f
        if st.m >= m_max:
            blown = st
            break
        last_good = (eps, f)
        if eps <= eps_min and steps - tried_zero_at >= 8:
            tried_zero_at = steps
            m_before = problem.m_value(f)
            try:
                st0 = newton_solve(problem, 0.0, f, tol=newton_tol, m_max=m_max)
                record(st0)
                f = st0.f  # keep: for semistable bundles this pushes m up
                if st0.m >= m_max:
                    blown = st0
                    break
                drifted = st0.m - m_before > 0.5
                if st0.converged and not drifted and st0.m <= 0.5 * m_max:
                    Hfin = hermitize(H0 @ st0.f)
                    K = mean_curvature(gG, bundle, torus, Hfin)
                    Kdef = float(
                        np.sqrt(np.abs(
                            np.einsum("...ab,...ba->...", K - gamma * problem.eye,
                                      np.conj(np.swapaxes(
                                          K - gamma * problem.eye, -1, -2)))
                        )).max()
                    )
                    return HEResult("converged", Hfin, gamma, Kdef, None, history,
                                    H0, norm_diag | {"final_f": st0.f,
                                                     "residual": st0.residual})
            except Diverged:
                f = last_good[1]
        eps *= factor

    if blown is not None:
        return HEResult("blowup", None, gamma, np.inf, blown.f, history, H0,
                        norm_diag | {"eps_at_blowup": blown.epsilon,
                                     "m_at_blowup": blown.m})
    return HEResult("max-iters", None, gamma, np.inf, None, history, H0,
                    norm_diag | {"message": "step budget exhausted"})


def real_he_metric(bundle: FlatBundle, torus: AffineTorus, gG: MetricField,
                   splitting=None, **solver_kw):
    """Real Hermitian-Einstein metric on an R-stable real bundle.

    With a conjugate splitting E (x) C = V + conj(V), solves on V (half
    rank) and extends by h(xi, conj eta) = 0, h(conj xi, conj eta) =
    conj h(xi, eta); the result is real in the original frame.  Without a
    splitting (C-simple complexification) the complex solver runs directly.

    Returns (flat-frame metric on E (x) C, HEResult, reality_defect).
    """
    if bundle.field != "real":
        raise ValidationError("real_he_metric expects a real bundle")
    from .stability import conjugate_splitting, induced_monodromy

    ec = FlatBundle([m.astype(complex) for m in bundle.monodromy], "complex")
    if splitting is None:
        splitting = conjugate_splitting(bundle)
    if splitting is None:
        result = run_continuation(ec, torus, gG, **solver_kw)
        if result.status != "converged":
            return None, result, np.inf
        Hflat = ec.gauge(torus).herm_to_flat(result.final_metric)
        reality = float(np.abs(Hflat.imag).max() / max(1.0, np.abs(Hflat).max()))
        return Hflat, result, reality

    V, _ = splitting
    r = bundle.rank
    s = V.rank
    if 2 * s != r:
        raise ValidationError(
            f"conjugate splitting V of rank {s} does not halve rank {r}; "
            "E (x) C = V + conj(V) needs 2 rank(V) = rank(E)"
        )
    sub = FlatBundle(induced_monodromy(ec, V), "complex")
    result = run_continuation(sub, torus, gG, **solver_kw)
    if result.status != "converged":
        return None, result, np.inf
    HV_flat = sub.gauge(torus).herm_to_flat(result.final_metric)
    T = np.hstack([V.basis, np.conj(V.basis)])
    if np.linalg.cond(T) > 1e8:
        raise ValidationError("conjugate splitting basis is ill conditioned")
    Tinv = np.linalg.inv(T)
    HC = np.zeros(torus.grid_shape + (r, r), dtype=complex)
    HC[..., :s, :s] = HV_flat
    HC[..., s:, s:] = np.conj(HV_flat)
    Hreal = np.conj(Tinv.T) @ HC @ Tinv
    reality = float(np.abs(Hreal.imag).max() / max(1.0, np.abs(Hreal).max()))
    return Hreal, result, reality


def residual_L_eps(bundle: FlatBundle, torus: AffineTorus, f: np.ndarray,
                   eps: float, H0: np.ndarray, gG: MetricField,
                   gamma: float = 0.0) -> np.ndarray:
    """L_eps(f) = K_0 - gamma I + tr_g delbar(f^{-1} del_0 f) + eps log f.

    Convenience wrapper around :class:`ContinuationProblem` for one-off
    evaluations; f must be Hermitian positive with respect to h_0.
    """
    problem = ContinuationProblem(bundle, torus, H0, gG, gamma)
    calc = problem.calc0
    if calc.herm_defect(f) > 1e-6 * max(1.0, float(np.abs(f).max())):
        raise NonHPD("f is not Hermitian with respect to h_0")
    if calc.eigvals(f).min() <= 0:
        raise NonHPD("f is not positive")
    return problem.residual(f, eps)


def linearize_apply(bundle: FlatBundle, torus: AffineTorus, f: np.ndarray,
                    phi: np.ndarray, eps: float, H0: np.ndarray,
                    gG: MetricField, gamma: float = 0.0,
                    mode: str = "fd") -> np.ndarray:
    """Directional derivative of f L_eps(f) in direction phi (fd default)."""
    problem = ContinuationProblem(bundle, torus, H0, gG, gamma)
    return problem.linearize_apply(f, phi, eps, mode=mode)


def he_K_defect(bundle: FlatBundle, torus: AffineTorus, gG: MetricField,
                H_flat: np.ndarray, gamma: float = 0.0) -> float:
    """sup_x Frobenius norm of K(h) - gamma I for a flat-frame metric."""
    ec = bundle if bundle.field == "complex" else FlatBundle(
        [m.astype(complex) for m in bundle.monodromy], "complex")
    Hg = ec.gauge(torus).herm_to_gauge(np.asarray(H_flat, dtype=complex))
    K = mean_curvature(gG, ec, torus, Hg)
    D = K - gamma * np.eye(ec.rank)
    return float(np.sqrt(np.abs(
        np.einsum("...ab,...ba->...", D, np.conj(np.swapaxes(D, -1, -2)))
    )).max())
