"""Master equation of the two coupled resonators and its solvers.

The Hamiltonian in the frame rotating at the pump frequency is

    H = -delta_a a'a - delta_b b'b + J (a'b + b'a) - U b'b'bb
        + (eta_a a' + eta_a* a) + (eta_b b' + eta_b* b)

with thermal dissipators (rate/2) D(c, n_th) per bath, where

    D(c, n) rho = (n+1)(2 c rho c' - c'c rho - rho c'c)
                + n (2 c' rho c - c c' rho - rho c c').

In full mode each port couples to the mixture c_j = alpha_j a + beta_j b;
in simplified mode the jumps collapse to plain a and b with the total rates
kappa_a, kappa_b and rate-weighted thermal occupations.

Displaced-frame Liouvillians are built by substituting a -> alpha + a,
b -> beta + b with the mean-field amplitudes, which cancels the linear
drive terms and lets tiny Fock cutoffs (4 per mode) represent the state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lu_factor, lu_solve

from .hilbert import DensityMatrix, two_mode_annihilators

_BLAS_LIMITED = False


def _limit_blas_threads():
    """Pin BLAS pools to one thread unless the user configured them.

    The dense problems here are 256x256; multi-threaded OpenBLAS spends far
    more time spin-waiting between these tiny calls than computing.
    """
    global _BLAS_LIMITED
    if _BLAS_LIMITED:
        return
    _BLAS_LIMITED = True
    if any(v in os.environ for v in
           ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")):
        return
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=1, user_api="blas")
    except Exception:
        pass

TRACE_PRESERVATION_TOL = 1e-8
STEADY_STATE_RESIDUAL_TOL = 1e-9
MEAN_FIELD_TOL = 1e-12
MEAN_FIELD_MAX_ITER = 200
DENSE_SUPEROP_MAX_JOINT_DIM = 64   # above this the superoperator is stored sparse
MAX_SUPEROP_SIDE = 25_000          # overflow guard, covers cutoffs up to 12 per mode


class ConvergenceError(RuntimeError):
    """Mean-field iteration failed to converge."""


class SteadyStateError(RuntimeError):
    """Steady-state solve failed or the null space is degenerate."""


@dataclass(frozen=True)
class SystemParams:
    """All master-equation parameters, angular frequencies throughout.

    gamma_ports / port_coeffs / n_th_ports describe the four port baths
    (coefficients (alpha_j, beta_j) define the jump mixture); gamma_a and
    gamma_b are the intrinsic channels at the box occupation.  With
    ``simplified`` set, the jumps collapse to a and b at the total rates.
    """

    delta_a: float
    delta_b: float
    J: float
    U: float
    eta_a: complex = 0.0
    eta_b: complex = 0.0
    gamma_ports: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    port_coeffs: tuple[tuple[float, float], ...] = ((1, 0), (1, 0), (0, 1), (0, 1))
    n_th_ports: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    gamma_a: float = 0.0
    gamma_b: float = 0.0
    n_th_box: float = 0.0
    simplified: bool = True

    def __post_init__(self):
        if len(self.gamma_ports) != 4 or len(self.n_th_ports) != 4 or len(self.port_coeffs) != 4:
            raise ValueError("need exactly four ports")
        if min(self.gamma_ports) < 0 or self.gamma_a < 0 or self.gamma_b < 0:
            raise ValueError("rates must be >= 0")
        if min(self.n_th_ports) < 0 or self.n_th_box < 0:
            raise ValueError("occupations must be >= 0")
        if self.simplified and (self.kappa_a <= 0 or self.kappa_b <= 0):
            raise ValueError("simplified mode needs kappa_a > 0 and kappa_b > 0")
        if not self.simplified:
            for g, (ca, cb) in zip(self.gamma_ports, self.port_coeffs):
                if g > 0 and abs(ca * ca + cb * cb - 1.0) > 1e-9:
                    raise ValueError("port coefficients must be normalized where gamma > 0")

    @classmethod
    def from_mode_rates(cls, delta_a, delta_b, J, U, eta_a, eta_b,
                        kappa_a, kappa_b, n_th_a=0.0, n_th_b=0.0) -> "SystemParams":
        """Simplified-form parameters straight from per-mode rates and occupations."""
        return cls(delta_a=delta_a, delta_b=delta_b, J=J, U=U,
                   eta_a=eta_a, eta_b=eta_b,
                   gamma_ports=(kappa_a, 0.0, kappa_b, 0.0),
                   n_th_ports=(n_th_a, 0.0, n_th_b, 0.0),
                   simplified=True)

    @property
    def kappa_a(self) -> float:
        return self.gamma_ports[0] + self.gamma_ports[1] + self.gamma_a

    @property
    def kappa_b(self) -> float:
        return self.gamma_ports[2] + self.gamma_ports[3] + self.gamma_b

    @property
    def n_th_a(self) -> float:
        g = self.gamma_ports
        n = self.n_th_ports
        return (g[0] * n[0] + g[1] * n[1] + self.gamma_a * self.n_th_box) / self.kappa_a

    @property
    def n_th_b(self) -> float:
        g = self.gamma_ports
        n = self.n_th_ports
        return (g[2] * n[2] + g[3] * n[3] + self.gamma_b * self.n_th_box) / self.kappa_b

    def baths(self) -> list[tuple[float, tuple[complex, complex], float]]:
        """Jump channels as (rate, (c_a, c_b) mixture, n_th)."""
        if self.simplified:
            return [(self.kappa_a, (1.0, 0.0), self.n_th_a),
                    (self.kappa_b, (0.0, 1.0), self.n_th_b)]
        out = []
        for g, coeff, n in zip(self.gamma_ports, self.port_coeffs, self.n_th_ports):
            if g > 0:
                out.append((g, (coeff[0], coeff[1]), n))
        if self.gamma_a > 0:
            out.append((self.gamma_a, (1.0, 0.0), self.n_th_box))
        if self.gamma_b > 0:
            out.append((self.gamma_b, (0.0, 1.0), self.n_th_box))
        return out

    def damping_matrix(self) -> np.ndarray:
        """2x2 mean-field damping K = sum_j rate_j v_j v_j' (K/2 enters the drift)."""
        K = np.zeros((2, 2), dtype=complex)
        for rate, (ca, cb), _ in self.baths():
            v = np.array([ca, cb], dtype=complex)
            K += rate * np.outer(v, v.conj())
        return K


@dataclass(frozen=True)
class MeanFieldResult:
    alpha: complex
    beta: complex
    residual: float
    warnings: tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.alpha, self.beta))


def _mean_field_rhs(p: SystemParams, K: np.ndarray, x: np.ndarray) -> np.ndarray:
    al, be = x
    f_a = ((1j * p.delta_a) * al - 1j * p.J * be - 1j * p.eta_a
           - 0.5 * (K[0, 0] * al + K[0, 1] * be))
    f_b = ((1j * p.delta_b) * be - 1j * p.J * al - 1j * p.eta_b
           + 2j * p.U * abs(be) ** 2 * be
           - 0.5 * (K[1, 0] * al + K[1, 1] * be))
    return np.array([f_a, f_b])


def _real_jacobian(p: SystemParams, K: np.ndarray, x: np.ndarray) -> np.ndarray:
    """4x4 real Jacobian of the fixed-point map in (Re a, Im a, Re b, Im b)."""
    be = x[1]
    a11 = 1j * p.delta_a - 0.5 * K[0, 0]
    a12 = -1j * p.J - 0.5 * K[0, 1]
    a21 = -1j * p.J - 0.5 * K[1, 0]
    a22 = 1j * p.delta_b - 0.5 * K[1, 1] + 4j * p.U * abs(be) ** 2
    q22 = 2j * p.U * be ** 2   # d f_b / d conj(beta)

    def block(pp, qq):
        return np.array([[ (pp + qq).real, -(pp - qq).imag],
                         [ (pp + qq).imag,  (pp - qq).real]])

    jac = np.zeros((4, 4))
    jac[0:2, 0:2] = block(a11, 0.0)
    jac[0:2, 2:4] = block(a12, 0.0)
    jac[2:4, 0:2] = block(a21, 0.0)
    jac[2:4, 2:4] = block(a22, q22)
    return jac


def _newton(p: SystemParams, K: np.ndarray, x0: np.ndarray, scale: float,
            tol: float, max_iter: int) -> tuple[np.ndarray, float, bool]:
    x = x0.copy()
    f = _mean_field_rhs(p, K, x)
    res = np.linalg.norm(f) / scale
    for _ in range(max_iter):
        if res < tol:
            return x, res, True
        jac = _real_jacobian(p, K, x)
        rhs = -np.array([f[0].real, f[0].imag, f[1].real, f[1].imag])
        try:
            step = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            return x, res, False
        dx = np.array([step[0] + 1j * step[1], step[2] + 1j * step[3]])
        damp = 1.0
        for _ in range(30):
            x_new = x + damp * dx
            f_new = _mean_field_rhs(p, K, x_new)
            res_new = np.linalg.norm(f_new) / scale
            if res_new <= res or res_new < tol:
                break
            damp *= 0.5
        x, f, res = x_new, f_new, res_new
    return x, res, res < tol


def mean_field_steady_state(p: SystemParams, tol: float = MEAN_FIELD_TOL,
                            max_iter: int = MEAN_FIELD_MAX_ITER) -> MeanFieldResult:
    """Fixed point of the classical equations of motion.

    Damped Newton iteration started from the U = 0 linear response.  If
    perturbed restarts land on a different fixed point, the low-amplitude
    branch is returned and a bistability warning is attached.
    """
    K = p.damping_matrix()
    eta = np.array([1j * p.eta_a, 1j * p.eta_b])
    A = np.array([[1j * p.delta_a - 0.5 * K[0, 0], -1j * p.J - 0.5 * K[0, 1]],
                  [-1j * p.J - 0.5 * K[1, 0], 1j * p.delta_b - 0.5 * K[1, 1]]])
    x_lin = np.linalg.solve(A, eta)
    scale = max(abs(p.eta_a), abs(p.eta_b),
                p.kappa_a * (1.0 + abs(x_lin[0])), p.kappa_b * (1.0 + abs(x_lin[1])))

    starts = [x_lin]
    if p.U != 0 and p.delta_b < 0 and abs(x_lin[1]) > 0:
        # above the fold only the high-amplitude branch survives; seed that
        # basin at the fold amplitude over all four quadrature phases
        beta_fold = np.sqrt(-p.delta_b / (2.0 * p.U))
        starts += [np.array([x_lin[0], beta_fold * ph]) for ph in (1.0, -1.0, 1.0j, -1.0j)]
    starts += [0.3 * x_lin, 3.0 * x_lin]

    x = res = None
    for x0 in starts:
        x, res, ok = _newton(p, K, x0, scale, tol, max_iter)
        if ok:
            break
    else:
        raise ConvergenceError(
            f"mean-field Newton did not converge (residual {res:.2e} after {max_iter} iterations)")

    warnings: list[str] = []
    if p.U != 0 and (abs(x[0]) + abs(x[1])) > 0:
        probes = [x * factor for factor in (0.5, 1.5, 1.0j)]
        if p.delta_b < 0:
            # Kerr fold sits near |beta|^2 = -delta_b / (2U); probe that basin
            beta_fold = np.sqrt(-p.delta_b / (2.0 * p.U))
            probes += [np.array([x[0], beta_fold * ph]) for ph in (1.0, -1.0, 1.0j, -1.0j)]
        branches = [x]
        for x0 in probes:
            x_alt, res_alt, ok_alt = _newton(p, K, x0, scale, tol, max_iter)
            if ok_alt and not any(np.linalg.norm(x_alt - b) <= 1e-6 * (1 + np.linalg.norm(b))
                                  for b in branches):
                branches.append(x_alt)
        if len(branches) > 1:
            branches.sort(key=lambda b: abs(b[1]))
            x = branches[0]
            res = np.linalg.norm(_mean_field_rhs(p, K, x)) / scale
            warnings.append("bistable mean field: selected low-amplitude branch")

    return MeanFieldResult(complex(x[0]), complex(x[1]), float(res), tuple(warnings))


# --- superoperator plumbing (column-stacking convention) ---

def vec(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat, dtype=complex).reshape(-1, order="F")


def unvec(v: np.ndarray, side: int) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape((side, side), order="F")


def _kron(A: np.ndarray, B: np.ndarray, sparse: bool):
    # column-stacking convention: vec(A rho B) = kron(B.T, A) vec(rho)
    if sparse:
        return sp.kron(sp.csr_matrix(A), sp.csr_matrix(B), format="csr")
    return np.kron(A, B)


def _trace_row(side_joint: int) -> np.ndarray:
    row = np.zeros(side_joint * side_joint, dtype=complex)
    row[np.arange(side_joint) * (side_joint + 1)] = 1.0
    return row


@dataclass(frozen=True)
class Liouvillian:
    """Vectorized generator of the master equation.

    data is dense for small joint dimensions and CSR sparse above
    DENSE_SUPEROP_MAX_JOINT_DIM; displacement records the mean-field frame
    the generator was built in (None for the lab frame).
    """

    dims: tuple[int, int]
    data: object
    displacement: tuple[complex, complex] | None = None

    def __post_init__(self):
        side = int(np.prod(self.dims)) ** 2
        if self.data.shape != (side, side):
            raise ValueError(f"superoperator must be {side}x{side}, got {self.data.shape}")
        t = _trace_row(int(np.prod(self.dims)))
        leak = t @ self.data if not self.is_sparse else self.data.T.dot(t)
        scale = _max_abs(self.data)
        if np.abs(leak).max() > TRACE_PRESERVATION_TOL * scale:
            raise ValueError("Liouvillian is not trace preserving")

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.data)

    @property
    def side(self) -> int:
        return self.data.shape[0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        n = int(np.prod(self.dims))
        return unvec(self.data @ vec(rho), n)


def _max_abs(m) -> float:
    if sp.issparse(m):
        return float(np.abs(m.data).max()) if m.nnz else 0.0
    return float(np.abs(m).max())


def build_liouvillian(p: SystemParams, displacement: tuple[complex, complex] | None = None,
                      cutoffs: tuple[int, int] = (4, 4)) -> Liouvillian:
    """Assemble the (optionally displaced) Liouvillian at the given Fock cutoffs."""
    _limit_blas_threads()
    n_a, n_b = int(cutoffs[0]), int(cutoffs[1])
    joint = n_a * n_b
    if joint * joint > MAX_SUPEROP_SIDE:
        raise ValueError(
            f"superoperator side {joint * joint} exceeds the {MAX_SUPEROP_SIDE} guard")
    a_op, b_op = two_mode_annihilators(n_a, n_b)
    if displacement is not None:
        al, be = displacement
        A = a_op.shifted(al)
        B = b_op.shifted(be)
    else:
        A, B = a_op, b_op

    Ad, Bd = A.dag(), B.dag()
    H = (-p.delta_a * (Ad @ A) - p.delta_b * (Bd @ B)
         + p.J * (Ad @ B + Bd @ A)
         - p.U * (Bd @ Bd @ B @ B)
         + p.eta_a * Ad + np.conj(p.eta_a) * A
         + p.eta_b * Bd + np.conj(p.eta_b) * B)

    # Accumulate the left-acting and right-acting parts into one kron each;
    # each sandwich term c rho c' is a single kron(c'.T, c).
    sparse = joint > DENSE_SUPEROP_MAX_JOINT_DIM
    Hm = H.data
    eye = np.eye(joint)
    left = -1j * Hm
    right = 1j * Hm
    L = None

    def add(term):
        nonlocal L
        L = term if L is None else L + term

    for rate, (ca, cb), n_th in p.baths():
        C = (ca * A + cb * B).data
        Cd = C.conj().T
        CdC = Cd @ C
        half = 0.5 * rate
        left = left - half * (n_th + 1.0) * CdC
        right = right - half * (n_th + 1.0) * CdC
        add((rate * (n_th + 1.0)) * _kron(Cd.T, C, sparse))
        if n_th > 0:
            CCd = C @ Cd
            left = left - half * n_th * CCd
            right = right - half * n_th * CCd
            add((rate * n_th) * _kron(C.T, Cd, sparse))

    add(_kron(eye, left, sparse))
    add(_kron(right.T, eye, sparse))
    return Liouvillian((n_a, n_b), L, displacement)


def steady_state(L: Liouvillian) -> DensityMatrix:
    """Null vector of L with unit trace, via LU with one row replaced by the trace.

    Raises SteadyStateError when the solve is singular or the residual
    indicates a degenerate null space.
    """
    joint = int(np.prod(L.dims))
    side = L.side
    scale = _max_abs(L.data)
    if scale == 0.0:
        raise SteadyStateError("zero Liouvillian has a degenerate null space")
    t = _trace_row(joint)
    rhs = np.zeros(side, dtype=complex)
    rhs[0] = 1.0

    if L.is_sparse:
        M = (L.data / scale).tolil()
        M[0, :] = t
        try:
            lu = spla.splu(M.tocsc())
            x = lu.solve(rhs)
        except RuntimeError as exc:
            raise SteadyStateError(f"sparse LU failed: {exc}") from exc
    else:
        M = L.data / scale
        M[0, :] = t
        try:
            x = lu_solve(lu_factor(M, overwrite_a=True, check_finite=False), rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SteadyStateError(f"LU solve failed: {exc}") from exc

    if not np.all(np.isfinite(x)):
        raise SteadyStateError("steady-state solve produced non-finite entries")
    residual = np.linalg.norm(L.data @ x) / (scale * np.linalg.norm(x))
    if residual > STEADY_STATE_RESIDUAL_TOL:
        raise SteadyStateError(
            f"steady-state residual {residual:.2e} exceeds tolerance; "
            "the Liouvillian null space may be degenerate")

    rho = unvec(x, joint)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    return DensityMatrix(L.dims, rho).validate()


@dataclass(frozen=True)
class TwoTimeCorrelation:
    """Steady-state two-time moments of the displaced mode.

    n_tau[k] = <d'(t) d(t+tau_k)> and s_tau[k] = <d(t+tau_k) d(t)>;
    s_tau_alt carries the opposite operator ordering <d(t) d(t+tau_k)> of
    the anomalous correlator, whose difference from s_tau is reported
    rather than silently picked.
    """

    tau: np.ndarray
    n_tau: np.ndarray
    s_tau: np.ndarray
    s_tau_alt: np.ndarray

    def __post_init__(self):
        n0 = self.n_tau[0]
        tol = 1e-9 * max(1.0, abs(n0))
        if abs(n0.imag) > tol or n0.real < -tol:
            raise ValueError(f"n_tau[0] = {n0} is not a valid occupation")
        n0r = max(n0.real, 0.0)
        if abs(self.s_tau[0]) ** 2 > n0r * (n0r + 1.0) + 1e-9:
            raise ValueError("anomalous moment s_tau[0] violates Gaussian physicality")

    @property
    def ordering_discrepancy(self) -> float:
        return float(np.abs(self.s_tau - self.s_tau_alt).max())


def two_time_correlations(L: Liouvillian, rho_ss: DensityMatrix,
                          tau_grid) -> TwoTimeCorrelation:
    """Quantum-regression evaluation of n(tau), s(tau) on the tau grid.

    One eigendecomposition of the (dense, displaced-frame) Liouvillian is
    reused for every tau and every correlator.
    """
    if L.is_sparse:
        raise ValueError("two-time correlations need a dense (displaced-frame) Liouvillian")
    if L.dims != rho_ss.dims:
        raise ValueError(f"dims mismatch: {L.dims} vs {rho_ss.dims}")
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size == 0 or tau[0] != 0.0:
        raise ValueError("tau grid must be 1-d and start at 0")

    a_op, _ = two_mode_annihilators(*L.dims)
    d = a_op.data
    dd = d.conj().T
    rho = rho_ss.data

    evals, V = np.linalg.eig(L.data)
    scale = _max_abs(L.data)
    if evals.real.max() > 1e-6 * scale:
        raise SteadyStateError("Liouvillian has a significantly unstable eigenvalue")
    Vinv = np.linalg.inv(V)
    # row functional Tr[d . ] in the eigenbasis
    r = vec(d.T) @ V
    E = np.exp(np.outer(tau, evals))

    def correlator(initial: np.ndarray) -> np.ndarray:
        c = Vinv @ vec(initial)
        return E @ (r * c)

    n_tau = correlator(rho @ dd)
    s_tau = correlator(d @ rho)
    s_alt = correlator(rho @ d)
    return TwoTimeCorrelation(tau, n_tau, s_tau, s_alt)


@dataclass(frozen=True)
class Observables:
    """Displaced-frame steady-state observables of the measured mode."""

    n_tot: float
    g2_gaussian: float
    g2_prime: float
    n: float
    s: complex


def observables(rho_displaced: DensityMatrix, alpha: complex) -> Observables:
    """Population and the two g2(0) variants from the displaced steady state.

    g2_gaussian uses the Gaussian factorization of the fourth moment;
    g2_prime keeps the exact <d'd'dd> of the solved state.
    """
    d_op, _ = two_mode_annihilators(*rho_displaced.dims)
    d = d_op.data
    rho = rho_displaced.data
    dd = d.conj().T
    n = np.trace(dd @ d @ rho).real
    s = complex(np.trace(d @ d @ rho))
    q = np.trace(dd @ dd @ d @ d @ rho).real

    a2 = abs(alpha) ** 2
    n_tot = a2 + n
    if n_tot <= 0:
        raise ValueError("total population is zero; g2 undefined")
    shared = 2.0 * (np.conj(alpha) ** 2 * s).real + 4.0 * a2 * n + a2 * a2
    g2_prime = (q + shared) / n_tot**2
    g2_gauss = (abs(s) ** 2 + 2.0 * n * n + shared) / n_tot**2
    return Observables(float(n_tot), float(g2_gauss), float(g2_prime), float(n), s)


@dataclass(frozen=True)
class DisplacedSolution:
    """Mean field, displaced steady state and observables for one parameter point."""

    mean_field: MeanFieldResult
    liouvillian: Liouvillian
    rho: DensityMatrix
    obs: Observables

    @property
    def warnings(self) -> tuple[str, ...]:
        return self.mean_field.warnings


def displaced_solution(p: SystemParams, cutoffs: tuple[int, int] = (4, 4)) -> DisplacedSolution:
    """Mean field -> displaced Liouvillian -> steady state -> observables."""
    mf = mean_field_steady_state(p)
    L = build_liouvillian(p, displacement=(mf.alpha, mf.beta), cutoffs=cutoffs)
    rho = steady_state(L)
    obs = observables(rho, mf.alpha)
    return DisplacedSolution(mf, L, rho, obs)


def mode_occupation(rho: DensityMatrix, mode: int) -> float:
    """<a'a> (mode 0) or <b'b> (mode 1) of a two-mode state."""
    a_op, b_op = two_mode_annihilators(*rho.dims)
    op = a_op if mode == 0 else b_op
    return np.trace(op.dag().data @ op.data @ rho.data).real
