"""Driven two-atom cavity master equation in the collective-state basis.

Hamiltonian (rotating frame of the drive, hbar = 1, rates in rad/s):

    H = -Delta*(s1'.s1 + s2'.s2) - delta_c*a'.a
        + g_plus*(a*S+' + a'*S+) + g_minus*(a*S-' + a'*S-)
        + d_plus*S+ + d_minus*S- + h.c.

with the collective lowering operators S+ = (s1 + s2)/sqrt(2) and
S- = (s1 - s2)/sqrt(2), couplings
g_+- = g*[1 +- cos(phi_z)]/sqrt(2) and drive coefficients
d_+ = (sqrt(2)*Omega_L/2)*cos(phi_y/2), d_- = i*(sqrt(2)*Omega_L/2)*sin(phi_y/2)
(atom 1 at -phi_y/2, atom 2 at +phi_y/2 along the drive axis).

Dissipation uses the jump operators sqrt(2*kappa)*a (photon loss at rate
2*kappa) and sqrt(gamma)*s_n for each atom.  The steady state solves the
vectorized Liouvillian null space with a trace constraint: a direct sparse LU
for Hilbert dimensions up to 24, an ILU-preconditioned LGMRES above (with LU
fallback).

Basis ordering is atom1 (x) atom2 (x) Fock with atom states (|g>, |e>) and
Fock states |0..n_max>; total dimension 4*(n_max + 1).  Vectorization is
column-stacking (Fortran order).

The default drive amplitude is the field-calibrated Rabi frequency
(core.rabi_frequency_from_field) so that quantum and classical models share
one drive calibration; pass ``omega_l`` explicitly to override.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import AtomConfig, SystemParams, rabi_frequency_from_field

_DIRECT_SOLVE_MAX_DIM = 24   # Hilbert dimension above which LGMRES is tried first
_RESIDUAL_RTOL = 1e-10       # ||L rho|| <= rtol * ||L||_F


class SteadyStateError(RuntimeError):
    """Liouvillian singular/degenerate or the solve failed to converge."""


@dataclass(frozen=True)
class HilbertSpace:
    """Truncated two-atom + Fock space; dim = 4*(n_max + 1)."""

    n_max: int

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max!r}")

    @property
    def dim(self) -> int:
        return 4 * (self.n_max + 1)


@dataclass(frozen=True)
class Operators:
    """Sparse operators on a :class:`HilbertSpace` (CSR, complex)."""

    a: sp.csr_matrix
    n_phot: sp.csr_matrix
    sm1: sp.csr_matrix
    sm2: sp.csr_matrix
    exc1: sp.csr_matrix
    exc2: sp.csr_matrix
    s_plus: sp.csr_matrix
    s_minus: sp.csr_matrix


@lru_cache(maxsize=16)
def _ops(n_max: int) -> Operators:
    nf = n_max + 1
    destroy = sp.diags(np.sqrt(np.arange(1, nf)), 1, format="csr", dtype=complex)
    id_f = sp.identity(nf, format="csr", dtype=complex)
    id_a = sp.identity(2, format="csr", dtype=complex)
    sm = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex))

    a = sp.kron(sp.kron(id_a, id_a), destroy, format="csr")
    sm1 = sp.kron(sp.kron(sm, id_a), id_f, format="csr")
    sm2 = sp.kron(sp.kron(id_a, sm), id_f, format="csr")
    root2 = math.sqrt(2.0)
    return Operators(
        a=a,
        n_phot=(a.conj().T @ a).tocsr(),
        sm1=sm1,
        sm2=sm2,
        exc1=(sm1.conj().T @ sm1).tocsr(),
        exc2=(sm2.conj().T @ sm2).tocsr(),
        s_plus=((sm1 + sm2) / root2).tocsr(),
        s_minus=((sm1 - sm2) / root2).tocsr(),
    )


def operators(hs: HilbertSpace) -> Operators:
    return _ops(hs.n_max)


@dataclass(frozen=True)
class DickeCouplings:
    """Collective cavity couplings and drive coefficients (rad/s).

    g_plus^2 + g_minus^2 = g^2*(1 + cos^2(phi_z)) = 2*g^2*H holds exactly.
    ``drive_plus``/``drive_minus`` multiply the lowering operators S+-
    in the drive term (the Hermitian conjugate is added separately).
    """

    g_plus: float
    g_minus: float
    drive_plus: complex
    drive_minus: complex


def dicke_couplings(p: SystemParams, cfg: AtomConfig,
                    omega_l: float | None = None) -> DickeCouplings:
    """Collective couplings for a two-atom configuration."""
    if cfg.n_atoms != 2:
        raise ValueError("the quantum model is restricted to n_atoms = 2")
    if omega_l is None:
        omega_l = rabi_frequency_from_field(p)
    cz = math.cos(cfg.phi_z)
    amp = math.sqrt(2.0) * omega_l / 2.0
    return DickeCouplings(
        g_plus=p.g * (1.0 + cz) / math.sqrt(2.0),
        g_minus=p.g * (1.0 - cz) / math.sqrt(2.0),
        drive_plus=amp * math.cos(cfg.phi_y / 2.0),
        drive_minus=1j * amp * math.sin(cfg.phi_y / 2.0),
    )


def build_hamiltonian(p: SystemParams, cfg: AtomConfig, hs: HilbertSpace,
                      omega_l: float | None = None) -> sp.csr_matrix:
    """Hamiltonian in the Dicke form (see module docstring)."""
    ops = operators(hs)
    dc = dicke_couplings(p, cfg, omega_l)
    ad = ops.a.conj().T
    h = (-p.delta_a) * (ops.exc1 + ops.exc2) + (-p.delta_c) * ops.n_phot
    for g_pm, s_pm in ((dc.g_plus, ops.s_plus), (dc.g_minus, ops.s_minus)):
        h = h + g_pm * (ops.a @ s_pm.conj().T + ad @ s_pm)
    for d_pm, s_pm in ((dc.drive_plus, ops.s_plus), (dc.drive_minus, ops.s_minus)):
        h = h + d_pm * s_pm + np.conj(d_pm) * s_pm.conj().T
    return h.tocsr()


def build_hamiltonian_site_basis(p: SystemParams, cfg: AtomConfig, hs: HilbertSpace,
                                 omega_l: float | None = None) -> sp.csr_matrix:
    """Same Hamiltonian written atom by atom (couplings g and g*cos(phi_z),
    drive phases -phi_y/2 and +phi_y/2); equal to :func:`build_hamiltonian`
    up to rounding and used as an independent construction check."""
    if cfg.n_atoms != 2:
        raise ValueError("the quantum model is restricted to n_atoms = 2")
    if omega_l is None:
        omega_l = rabi_frequency_from_field(p)
    ops = operators(hs)
    ad = ops.a.conj().T
    couplings = (p.g, p.g * math.cos(cfg.phi_z))
    phases = (-cfg.phi_y / 2.0, +cfg.phi_y / 2.0)
    h = (-p.delta_a) * (ops.exc1 + ops.exc2) + (-p.delta_c) * ops.n_phot
    for g_n, phi_n, sm_n in zip(couplings, phases, (ops.sm1, ops.sm2)):
        smd = sm_n.conj().T
        h = h + g_n * (ops.a @ smd + ad @ sm_n)
        d_n = (omega_l / 2.0) * np.exp(1j * phi_n)
        h = h + d_n * smd + np.conj(d_n) * sm_n
    return h.tocsr()


def collapse_operators_from_rates(kappa: float, gamma: float,
                                  hs: HilbertSpace) -> list[sp.csr_matrix]:
    """Jump operators [sqrt(2*kappa)*a, sqrt(gamma)*s1, sqrt(gamma)*s2].

    Zero rates are permitted here (zero operators) for limit checks.
    """
    if kappa < 0.0 or gamma < 0.0:
        raise ValueError("rates must be non-negative")
    ops = operators(hs)
    return [
        math.sqrt(2.0 * kappa) * ops.a,
        math.sqrt(gamma) * ops.sm1,
        math.sqrt(gamma) * ops.sm2,
    ]


def collapse_operators(p: SystemParams, hs: HilbertSpace) -> list[sp.csr_matrix]:
    return collapse_operators_from_rates(p.kappa, p.gamma, hs)


def liouvillian(h: sp.spmatrix, c_ops: list[sp.spmatrix]) -> sp.csr_matrix:
    """Vectorized Liouvillian (column-stacking convention)."""
    dim = h.shape[0]
    ident = sp.identity(dim, format="csr", dtype=complex)
    lv = -1j * (sp.kron(ident, h) - sp.kron(h.T, ident))
    for c in c_ops:
        cdc = (c.conj().T @ c).tocsr()
        lv = lv + sp.kron(c.conj(), c) \
            - 0.5 * sp.kron(ident, cdc) - 0.5 * sp.kron(cdc.T, ident)
    return lv.tocsr()


@dataclass
class SteadyState:
    """Steady-state density matrix and its headline observables.

    ``converged`` reports the Fock-cutoff check when one was requested
    (None means unchecked); ``residual`` is ||L rho||_2 in physical units.
    """

    rho: np.ndarray
    n_p: float
    p_exc: float
    converged: bool | None
    residual: float


def expectation(rho: np.ndarray, op: sp.spmatrix) -> complex:
    """tr(rho @ op) for dense rho and sparse op."""
    return complex(op.multiply(rho.T).sum())


def _solve_modified(a_mod: sp.csc_matrix, b: np.ndarray, dim: int) -> np.ndarray:
    """Solve the trace-row-replaced system, iterative first for large spaces."""
    if dim > _DIRECT_SOLVE_MAX_DIM:
        try:
            ilu = spla.spilu(a_mod, drop_tol=1e-6, fill_factor=40.0)
            precond = spla.LinearOperator(a_mod.shape, matvec=ilu.solve)
            x, info = spla.lgmres(a_mod, b, M=precond, rtol=1e-13, atol=0.0,
                                  maxiter=1000)
            if info == 0:
                return x
        except RuntimeError:
            pass  # singular ILU; fall through to the direct factorization
    try:
        lu = spla.splu(a_mod)
    except RuntimeError as exc:
        raise SteadyStateError(
            f"no unique steady state (Liouvillian factorization failed: {exc})"
        ) from exc
    x = lu.solve(b)
    # Two iterative-refinement sweeps push the residual toward rounding level.
    for _ in range(2):
        r = b - a_mod @ x
        if np.linalg.norm(r) < 1e-14:
            break
        x = x + lu.solve(r)
    return x


def steady_state(h: sp.spmatrix, c_ops: list[sp.spmatrix]) -> SteadyState:
    """Solve L(rho) = 0 with tr(rho) = 1.

    Raises :class:`SteadyStateError` when the Liouvillian has no unique null
    vector or the residual exceeds ``1e-10 * ||L||_F``.
    """
    dim = h.shape[0]
    if not c_ops or all(abs(c).max() == 0.0 for c in c_ops):
        raise SteadyStateError("need at least one nonzero collapse operator")
    lv = liouvillian(h, c_ops)
    norm_l = math.sqrt(float(np.sum(np.abs(lv.data) ** 2)))
    scale = float(np.max(np.abs(lv.data)))
    a = (lv / scale).tocsr()

    diag_idx = np.arange(dim) * dim + np.arange(dim)
    trace_row = sp.csr_matrix(
        (np.ones(dim), (np.zeros(dim, dtype=int), diag_idx)),
        shape=(1, dim * dim), dtype=complex,
    )
    a_mod = sp.vstack([trace_row, a[1:, :]]).tocsc()
    b = np.zeros(dim * dim, dtype=complex)
    b[0] = 1.0

    x = _solve_modified(a_mod, b, dim)
    rho = x.reshape((dim, dim), order="F")
    rho = 0.5 * (rho + rho.conj().T)
    tr = float(np.trace(rho).real)
    if not math.isfinite(tr) or abs(tr) < 1e-8:
        raise SteadyStateError(f"degenerate solution: trace(rho) = {tr!r}")
    rho /= tr

    residual = float(np.linalg.norm(lv @ rho.flatten(order="F")))
    if residual > _RESIDUAL_RTOL * norm_l:
        raise SteadyStateError(
            f"steady-state residual {residual:.3e} exceeds "
            f"{_RESIDUAL_RTOL:.1e} * ||L|| = {_RESIDUAL_RTOL * norm_l:.3e}"
        )

    ops = _ops(dim // 4 - 1)
    n_p = expectation(rho, ops.n_phot).real
    p_exc = (expectation(rho, ops.exc1) + expectation(rho, ops.exc2)).real
    return SteadyState(rho=rho, n_p=n_p, p_exc=p_exc, converged=None,
                       residual=residual)


@dataclass(frozen=True)
class Observables:
    """Detector-facing quantities of a steady state."""

    n_p: float
    r_d: float
    p_exc: float
    p_exc_atoms: tuple[float, float]
    pop_plus: float
    pop_minus: float


def observables(ss: SteadyState, p: SystemParams) -> Observables:
    """Photon number, detected rate eta*kappa*n_p, atomic excited populations
    and the symmetric/antisymmetric collective populations <S+-' S+->."""
    dim = ss.rho.shape[0]
    ops = _ops(dim // 4 - 1)
    e1 = expectation(ss.rho, ops.exc1).real
    e2 = expectation(ss.rho, ops.exc2).real
    pop_plus = expectation(ss.rho, (ops.s_plus.conj().T @ ops.s_plus)).real
    pop_minus = expectation(ss.rho, (ops.s_minus.conj().T @ ops.s_minus)).real
    return Observables(
        n_p=ss.n_p,
        r_d=p.eta * p.kappa * ss.n_p,
        p_exc=e1 + e2,
        p_exc_atoms=(e1, e2),
        pop_plus=pop_plus,
        pop_minus=pop_minus,
    )


def photon_gain_rate(rho: np.ndarray, h: sp.spmatrix) -> float:
    """Coherent photon inflow i*<[H, n]> from the atoms; balances 2*kappa*n_p
    in steady state."""
    dim = rho.shape[0]
    n_phot = _ops(dim // 4 - 1).n_phot
    comm = (h @ n_phot - n_phot @ h).tocsr()
    return (1j * expectation(rho, comm)).real


def steady_observables(p: SystemParams, cfg: AtomConfig, n_max: int = 5,
                       omega_l: float | None = None,
                       check_cutoff: bool = False) -> tuple[SteadyState, Observables]:
    """Build the model, solve the steady state and evaluate observables.

    ``check_cutoff=True`` re-solves at n_max + 2 and flags convergence when
    the photon numbers agree to 1e-6 relative.
    """
    hs = HilbertSpace(n_max)
    h = build_hamiltonian(p, cfg, hs, omega_l)
    ss = steady_state(h, collapse_operators(p, hs))
    if check_cutoff:
        hs2 = HilbertSpace(n_max + 2)
        h2 = build_hamiltonian(p, cfg, hs2, omega_l)
        ss2 = steady_state(h2, collapse_operators(p, hs2))
        ss.converged = bool(
            abs(ss2.n_p - ss.n_p) <= 1e-6 * max(abs(ss2.n_p), 1e-30)
        )
    return ss, observables(ss, p)


@dataclass(frozen=True)
class ConvergenceRow:
    n_max: int
    n_p: float
    converged: bool


def convergence_check(p: SystemParams, cfg: AtomConfig, n_max_list: list[int],
                      omega_l: float | None = None) -> list[ConvergenceRow]:
    """Photon number versus Fock cutoff; a row is converged when it differs
    from its predecessor by less than 1e-6 relative."""
    if sorted(n_max_list) != list(n_max_list) or len(set(n_max_list)) != len(n_max_list):
        raise ValueError("n_max_list must be strictly increasing")
    rows: list[ConvergenceRow] = []
    prev = None
    for n_max in n_max_list:
        ss, _ = steady_observables(p, cfg, n_max=n_max, omega_l=omega_l)
        converged = prev is not None and abs(ss.n_p - prev) <= 1e-6 * max(abs(ss.n_p), 1e-30)
        rows.append(ConvergenceRow(n_max=n_max, n_p=ss.n_p, converged=bool(converged)))
        prev = ss.n_p
    return rows
