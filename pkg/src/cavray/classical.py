"""Classical steady-state model of N driven dipoles in a cavity.

The atoms are treated as polarizable particles radiating into a single
non-quantized cavity mode.  In steady state the intracavity field must
reproduce itself after one round trip,

    E_c = 2*E_M + r^2 * E_c,

where E_M is the field scattered by the atoms into the mode during one round
trip and r the mirror field reflectivity.  Solving the self-consistency gives
the closed forms implemented here; ``mode_scattered_field`` keeps the
round-trip relation available as an independent residual check.

All functions are pure; grid scans are deterministic in grid order.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    HBAR,
    TWO_PI,
    VACUUM_PERMITTIVITY,
    AtomConfig,
    SystemParams,
    cooperativity,
    drive_field_amplitude,
    mode_volume,
)


class SingularConfigurationError(ArithmeticError):
    """Field denominator vanished; cannot occur for gamma > 0."""


@dataclass(frozen=True)
class CollectiveCouplings:
    """Collective coupling parameters of the drive (complex) and cavity (real).

    For two atoms with one pinned to a cavity antinode:
    h_par = [1 + cos^2(phi_z)]/2 and g_par = [1 + exp(i*phi_y)*cos(phi_z)]/2.
    Cauchy-Schwarz over atom positions bounds |g_par| <= sqrt(h_par) <= 1.
    """

    g_par: complex
    h_par: float

    def __post_init__(self):
        tol = 1e-12
        if not (-tol <= self.h_par <= 1.0 + tol):
            raise ValueError(f"h_par must lie in [0, 1], got {self.h_par!r}")
        if abs(self.g_par) > math.sqrt(max(self.h_par, 0.0)) + 1e-9:
            raise ValueError(
                f"|g_par| = {abs(self.g_par):.6g} exceeds sqrt(h_par) = "
                f"{math.sqrt(max(self.h_par, 0.0)):.6g}"
            )


@dataclass(frozen=True)
class FieldResult:
    """Steady-state cavity field amplitude, photon number and detected rate."""

    e_c: complex      # V/m
    n_p: float        # intracavity photon number
    r_d: float        # detected count rate, 1/s


def line_function(delta_a: float, gamma: float) -> complex:
    """Atomic line function L(Delta) = (-2*Delta*gamma + i*gamma^2)/(gamma^2 + 4*Delta^2).

    Im L > 0 for gamma > 0, and |L|^2 * (gamma^2 + 4*Delta^2) = gamma^2.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    denom = gamma ** 2 + 4.0 * delta_a ** 2
    return complex(-2.0 * delta_a * gamma / denom, gamma ** 2 / denom)


def collective_params(cfg: AtomConfig) -> CollectiveCouplings:
    """Collective couplings for one atom (both unity) or the two-atom
    antinode-pinned closed forms."""
    if cfg.n_atoms == 1:
        return CollectiveCouplings(g_par=1.0 + 0.0j, h_par=1.0)
    if cfg.n_atoms == 2:
        cz = math.cos(cfg.phi_z)
        g_par = (1.0 + cmath.exp(1j * cfg.phi_y) * cz) / 2.0
        h_par = (1.0 + cz ** 2) / 2.0
        return CollectiveCouplings(g_par=g_par, h_par=h_par)
    raise ValueError(f"unsupported n_atoms: {cfg.n_atoms!r}")


def photon_number(e_c: complex, p: SystemParams) -> float:
    """Mean intracavity photon number n_p = 2*eps0*|E_c|^2*V/(hbar*omega_L)."""
    return 2.0 * VACUUM_PERMITTIVITY * abs(e_c) ** 2 * mode_volume(p) / (HBAR * p.omega_l)


def detection_rate(n_p: float, p: SystemParams) -> float:
    """Detected count rate R_D = eta*kappa*n_p (1/s)."""
    if n_p < 0.0:
        raise ValueError(f"n_p must be non-negative, got {n_p!r}")
    return p.eta * p.kappa * n_p


def _result_from_field(e_c: complex, p: SystemParams) -> FieldResult:
    n_p = photon_number(e_c, p)
    return FieldResult(e_c=e_c, n_p=n_p, r_d=detection_rate(n_p, p))


def cavity_field_simple(p: SystemParams, n_atoms: int) -> FieldResult:
    """Cavity field for N atoms in the fully constructive pattern at resonant
    drive (delta_c = 0 assumed):

        E_c = -(E_L/2)(g0/g) * N / (i/(2*C*L) + N).

    N = 0 returns the empty-cavity zero field.
    """
    if n_atoms < 0:
        raise ValueError(f"n_atoms must be >= 0, got {n_atoms!r}")
    if n_atoms == 0:
        return _result_from_field(0.0j, p)
    lf = line_function(p.delta_a, p.gamma)
    denom = 1j / (2.0 * cooperativity(p) * lf) + n_atoms
    e_c = -(drive_field_amplitude(p) / 2.0) * (p.g0 / p.g) * n_atoms / denom
    return _result_from_field(e_c, p)


def cavity_field_general(p: SystemParams, cc: CollectiveCouplings,
                         n_atoms: int) -> FieldResult:
    """General position-dependent cavity field for arbitrary phases and
    laser-cavity detuning:

        E_c = -(E_L/2)(g0/g) * N*G / (i/(2*C*L) + delta_c/(2*kappa*C*L) + N*H).

    Reduces exactly to :func:`cavity_field_simple` for G = H = 1, delta_c = 0.
    """
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms!r}")
    lf = line_function(p.delta_a, p.gamma)
    c = cooperativity(p)
    denom = 1j / (2.0 * c * lf) + p.delta_c / (2.0 * p.kappa * c * lf) + n_atoms * cc.h_par
    if abs(denom) < 1e-300:
        raise SingularConfigurationError(
            f"field denominator magnitude {abs(denom)!r} below 1e-300"
        )
    e_c = -(drive_field_amplitude(p) / 2.0) * (p.g0 / p.g) * n_atoms * cc.g_par / denom
    return _result_from_field(e_c, p)


def mode_scattered_field(e_c: complex, p: SystemParams, cc: CollectiveCouplings,
                         n_atoms: int) -> complex:
    """Field scattered by the atoms into the cavity mode during one round trip:

        E_M = [i*N*L(Delta)/2] * (g0*G*E_L + 2*g*H*E_c) * g*tau/gamma.

    Together with the round-trip relation
    E_c = 2*E_M + (r^2 + i*delta_c*tau)*E_c this is an independent route to
    the steady state; see :func:`round_trip_residual`.
    """
    lf = line_function(p.delta_a, p.gamma)
    drive = p.g0 * cc.g_par * drive_field_amplitude(p)
    backaction = 2.0 * p.g * cc.h_par * e_c
    return 0.5j * n_atoms * lf * (drive + backaction) * p.g * p.tau / p.gamma


def round_trip_residual(e_c: complex, p: SystemParams, cc: CollectiveCouplings,
                        n_atoms: int) -> float:
    """Absolute round-trip self-consistency residual
    |E_c - 2*E_M - (r^2 + i*delta_c*tau)*E_c|."""
    e_m = mode_scattered_field(e_c, p, cc, n_atoms)
    return abs(e_c - 2.0 * e_m - (p.r_squared + 1j * p.delta_c * p.tau) * e_c)


@dataclass(frozen=True)
class ScanPoint:
    """One grid point of a scan: swept value, phases used and field result."""

    axis_value: float
    phi_y: float
    phi_z: float
    result: FieldResult


def _check_grid(grid: Sequence[float]):
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    diffs = [b - a for a, b in zip(grid, grid[1:])]
    if diffs and not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
        raise ValueError("grid must be strictly monotone")


def scan(p: SystemParams, axis: str, grid: Sequence[float],
         fixed: AtomConfig) -> list[ScanPoint]:
    """Evaluate the general field model along a grid.

    axis = "delta_z": grid values are atom separations along the cavity axis
    (m), converted to phi_z = 2*pi*delta_z/lambda_l; phi_y is taken from
    ``fixed``.  axis = "phi_y": grid values are drive phases (rad) and both
    cavity patterns phi_z = 0 and phi_z = pi are emitted per grid value.
    Points are ordered by grid index (phi_z branch varying fastest).
    """
    _check_grid(grid)
    points: list[ScanPoint] = []
    if axis == "delta_z":
        for value in grid:
            phi_z = TWO_PI * value / p.lambda_l
            cfg = AtomConfig(n_atoms=fixed.n_atoms, phi_y=fixed.phi_y, phi_z=phi_z)
            res = cavity_field_general(p, collective_params(cfg), cfg.n_atoms)
            points.append(ScanPoint(value, cfg.phi_y, phi_z, res))
    elif axis == "phi_y":
        for value in grid:
            for phi_z in (0.0, math.pi):
                cfg = AtomConfig(n_atoms=fixed.n_atoms, phi_y=value, phi_z=phi_z)
                res = cavity_field_general(p, collective_params(cfg), cfg.n_atoms)
                points.append(ScanPoint(value, value, phi_z, res))
    else:
        raise ValueError(f"unknown scan axis {axis!r} (use 'delta_z' or 'phi_y')")
    return points


def format_sig(x: float) -> str:
    """Format a float with 9 significant digits for CSV output."""
    return format(x, ".9g")


SCAN_HEADER = "axis_value,phi_y,phi_z,n_p,r_d_per_ms"


def scan_csv_lines(points: Iterable[ScanPoint], display_scale: float = 1.0) -> list[str]:
    """CSV lines for a scan; ``display_scale`` multiplies the displayed n_p
    and rate columns only (e.g. 1e5 for free-space visibility), never the
    computation."""
    lines = ["# schema=1", SCAN_HEADER]
    for pt in points:
        lines.append(",".join([
            format_sig(pt.axis_value),
            format_sig(pt.phi_y),
            format_sig(pt.phi_z),
            format_sig(pt.result.n_p * display_scale),
            format_sig(pt.result.r_d * display_scale / 1e3),
        ]))
    return lines


def write_scan_csv(path, points: Iterable[ScanPoint], display_scale: float = 1.0):
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(scan_csv_lines(points, display_scale)) + "\n")
