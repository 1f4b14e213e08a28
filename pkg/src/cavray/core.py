"""System parameters, unit handling and derived cavity QED quantities.

All frequencies are stored internally as angular rates (rad/s), lengths in
meters and intensities in W/m^2.  Configuration files use lab units instead:
ordinary frequencies in MHz, lengths in micrometers, intensities in mW/cm^2
and the detection efficiency in percent.  ``from_config``/``to_config`` are
the single conversion boundary between the two conventions.

Parameter objects are frozen dataclasses and safe to share between workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

# CODATA values, quoted to 9 significant digits.
SPEED_OF_LIGHT = 299792458.0        # m/s (exact)
VACUUM_PERMITTIVITY = 8.85418781e-12  # F/m
HBAR = 1.05457182e-34               # J s

# Standing-wave trap wavelengths: red-detuned conveyor along y, blue-detuned
# intracavity lock field along z.  Lattice periods are half a wavelength.
LAMBDA_RED_TRAP = 1030.0e-9         # m
LAMBDA_BLUE_TRAP = 845.5e-9         # m

TWO_PI = 2.0 * math.pi

# Config-unit conversion factors.
_MHZ_TO_RAD_PER_S = TWO_PI * 1.0e6
_UM_TO_M = 1.0e-6
_MW_PER_CM2_TO_W_PER_M2 = 10.0

_RATE_FIELDS = ("g0", "g", "kappa", "gamma")          # MHz in config
_DETUNING_FIELDS = ("delta_a", "delta_c")             # MHz in config, any sign
_LENGTH_FIELDS = ("lambda_l", "ell0", "w_c")          # um in config
_INTENSITY_FIELDS = ("i_l", "i_sat")                  # mW/cm^2 in config

SYSTEM_SECTION_FIELDS = ("g0", "g", "kappa", "gamma", "ell0", "w_c", "eta")
DRIVE_SECTION_FIELDS = ("delta_a", "delta_c", "lambda_l", "i_l", "i_sat")
ATOMS_SECTION_FIELDS = ("n_atoms", "phi_y", "phi_z", "delta_y", "delta_z")


class ConfigError(ValueError):
    """Raised when a parameter set fails validation; names the bad field."""


@dataclass(frozen=True)
class SystemParams:
    """Cavity, atom and drive parameters in coherent internal units.

    Attributes
    ----------
    g0 : float
        Maximum atom-field coupling rate (rad/s).
    g : float
        Effective atom-field coupling rate (rad/s), reduced by the mode
        polarization and the radial atom position.
    kappa : float
        Cavity field decay rate (rad/s).
    gamma : float
        Atomic population relaxation rate (rad/s).
    delta_a : float
        Laser-atom detuning (rad/s), any sign.
    delta_c : float
        Laser-cavity detuning (rad/s), any sign.
    lambda_l : float
        Driving laser wavelength (m).
    ell0 : float
        Cavity length (m).
    w_c : float
        Cavity waist (m).
    eta : float
        Overall photon detection efficiency, in [0, 1].
    i_l : float
        Driving laser intensity (W/m^2).
    i_sat : float
        Saturation intensity of the driven transition (W/m^2).
    """

    g0: float
    g: float
    kappa: float
    gamma: float
    delta_a: float
    delta_c: float
    lambda_l: float
    ell0: float
    w_c: float
    eta: float
    i_l: float
    i_sat: float

    def __post_init__(self):
        for name in _RATE_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ConfigError(f"{name} must be a positive finite rate, got {value!r}")
        for name in _DETUNING_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in _LENGTH_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ConfigError(f"{name} must be a positive finite length, got {value!r}")
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta!r}")
        if not math.isfinite(self.i_l) or self.i_l < 0.0:
            raise ConfigError(f"i_l must be non-negative, got {self.i_l!r}")
        if not math.isfinite(self.i_sat) or self.i_sat <= 0.0:
            raise ConfigError(f"i_sat must be positive, got {self.i_sat!r}")
        if not (0.0 < self.r_squared <= 1.0):
            raise ConfigError(
                f"kappa and ell0 give mirror reflectivity r^2 = {self.r_squared!r}, "
                "outside (0, 1]"
            )

    @property
    def tau(self) -> float:
        """Cavity round-trip time 2*ell0/c (s)."""
        return 2.0 * self.ell0 / SPEED_OF_LIGHT

    @property
    def r_squared(self) -> float:
        """Mirror power reflectivity r^2 = 1 - kappa*tau (derived, not stored)."""
        return 1.0 - self.kappa * self.tau

    @property
    def omega_l(self) -> float:
        """Driving laser angular frequency 2*pi*c/lambda_l (rad/s)."""
        return TWO_PI * SPEED_OF_LIGHT / self.lambda_l

    def replace(self, **changes) -> "SystemParams":
        """Return a copy with the given internal-unit fields replaced."""
        return replace(self, **changes)


@dataclass(frozen=True)
class AtomConfig:
    """Number of emitters and their positional phases.

    ``phi_y`` is the relative phase of the driving field between the two
    atoms, ``phi_z`` the relative phase of the cavity standing wave.  For a
    single atom both phases are ignored (the atom sits at an antinode).
    """

    n_atoms: int
    phi_y: float = 0.0
    phi_z: float = 0.0

    def __post_init__(self):
        if self.n_atoms not in (1, 2):
            raise ConfigError(f"n_atoms must be 1 or 2, got {self.n_atoms!r}")
        for name in ("phi_y", "phi_z"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    @classmethod
    def from_distances(cls, n_atoms: int, delta_y: float, delta_z: float,
                       lambda_l: float) -> "AtomConfig":
        """Build from atom separations (m); phases are 2*pi*d/lambda_l mod 2*pi."""
        if lambda_l <= 0.0:
            raise ConfigError(f"lambda_l must be positive, got {lambda_l!r}")
        phi_y = math.fmod(TWO_PI * delta_y / lambda_l, TWO_PI)
        phi_z = math.fmod(TWO_PI * delta_z / lambda_l, TWO_PI)
        return cls(n_atoms=n_atoms, phi_y=phi_y, phi_z=phi_z)

    @classmethod
    def from_lattice_sites(cls, k_y: int, k_z: int, lambda_l: float) -> "AtomConfig":
        """Two atoms separated by k_y red-trap and k_z blue-trap lattice sites."""
        return cls.from_distances(
            2, k_y * LAMBDA_RED_TRAP / 2.0, k_z * LAMBDA_BLUE_TRAP / 2.0, lambda_l
        )


def from_config(raw: Mapping[str, float]) -> SystemParams:
    """Convert a lab-unit parameter mapping (MHz, um, mW/cm^2, percent) to
    internal units.

    The conversion is exact up to float rounding: frequencies are multiplied
    by 2*pi*1e6, lengths by 1e-6, intensities by 10 and eta by 1/100.
    """
    known = set(_RATE_FIELDS + _DETUNING_FIELDS + _LENGTH_FIELDS + _INTENSITY_FIELDS + ("eta",))
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown parameter field(s): {sorted(unknown)}")
    missing = known - set(raw)
    if missing:
        raise ConfigError(f"missing parameter field(s): {sorted(missing)}")
    kwargs = {}
    for name in _RATE_FIELDS + _DETUNING_FIELDS:
        kwargs[name] = float(raw[name]) * _MHZ_TO_RAD_PER_S
    for name in _LENGTH_FIELDS:
        kwargs[name] = float(raw[name]) * _UM_TO_M
    for name in _INTENSITY_FIELDS:
        kwargs[name] = float(raw[name]) * _MW_PER_CM2_TO_W_PER_M2
    kwargs["eta"] = float(raw["eta"]) / 100.0
    return SystemParams(**kwargs)


def to_config(p: SystemParams) -> dict:
    """Inverse of :func:`from_config`; returns the lab-unit mapping."""
    out = {}
    for name in _RATE_FIELDS + _DETUNING_FIELDS:
        out[name] = getattr(p, name) / _MHZ_TO_RAD_PER_S
    for name in _LENGTH_FIELDS:
        out[name] = getattr(p, name) / _UM_TO_M
    for name in _INTENSITY_FIELDS:
        out[name] = getattr(p, name) / _MW_PER_CM2_TO_W_PER_M2
    out["eta"] = p.eta * 100.0
    return out


def cooperativity(p: SystemParams) -> float:
    """Single-atom cooperativity C = g^2/(kappa*gamma)."""
    return p.g ** 2 / (p.kappa * p.gamma)


def mode_volume(p: SystemParams) -> float:
    """Gaussian cavity mode volume V = pi*w_c^2*ell0/4 (m^3)."""
    return math.pi * p.w_c ** 2 * p.ell0 / 4.0


def drive_field_amplitude(p: SystemParams) -> float:
    """Plane-wave field amplitude E_L = sqrt(2*I_L/(c*eps0)) (V/m)."""
    return math.sqrt(2.0 * p.i_l / (SPEED_OF_LIGHT * VACUUM_PERMITTIVITY))


def rabi_frequency(p: SystemParams) -> float:
    """Drive Rabi frequency from the saturation intensity,
    Omega_L = gamma*sqrt(I_L/(2*I_sat)) (rad/s)."""
    return p.gamma * math.sqrt(p.i_l / (2.0 * p.i_sat))


def vacuum_field_amplitude(p: SystemParams) -> float:
    """Single-photon (vacuum) field amplitude sqrt(hbar*omega_L/(2*eps0*V)) (V/m)."""
    return math.sqrt(HBAR * p.omega_l / (2.0 * VACUUM_PERMITTIVITY * mode_volume(p)))


def rabi_frequency_from_field(p: SystemParams) -> float:
    """Drive Rabi frequency calibrated against the plane-wave field,
    Omega_L = g0 * E_L / E_vac (rad/s).

    Uses the dipole moment implied by g0 and the mode volume, so the quantum
    drive shares one calibration with the classical field model.  With the
    rounded lab values of g0 and I_sat this differs from
    :func:`rabi_frequency` by roughly 1.5 percent.
    """
    return p.g0 * drive_field_amplitude(p) / vacuum_field_amplitude(p)


def derived_summary(p: SystemParams) -> dict:
    """Derived quantities for ``--print-derived``: tau, r^2, C, V, E_L, Omega_L."""
    return {
        "tau_s": p.tau,
        "r_squared": p.r_squared,
        "cooperativity": cooperativity(p),
        "mode_volume_m3": mode_volume(p),
        "e_l_v_per_m": drive_field_amplitude(p),
        "omega_l_rad_per_s": rabi_frequency(p),
        "omega_l_field_rad_per_s": rabi_frequency_from_field(p),
    }


# Reference parameter set: a strongly coupled cesium Fabry-Perot cavity with
# a transversally driven pair of trapped atoms.  Lab units as in config files.
DEFAULT_CONFIG = {
    "system": {
        "g0": 18.0,       # MHz
        "g": 8.0,         # MHz
        "kappa": 0.4,     # MHz
        "gamma": 5.2,     # MHz
        "ell0": 155.0,    # um
        "w_c": 23.0,      # um
        "eta": 6.0,       # percent
    },
    "drive": {
        "delta_a": 100.0,   # MHz
        "delta_c": 0.0,     # MHz
        "lambda_l": 0.8523,  # um
        "i_l": 2.0,         # mW/cm^2
        "i_sat": 1.1,       # mW/cm^2
    },
    "atoms": {
        "n_atoms": 2,
        "phi_y": 0.0,   # rad
        "phi_z": 0.0,   # rad
    },
}


def _parse_sections(data: Mapping) -> tuple[SystemParams, AtomConfig]:
    for section in ("system", "drive", "atoms"):
        if section not in data:
            raise ConfigError(f"missing config section [{section}]")
        if not isinstance(data[section], Mapping):
            raise ConfigError(f"config section [{section}] must be a table")
    sys_raw = dict(data["system"])
    drv_raw = dict(data["drive"])
    for name in sys_raw:
        if name not in SYSTEM_SECTION_FIELDS:
            raise ConfigError(f"unknown field system.{name}")
    for name in drv_raw:
        if name not in DRIVE_SECTION_FIELDS:
            raise ConfigError(f"unknown field drive.{name}")
    params = from_config({**sys_raw, **drv_raw})

    atoms_raw = dict(data["atoms"])
    for name in atoms_raw:
        if name not in ATOMS_SECTION_FIELDS:
            raise ConfigError(f"unknown field atoms.{name}")
    if "n_atoms" not in atoms_raw:
        raise ConfigError("missing field atoms.n_atoms")
    n_atoms = int(atoms_raw["n_atoms"])
    has_distances = "delta_y" in atoms_raw or "delta_z" in atoms_raw
    has_phases = "phi_y" in atoms_raw or "phi_z" in atoms_raw
    if has_distances and has_phases:
        raise ConfigError("atoms: give either phi_y/phi_z or delta_y/delta_z, not both")
    if has_distances:
        cfg = AtomConfig.from_distances(
            n_atoms,
            float(atoms_raw.get("delta_y", 0.0)) * _UM_TO_M,
            float(atoms_raw.get("delta_z", 0.0)) * _UM_TO_M,
            params.lambda_l,
        )
    else:
        cfg = AtomConfig(
            n_atoms=n_atoms,
            phi_y=float(atoms_raw.get("phi_y", 0.0)),
            phi_z=float(atoms_raw.get("phi_z", 0.0)),
        )
    return params, cfg


def load_config(path: str | Path) -> tuple[SystemParams, AtomConfig]:
    """Load a TOML or JSON config with [system], [drive] and [atoms] sections."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    return _parse_sections(data)


def default_params() -> tuple[SystemParams, AtomConfig]:
    """The built-in reference parameter set as (SystemParams, AtomConfig)."""
    return _parse_sections(DEFAULT_CONFIG)
