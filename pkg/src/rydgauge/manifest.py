"""Run manifests: a small, versioned ``key = value`` text format.

Lines starting with ``#`` are comments.  Values are parsed according to a
fixed schema; unknown keys, duplicate keys and malformed values are errors that
name the offending line.  Lists are comma separated.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

SCHEMA_VERSION = 1


class ManifestError(ValueError):
    def __init__(self, message, line=None, path=None):
        where = f"{path or '<manifest>'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line


def _float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _str_list(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _sector(s):
    s = s.strip().lower()
    if s in ("none", "free", ""):
        return None
    return Fraction(s)


def _sector_list(s):
    return tuple(_sector(v) for v in s.split(",") if v.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optional_float(s):
    return None if s.strip().lower() in ("none", "auto", "") else float(s)


MEASURERS = ("energy", "structure_factor", "correlators", "imag_time", "psi_r", "snapshots")


@dataclass
class RunManifest:
    schema_version: int = SCHEMA_VERSION
    # lattice
    Lx: int = 3
    Ly: int | None = None
    # model, U1 = 1
    omega: float = 0.2
    u2: float | None = None
    u3: float | None = None
    u2_over_omega: float | None = None
    u3_over_omega: float | None = None
    profile: str = "explicit"
    c6: float = 1.0
    omega_d: float = 1.0
    delta_d: float = 1.0
    truncation: int = 3
    # simulation
    beta: float | None = None  # default L^2 (units 1/U1)
    sector: object = None
    guard_cut_triangles: bool = True
    n_therm: int = 1000
    n_meas: int = 10000
    n_bins: int = 20
    seed: int = 0
    measurers: tuple = ("energy",)
    tau_momenta: tuple = ("K", "M", "Gamma")
    tau_every: int = 10
    tau_points: int = 50
    out: str = "out"
    # scans
    scan_u2_over_omega: tuple = ()
    scan_u3_over_omega: tuple = ()
    scan_sectors: tuple = ()
    # oracle / sac
    rk_bins: int = 40
    rk_samples_per_bin: int = 2500
    ed_betas: tuple = ()
    sac_n_delta: int = 500
    sac_omega_max: float | None = None
    sac_sweeps: int = 200
    sac_theta_steps: int = 60
    source: Path | None = field(default=None, repr=False)
    sha256: str = field(default="", repr=False)

    @property
    def L(self) -> tuple[int, int]:
        return self.Lx, self.Ly if self.Ly is not None else self.Lx

    @property
    def beta_value(self) -> float:
        if self.beta is not None:
            return self.beta
        Lx, Ly = self.L
        return float(Lx * Ly)

    def couplings(self) -> tuple[float, float]:
        u2 = self.u2 if self.u2 is not None else (self.u2_over_omega or 0.0) * self.omega
        u3 = self.u3 if self.u3 is not None else (self.u3_over_omega or 0.0) * self.omega
        return u2, u3


_PARSERS = {
    "schema_version": int, "Lx": int, "Ly": int, "omega": float, "u2": float, "u3": float,
    "u2_over_omega": float, "u3_over_omega": float, "profile": str, "c6": float,
    "omega_d": float, "delta_d": float, "truncation": int, "beta": float, "sector": _sector,
    "guard_cut_triangles": _bool, "n_therm": int, "n_meas": int, "n_bins": int, "seed": int,
    "measurers": _str_list, "tau_momenta": _str_list, "tau_every": int, "tau_points": int,
    "out": str, "scan_u2_over_omega": _float_list, "scan_u3_over_omega": _float_list,
    "scan_sectors": _sector_list, "rk_bins": int, "rk_samples_per_bin": int,
    "ed_betas": _float_list, "sac_n_delta": int, "sac_omega_max": _optional_float,
    "sac_sweeps": int, "sac_theta_steps": int,
}
_ALIASES = {"L": "Lx"}


def parse_manifest(text: str, path=None) -> RunManifest:
    values = {}
    seen_line = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (p.strip() for p in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _PARSERS:
            raise ManifestError(f"unknown key {key!r}", lineno, path)
        if key in values:
            raise ManifestError(f"duplicate key {key!r} (first set on line {seen_line[key]})",
                                lineno, path)
        try:
            values[key] = _PARSERS[key](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ManifestError(f"bad value for {key!r}: {exc}", lineno, path) from None
        seen_line[key] = lineno
    if "schema_version" not in values:
        raise ManifestError("missing schema_version", None, path)
    if values["schema_version"] != SCHEMA_VERSION:
        raise ManifestError(f"unsupported schema_version {values['schema_version']}",
                            seen_line["schema_version"], path)
    m = RunManifest(**values)
    m.sha256 = hashlib.sha256(text.encode()).hexdigest()
    m.source = Path(path) if path else None
    _validate(m, seen_line, path)
    return m


def _validate(m: RunManifest, lines: dict, path):
    def fail(key, msg):
        raise ManifestError(msg, lines.get(key), path)

    if m.n_bins < 2:
        fail("n_bins", "n_bins must be at least 2")
    if m.n_meas % m.n_bins:
        fail("n_meas", f"n_meas ({m.n_meas}) must be a multiple of n_bins ({m.n_bins})")
    if m.Lx < 3 or (m.Ly is not None and m.Ly < 3):
        fail("Lx", "lattice sides must be at least 3")
    if m.omega < 0:
        fail("omega", "omega must be non-negative")
    if m.profile not in ("explicit", "vdw", "dressed"):
        fail("profile", f"profile must be explicit, vdw or dressed, not {m.profile!r}")
    if m.u2 is not None and m.u2_over_omega is not None:
        fail("u2", "give either u2 or u2_over_omega, not both")
    if m.u3 is not None and m.u3_over_omega is not None:
        fail("u3", "give either u3 or u3_over_omega, not both")
    for meas in m.measurers:
        if meas not in MEASURERS:
            fail("measurers", f"unknown measurer {meas!r}; choose from {', '.join(MEASURERS)}")
    if len(m.scan_u2_over_omega) != len(m.scan_u3_over_omega):
        fail("scan_u3_over_omega", "scan_u2_over_omega and scan_u3_over_omega need equal lengths")


def load_manifest(path) -> RunManifest:
    path = Path(path)
    return parse_manifest(path.read_text(), path)


def manifest_text(m: RunManifest, **overrides) -> str:
    """Serialise a manifest back to text (used for scan points and tests)."""
    lines = [f"schema_version = {SCHEMA_VERSION}"]
    data = {f.name: getattr(m, f.name) for f in fields(m) if f.name in _PARSERS}
    data.update(overrides)
    for key, value in data.items():
        if key == "schema_version" or value is None:
            continue
        if isinstance(value, tuple):
            if not value:
                continue
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
