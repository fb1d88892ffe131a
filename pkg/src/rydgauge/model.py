"""Rydberg-array Hamiltonian, its spin-1/2 form and the classical (diagonal) energy.

Spin convention: S^z = n - 1/2, so a Rydberg atom (n = 1) is spin up.  At the
half-filling detuning the Rydberg form

    H = -Omega sum_i S^x_i - delta sum_i n_i + sum_b U_b n_i n_j

equals the transverse-field Ising form

    H = sum_b U_b S^z_i S^z_j - Omega sum_i S^x_i

up to the constant returned by :func:`rydberg_offset`.  All sums over b run over
the direction-vector bond tables of :class:`~rydgauge.lattice.Lattice`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .lattice import SHELL_VECTORS, Lattice

SHELL_DISTANCE = {1: 1.0, 2: np.sqrt(3.0), 3: 2.0}


@dataclass(frozen=True)
class VdW:
    c6: float = 1.0


@dataclass(frozen=True)
class Dressed:
    """Weakly dressed Rydberg atoms: soft-core U(r) = U0 / (1 + (r / Rc)^6)."""

    omega_d: float
    delta_d: float
    c6: float

    @property
    def u0(self) -> float:
        return (self.omega_d / (2 * self.delta_d)) ** 4 * 2 * self.delta_d

    @property
    def rc(self) -> float:
        return (self.c6 / (2 * self.delta_d)) ** (1 / 6)

    def __call__(self, r):
        return self.u0 / (1 + (np.asarray(r) / self.rc) ** 6)


@dataclass(frozen=True)
class Explicit:
    U1: float
    U2: float = 0.0
    U3: float = 0.0


Profile = Union[VdW, Dressed, Explicit]


@dataclass(frozen=True)
class ModelParams:
    omega: float
    profile: Profile = field(default_factory=VdW)
    a: float = 1.0
    truncation: int = 3
    delta: float | None = None  # None: half-filling value

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.truncation not in (1, 2, 3):
            raise ValueError("truncation shell must be 1, 2 or 3")
        if self.a <= 0:
            raise ValueError("lattice spacing must be positive")

    @classmethod
    def from_ratios(cls, omega: float, u2: float, u3: float) -> "ModelParams":
        """Parameters in units of U1 = 1."""
        return cls(omega=omega, profile=Explicit(1.0, u2, u3))

    @classmethod
    def multicritical(cls, omega: float = 0.2, u2_over_omega: float = 0.547,
                      u3_over_omega: float = 0.215) -> "ModelParams":
        return cls.from_ratios(omega, u2_over_omega * omega, u3_over_omega * omega)


@dataclass(frozen=True)
class CouplingTable:
    U: tuple  # (U1, U2, U3), zero beyond the truncation shell
    omega: float
    delta: float | None = None

    def __post_init__(self):
        if self.U[0] <= 0:
            raise ValueError("U1 must be positive")

    @property
    def U1(self) -> float:
        return self.U[0]

    def scaled(self) -> "CouplingTable":
        """Same table in units of U1."""
        s = self.U[0]
        return CouplingTable(tuple(u / s for u in self.U), self.omega / s,
                             None if self.delta is None else self.delta / s)

    def bond_arrays(self, lat: Lattice) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated (bonds, couplings) for all shells with nonzero U."""
        bonds, J = [], []
        for shell in (1, 2, 3):
            u = self.U[shell - 1]
            if u != 0:
                bonds.append(lat.bonds[shell])
                J.append(np.full(len(lat.bonds[shell]), float(u)))
        return np.concatenate(bonds), np.concatenate(J)


def coupling_table(p: ModelParams, lat: Lattice | None = None) -> CouplingTable:
    prof = p.profile
    if isinstance(prof, Explicit):
        U = [prof.U1, prof.U2, prof.U3]
    else:
        if prof.c6 == 0:
            raise ValueError("c6 must be nonzero")
        r = np.array([SHELL_DISTANCE[k] * p.a for k in (1, 2, 3)])
        if isinstance(prof, VdW):
            U = list(prof.c6 / r**6)
        else:
            U = list(prof(r))
    U = [float(u) if k < p.truncation else 0.0 for k, u in enumerate(U)]
    return CouplingTable(tuple(U), float(p.omega), p.delta)


def half_filling_detuning(tbl: CouplingTable, lat: Lattice | None = None) -> float:
    """delta = 1/2 sum_{j != i} U_ij over the truncated table (six neighbours per shell)."""
    per_shell = {k: 2 * len(v) for k, v in SHELL_VECTORS.items()}
    return 0.5 * sum(per_shell[k] * tbl.U[k - 1] for k in (1, 2, 3))


def vdw_lattice_sum(rmax: float = 200.0) -> float:
    """Untruncated 1/2 sum_{j != i} r^-6 on the infinite triangular lattice (units U1)."""
    n = int(np.ceil(2 * rmax))
    m, k = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
    d2 = (m * m + m * k + k * k).astype(float)
    d2 = d2[(d2 > 0) & (d2 <= rmax**2)]
    return 0.5 * float(np.sum(d2**-3))


def _spins(cfg) -> np.ndarray:
    return np.asarray(cfg, dtype=float) - 0.5


def _check_size(cfg, lat):
    if np.shape(cfg)[-1] != lat.n_sites:
        raise ValueError(f"config has {np.shape(cfg)[-1]} sites, lattice has {lat.n_sites}")


def classical_energy(cfg, tbl: CouplingTable, lat: Lattice) -> np.ndarray | float:
    """sum_b U_b S^z_i S^z_j for occupation config(s) ``cfg`` (last axis = sites)."""
    _check_size(cfg, lat)
    s = _spins(cfg)
    e = 0.0
    for shell in (1, 2, 3):
        u = tbl.U[shell - 1]
        if u:
            b = lat.bonds[shell]
            e = e + u * np.sum(s[..., b[:, 0]] * s[..., b[:, 1]], axis=-1)
    return e


def rydberg_energy(cfg, tbl: CouplingTable, lat: Lattice, delta: float | None = None):
    """Diagonal part of the Rydberg form: sum_b U_b n_i n_j - delta sum_i n_i."""
    _check_size(cfg, lat)
    if delta is None:
        delta = tbl.delta if tbl.delta is not None else half_filling_detuning(tbl, lat)
    n = np.asarray(cfg, dtype=float)
    e = -delta * np.sum(n, axis=-1)
    for shell in (1, 2, 3):
        u = tbl.U[shell - 1]
        if u:
            b = lat.bonds[shell]
            e = e + u * np.sum(n[..., b[:, 0]] * n[..., b[:, 1]], axis=-1)
    return e


def rydberg_offset(tbl: CouplingTable, lat: Lattice) -> float:
    """rydberg_energy - classical_energy at the half-filling detuning."""
    delta = half_filling_detuning(tbl, lat)
    n_bonds = sum(len(lat.bonds[k]) * tbl.U[k - 1] for k in (1, 2, 3))
    return n_bonds / 4 - delta * lat.n_sites / 2


def flip_all(cfg) -> np.ndarray:
    return 1 - np.asarray(cfg)
