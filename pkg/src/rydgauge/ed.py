"""Dense exact diagonalisation of the spin Hamiltonian on small clusters.

Basis state ``k`` has occupation ``n_i = (k >> i) & 1``.  The diagonal comes
from :func:`rydgauge.model.classical_energy`; every single-spin flip carries the
matrix element -Omega/2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import poisson

from .lattice import Lattice
from .model import CouplingTable, classical_energy

MAX_SITES = 14


@dataclass(frozen=True)
class DenseSpectrum:
    energies: np.ndarray  # ascending
    vectors: np.ndarray  # columns are eigenvectors
    n_sites: int

    @property
    def weights(self) -> np.ndarray:
        """|<k|E_a>|^2, rows = basis states."""
        return np.abs(self.vectors) ** 2

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])

    def boltzmann(self, beta: float) -> np.ndarray:
        logw = -beta * (self.energies - self.energies[0])
        return np.exp(logw - logsumexp(logw))

    def log_partition(self, beta: float) -> float:
        return float(logsumexp(-beta * self.energies))


def basis_configs(n_sites: int) -> np.ndarray:
    k = np.arange(2**n_sites)
    return ((k[:, None] >> np.arange(n_sites)) & 1).astype(np.int8)


def hamiltonian(tbl: CouplingTable, lat: Lattice) -> np.ndarray:
    N = lat.n_sites
    if N > MAX_SITES:
        raise ValueError(f"{N} sites exceeds the dense limit of {MAX_SITES}")
    dim = 2**N
    H = np.zeros((dim, dim))
    H[np.diag_indices(dim)] = classical_energy(basis_configs(N), tbl, lat)
    k = np.arange(dim)
    for i in range(N):
        H[k, k ^ (1 << i)] = -tbl.omega / 2
    return H


def build_and_solve(tbl: CouplingTable, lat: Lattice) -> DenseSpectrum:
    H = hamiltonian(tbl, lat)
    e, v = np.linalg.eigh(H)
    return DenseSpectrum(e, v, lat.n_sites)


def thermal_expectation(spec: DenseSpectrum, diagonal, beta: float | None) -> float:
    """<O> for a diagonal observable given per basis state; beta=None gives the ground state.

    For a degenerate ground level the average over the level is returned.
    """
    diagonal = np.asarray(diagonal, dtype=float)
    per_level = spec.weights.T @ diagonal
    if beta is None:
        deg = np.isclose(spec.energies, spec.energies[0], atol=1e-10)
        return float(per_level[deg].mean())
    return float(spec.boltzmann(beta) @ per_level)


def thermal_energy(spec: DenseSpectrum, beta: float) -> float:
    return float(spec.boltzmann(beta) @ spec.energies)


def thermal_sx(spec: DenseSpectrum, beta: float) -> float:
    """Per-site transverse magnetisation <S^x>."""
    N = spec.n_sites
    k = np.arange(2**N)
    V = spec.vectors
    sx_v = np.zeros_like(V)
    for i in range(N):
        sx_v += 0.5 * V[k ^ (1 << i)]
    per_level = np.einsum("ka,ka->a", V, sx_v)
    return float(spec.boltzmann(beta) @ per_level) / N


def sse_order_distribution(spec: DenseSpectrum, beta: float, constant: float, n_max: int) -> np.ndarray:
    """Exact distribution of the SSE expansion order for H = constant - sum of sampled terms.

    P(n) = sum_a p_a Poisson(n; beta (constant - E_a)), which requires every
    E_a <= constant.
    """
    lam = beta * (constant - spec.energies)
    if np.any(lam < -1e-9):
        raise ValueError("constant must bound the spectrum from above")
    n = np.arange(n_max + 1)
    return spec.boltzmann(beta) @ poisson.pmf(n[None, :], np.clip(lam, 0, None)[:, None])
