"""Equal-weight dimer coverings of the honeycomb lattice (the RK wavefunction).

Covers are stored as boolean masks over the dual links of a
:class:`~rydgauge.lattice.Lattice`.  The sampler is a worm: cut the dimer at a
random A vertex, let the free B end hop to a uniformly chosen neighbour (moving
that neighbour's dimer along), and stop when the worm returns to its tail.
Every step has probability 1/3 and the reversed worm retraces the path with the
same probability, so the uniform measure is stationary.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numba
import numpy as np

from . import gauge
from .lattice import Lattice


@dataclass
class DimerSamples:
    covers: np.ndarray  # (n_samples, 3N) bool
    fluxes: np.ndarray  # (n_samples, 2)
    loops_accepted: int
    loops_rejected: int


def _neighbour_tables(lat: Lattice):
    N = lat.n_sites
    b_of = (lat.dual_links[:, 1] - N).astype(np.int64)
    nb_a = b_of.reshape(N, 3)
    nb_b = np.empty((N, 3), dtype=np.int64)
    fill = np.zeros(N, dtype=np.int64)
    for t in range(N):
        for k in range(3):
            b = nb_a[t, k]
            nb_b[b, fill[b]] = t
            fill[b] += 1
    return nb_a, nb_b


def enumerate_covers(lat: Lattice, max_vertices: int = 36) -> list[np.ndarray]:
    """All perfect matchings by backtracking over A vertices."""
    N = lat.n_sites
    if 2 * N > max_vertices:
        raise ValueError(f"{2 * N} dual vertices exceeds the enumeration limit {max_vertices}")
    nb_a, _ = _neighbour_tables(lat)
    used = np.zeros(N, dtype=bool)
    chosen = []
    out = []

    def rec(t):
        if t == N:
            cover = np.zeros(3 * N, dtype=bool)
            cover[chosen] = True
            out.append(cover)
            return
        for k in range(3):
            b = nb_a[t, k]
            if not used[b]:
                used[b] = True
                chosen.append(3 * t + k)
                rec(t + 1)
                chosen.pop()
                used[b] = False

    rec(0)
    return out


def covers_by_sector(covers, lat: Lattice) -> dict:
    out = {}
    for c in covers:
        w = gauge.winding_flux(gauge.field_from_cover(c), lat)
        out.setdefault((w.Fx, w.Fy), []).append(c)
    return out


def biadjacency(lat: Lattice) -> np.ndarray:
    N = lat.n_sites
    nb_a, _ = _neighbour_tables(lat)
    A = np.zeros((N, N), dtype=np.int64)
    for t in range(N):
        for k in range(3):
            A[t, nb_a[t, k]] += 1
    return A


def permanent(A) -> int:
    """Ryser's inclusion-exclusion formula; exact for integer matrices."""
    A = np.asarray(A, dtype=object)
    n = A.shape[0]
    total = 0
    for r in range(1, n + 1):
        for cols in combinations(range(n), r):
            rowsums = A[:, list(cols)].sum(axis=1)
            prod = 1
            for v in rowsums:
                prod *= int(v)
            total += (-1) ** r * prod
    return (-1) ** n * total


@numba.njit(cache=True)
def _fluxes(match_a, nb_a, cut_x, cut_y):
    fx = 0
    fy = 0
    for l in cut_x:
        fx += 2 if match_a[l // 3] == nb_a[l // 3, l % 3] else -1
    for l in cut_y:
        fy += 2 if match_a[l // 3] == nb_a[l // 3, l % 3] else -1
    return fx, fy


@numba.njit(cache=True)
def _worm(match_a, match_b, nb_b, nb_a, cut_x, cut_y, fixed, rng, log):
    """One worm; returns (accepted, steps, log).  ``log`` stores (a, old partner) pairs."""
    N = match_a.shape[0]
    fx0, fy0 = _fluxes(match_a, nb_a, cut_x, cut_y)
    a0 = rng.integers(0, N)
    b = match_a[a0]
    match_a[a0] = -1
    match_b[b] = -1
    nlog = 0
    log[0, 0] = a0
    log[0, 1] = b
    nlog = 1
    steps = 0
    while True:
        a = nb_b[b, rng.integers(0, 3)]
        steps += 1
        if a == a0:
            match_a[a0] = b
            match_b[b] = a0
            break
        b_next = match_a[a]
        if nlog == log.shape[0]:
            bigger = np.empty((2 * log.shape[0], 2), dtype=np.int64)
            bigger[:nlog] = log[:nlog]
            log = bigger
        log[nlog, 0] = a
        log[nlog, 1] = b_next
        nlog += 1
        match_a[a] = b
        match_b[b] = a
        match_b[b_next] = -1
        b = b_next
    if fixed:
        fx, fy = _fluxes(match_a, nb_a, cut_x, cut_y)
        if fx != fx0 or fy != fy0:
            # undo in reverse order
            for k in range(nlog - 1, -1, -1):
                a = log[k, 0]
                bo = log[k, 1]
                cur = match_a[a]
                if cur >= 0 and match_b[cur] == a:
                    match_b[cur] = -1
                match_a[a] = bo
                match_b[bo] = a
            return False, steps, log
    return True, steps, log


@numba.njit(cache=True)
def _sweep(match_a, match_b, nb_b, nb_a, cut_x, cut_y, fixed, rng, log, n_worms):
    # a fixed worm count: stopping on accumulated length would favour states
    # that emit long worms
    done = 0
    acc = 0
    rej = 0
    for _ in range(n_worms):
        ok, steps, log = _worm(match_a, match_b, nb_b, nb_a, cut_x, cut_y, fixed, rng, log)
        done += steps
        if ok:
            acc += 1
        else:
            rej += 1
    return acc, rej, done, log


class DimerSampler:
    """Worm sampler over perfect matchings; ``policy`` is "fixed" or "free"."""

    def __init__(self, lat: Lattice, cover=None, policy: str = "fixed", seed=None):
        if policy not in ("fixed", "free"):
            raise ValueError("policy must be 'fixed' or 'free'")
        self.lat = lat
        self.policy = policy
        self.rng = np.random.default_rng(seed)
        N = lat.n_sites
        self.nb_a, self.nb_b = _neighbour_tables(lat)
        if cover is None:
            cover = gauge.frustrated_bonds(gauge.sector_config(lat, 0), lat)
        cover = np.asarray(cover, dtype=bool)
        self.match_a = np.empty(N, dtype=np.int64)
        self.match_b = np.full(N, -1, dtype=np.int64)
        for l in np.flatnonzero(cover):
            t, k = divmod(l, 3)
            self.match_a[t] = self.nb_a[t, k]
            self.match_b[self.nb_a[t, k]] = t
        if np.any(self.match_b < 0) or cover.sum() != N:
            raise ValueError("initial cover is not a perfect matching")
        cx, cy = gauge.cut_links(lat)
        self.cut_x = cx.astype(np.int64)
        self.cut_y = cy.astype(np.int64)
        self._log = np.empty((64, 2), dtype=np.int64)
        self.accepted = 0
        self.rejected = 0
        self.head_moves = 0
        self.worms_per_sweep = None

    @property
    def cover(self) -> np.ndarray:
        cover = np.zeros(3 * self.lat.n_sites, dtype=bool)
        k = np.argmax(self.nb_a == self.match_a[:, None], axis=1)
        cover[3 * np.arange(self.lat.n_sites) + k] = True
        return cover

    def fluxes(self) -> tuple[int, int]:
        return _fluxes(self.match_a, self.nb_a, self.cut_x, self.cut_y)

    def _run(self, n_worms: int):
        acc, rej, moves, self._log = _sweep(self.match_a, self.match_b, self.nb_b, self.nb_a,
                                            self.cut_x, self.cut_y, self.policy == "fixed",
                                            self.rng, self._log, n_worms)
        self.accepted += acc
        self.rejected += rej
        self.head_moves += moves
        return moves

    def calibrate(self, n_worms: int = 200):
        """Fix the worm count of one sweep so that it makes about N head moves."""
        moves = self._run(n_worms)
        self.worms_per_sweep = max(1, int(round(self.lat.n_sites * n_worms / max(moves, 1))))

    def sweep(self, n: int = 1):
        if self.worms_per_sweep is None:
            self.calibrate()
        self._run(n * self.worms_per_sweep)

    def sample(self, n_samples: int, sweeps_between: int = 1, n_therm: int = 10) -> DimerSamples:
        self.sweep(n_therm)
        covers = np.empty((n_samples, 3 * self.lat.n_sites), dtype=bool)
        fl = np.empty((n_samples, 2), dtype=np.int64)
        for s in range(n_samples):
            self.sweep(sweeps_between)
            covers[s] = self.cover
            fl[s] = self.fluxes()
        return DimerSamples(covers, fl, self.accepted, self.rejected)


def loop_update_sampler(lat: Lattice, policy: str = "fixed", n_samples: int = 1000,
                        sweeps_between: int = 1, seed=None, cover=None) -> DimerSamples:
    return DimerSampler(lat, cover, policy, seed).sample(n_samples, sweeps_between)


@dataclass
class CorrelatorTable:
    r: np.ndarray
    C_E: np.ndarray
    C_E_err: np.ndarray
    C_R: np.ndarray
    C_R_err: np.ndarray
    C_E_bins: np.ndarray | None = None
    C_R_bins: np.ndarray | None = None


def cover_correlators(covers, lat: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Batch-averaged (C_E(r), C_R(r)) along a1 for a stack of covers."""
    covers = np.atleast_2d(np.asarray(covers, dtype=bool))
    ce = gauge.axis_correlator(gauge.psi_e_local(gauge.field_from_cover(covers), lat), lat)
    cr = gauge.axis_correlator(gauge.psi_r_local(gauge.spins_from_cover(covers, lat), lat), lat)
    return ce, cr


def rk_correlators(covers, lat: Lattice, n_bins: int = 20) -> CorrelatorTable:
    """C_E(r) and C_R(r) along a1 with jackknife errors over blocks of samples.

    Spins are rebuilt from each cover with site 0 fixed; psi_R correlations are
    invariant under the global flip that this choice hides.
    """
    covers = np.asarray(covers, dtype=bool)
    n_bins = min(n_bins, len(covers))
    per_bin = len(covers) // n_bins
    ce_b = np.empty((n_bins, lat.Lx))
    cr_b = np.empty((n_bins, lat.Lx))
    for b in range(n_bins):
        ce_b[b], cr_b[b] = cover_correlators(covers[b * per_bin:(b + 1) * per_bin], lat)
    return _table(lat, ce_b, cr_b)


def rk_correlator_run(lat: Lattice, n_bins: int = 20, samples_per_bin: int = 500,
                      sweeps_between: int = 2, n_therm: int = 200, seed=None,
                      policy: str = "fixed", f=0) -> CorrelatorTable:
    """Sample and measure in bins so that only one bin of covers is held in memory."""
    cover = gauge.frustrated_bonds(gauge.sector_config(lat, f), lat)
    sampler = DimerSampler(lat, cover, policy, seed)
    sampler.sweep(n_therm)
    ce_b = np.empty((n_bins, lat.Lx))
    cr_b = np.empty((n_bins, lat.Lx))
    for b in range(n_bins):
        smp = sampler.sample(samples_per_bin, sweeps_between, n_therm=0)
        ce_b[b], cr_b[b] = cover_correlators(smp.covers, lat)
    return _table(lat, ce_b, cr_b)


def _table(lat, ce_b, cr_b) -> CorrelatorTable:
    return CorrelatorTable(np.arange(lat.Lx), ce_b.mean(0), _jackknife_err(ce_b),
                           cr_b.mean(0), _jackknife_err(cr_b), ce_b, cr_b)


def _jackknife_err(blocks):
    nb = len(blocks)
    if nb < 2:
        return np.full(blocks.shape[1:], np.nan)
    loo = (blocks.sum(0) - blocks) / (nb - 1)
    return np.sqrt((nb - 1) / nb * ((loo - loo.mean(0)) ** 2).sum(0))
