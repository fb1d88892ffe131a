"""Stochastic series expansion for the transverse-field spin form of the Rydberg model.

The Hamiltonian is split into non-negative pieces

    H = - sum_b J_b (1/4 - S^z_i S^z_j) - sum_i [Omega/2 + Omega S^x_i] + C,
    C = sum_b J_b / 4 + N Omega / 2,

so every sampled operator has weight J_b/2 (bond, antiparallel spins only) or
Omega/2 (site, diagonal or spin flip).  Operators are encoded as integers:

    -1          identity slot
    2 i         diagonal site operator on site i
    2 i + 1     spin-flip site operator on site i
    2 N + b     diagonal bond operator on bond b

Cluster updates follow the branching scheme for transverse-field Ising models:
a cluster grows through both legs of every bond vertex it touches and stops
at site vertices; flipping it swaps diagonal and spin-flip site operators on
its boundary.

Sector-constrained runs decide clusters one at a time and refuse a flip when
it would change the winding flux through either reference cut at any
imaginary time, or change whether any triangle along the cuts obeys the
triangle rule.  Both conditions are symmetric in the old and new
configuration, so the restricted chain still satisfies detailed balance.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from . import gauge
from .lattice import HIGH_SYMMETRY, Lattice
from .model import CouplingTable, classical_energy

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _diagonal_update(opstr, state, n_ops, bond_sites, cum_w, n_sites, site_w, beta, rng):
    M = opstr.shape[0]
    W = cum_w[-1] + n_sites * site_w
    site_total = n_sites * site_w
    n_bonds = bond_sites.shape[0]
    for p in range(M):
        op = opstr[p]
        if op == -1:
            if rng.random() * (M - n_ops) < beta * W:
                r = rng.random() * W
                if r < site_total:
                    i = min(int(r / site_w), n_sites - 1)
                    opstr[p] = 2 * i
                    n_ops += 1
                else:
                    b = np.searchsorted(cum_w, r - site_total, side="right")
                    if b >= n_bonds:
                        b = n_bonds - 1
                    if state[bond_sites[b, 0]] != state[bond_sites[b, 1]]:
                        opstr[p] = 2 * n_sites + b
                        n_ops += 1
        elif op >= 2 * n_sites or op % 2 == 0:
            if rng.random() * beta * W < M - n_ops + 1:
                opstr[p] = -1
                n_ops -= 1
        else:
            state[op // 2] ^= 1
    return n_ops


@numba.njit(cache=True)
def _vertex_sites(op, n_sites, bond_sites):
    """(first site, second site or -1) of an operator."""
    if op < 2 * n_sites:
        return op // 2, -1
    b = op - 2 * n_sites
    return bond_sites[b, 0], bond_sites[b, 1]


@numba.njit(cache=True)
def _build_vertices(opstr, state, n_sites, bond_sites):
    """Positions, legs, vertical links and leg spins of the non-identity operators."""
    M = opstr.shape[0]
    n = 0
    for p in range(M):
        if opstr[p] != -1:
            n += 1
    pos = np.empty(n, dtype=np.int64)
    link = np.full(4 * n, -1, dtype=np.int64)
    leg_spin = np.zeros(4 * n, dtype=np.int8)
    leg_site = np.full(4 * n, -1, dtype=np.int64)
    first = np.full(n_sites, -1, dtype=np.int64)
    last = np.full(n_sites, -1, dtype=np.int64)
    s = state.copy()
    k = 0
    for p in range(M):
        op = opstr[p]
        if op == -1:
            continue
        pos[k] = p
        a, b = _vertex_sites(op, n_sites, bond_sites)
        for off in range(2):
            site = a if off == 0 else b
            if site < 0:
                continue
            lo = 4 * k + off
            leg_site[lo] = site
            leg_site[lo + 2] = site
            leg_spin[lo] = s[site]
            if last[site] >= 0:
                link[lo] = last[site]
                link[last[site]] = lo
            else:
                first[site] = lo
            last[site] = lo + 2
        if op < 2 * n_sites and op % 2 == 1:
            s[a] ^= 1
        leg_spin[4 * k + 2] = s[a]
        if b >= 0:
            leg_spin[4 * k + 3] = s[b]
        k += 1
    for site in range(n_sites):
        if first[site] >= 0:
            link[first[site]] = last[site]
            link[last[site]] = first[site]
    return pos, link, leg_spin, leg_site, first


@numba.njit(cache=True)
def _label_clusters(opstr, pos, link, n_sites):
    n = pos.shape[0]
    clus = np.full(4 * n, -1, dtype=np.int64)
    stack = np.empty(4 * n + 1, dtype=np.int64)
    nc = 0
    for start in range(4 * n):
        if link[start] < 0 or clus[start] >= 0:
            continue
        top = 0
        stack[0] = start
        clus[start] = nc
        while top >= 0:
            leg = stack[top]
            top -= 1
            other = link[leg]
            if clus[other] < 0:
                clus[other] = nc
                top += 1
                stack[top] = other
            v = leg // 4
            if opstr[pos[v]] >= 2 * n_sites:
                for l2 in range(4 * v, 4 * v + 4):
                    if clus[l2] < 0:
                        clus[l2] = nc
                        top += 1
                        stack[top] = l2
        nc += 1
    return clus, nc


@numba.njit(cache=True)
def _row_contrib(a, b, s, fl):
    """Change of [s_a == s_b] when the flags fl choose which ends flip."""
    if fl[a] == fl[b]:
        return 0
    return -1 if s[a] == s[b] else 1


@numba.njit(cache=True)
def _tri_status(t, tri, s, fl):
    """(violated before, violated after) for guarded triangle t."""
    a, b, c = tri[t, 0], tri[t, 1], tri[t, 2]
    before = s[a] == s[b] and s[b] == s[c]
    sa, sb, sc = s[a] ^ fl[a], s[b] ^ fl[b], s[c] ^ fl[c]
    after = sa == sb and sb == sc
    return before, after


@numba.njit(cache=True)
def _collect(ptr, idx, sites, n_sites_used, buf):
    """Unique entries of the CSR rows of ``sites`` into ``buf``; returns the count."""
    m = 0
    for q in range(n_sites_used):
        g = sites[q]
        for j in range(ptr[g], ptr[g + 1]):
            v = idx[j]
            dup = False
            for r in range(m):
                if buf[r] == v:
                    dup = True
                    break
            if not dup:
                buf[m] = v
                m += 1
    return m


@numba.njit(cache=True)
def _sector_check(c, nc, clus, leg_spin, first, state, flip, gsites,
                  row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr, cb_idx,
                  tri, tri_ptr, tri_idx, check_tri, gops_k, gops_leg, gops_site, s, fl):
    """True when flipping cluster c leaves cut fluxes and cut triangles unchanged at all times.

    ``s`` and ``fl`` are scratch arrays (current spin and flip flag per site).
    """
    for g in gsites:
        if first[g] >= 0:
            leg = first[g]
            s[g] = leg_spin[leg]
            fl[g] = 1 if clus[leg] == c else 0
        else:
            s[g] = state[g] ^ flip[nc + g]
            fl[g] = 1 if nc + g == c else 0
    dx = 0
    for r in range(row_bonds.shape[0]):
        dx += _row_contrib(row_bonds[r, 0], row_bonds[r, 1], s, fl)
    dy = 0
    for r in range(col_bonds.shape[0]):
        dy += _row_contrib(col_bonds[r, 0], col_bonds[r, 1], s, fl)
    if dx != 0 or dy != 0:
        return False
    if check_tri:
        for t in range(tri.shape[0]):
            before, after = _tri_status(t, tri, s, fl)
            if before != after:
                return False
    return _scan_events(c, clus, leg_spin, row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr, cb_idx,
                        tri, tri_ptr, tri_idx, check_tri, gops_k, gops_leg, gops_site, s, fl,
                        0, gops_k.shape[0])


@numba.njit(cache=True)
def _sector_check_window(c, nc, clus, leg_spin, first, state, flip, gsites, row_bonds, rb_ptr, rb_idx,
                         col_bonds, cb_ptr, cb_idx, tri, tri_ptr, tri_idx, check_tri,
                         gops_k, gops_leg, gops_site, site_ptr, site_ev, kmin, kmax, s, fl):
    """Sector check for a cluster that does not cross tau = 0 on any guarded site.

    Such a cluster can only change guarded bonds between its first and last
    operator on a guarded site, so the state just before ``kmin`` is rebuilt
    per site by bisection and only the events inside the window are replayed.
    """
    for g in gsites:
        lo, hi = site_ptr[g], site_ptr[g + 1]
        # last event on g strictly before kmin
        while lo < hi:
            mid = (lo + hi) // 2
            if gops_k[site_ev[mid]] < kmin:
                lo = mid + 1
            else:
                hi = mid
        if lo > site_ptr[g]:
            up = gops_leg[site_ev[lo - 1]] + 2
            s[g] = leg_spin[up]
            fl[g] = 1 if clus[up] == c else 0
        elif first[g] >= 0:
            leg = first[g]
            s[g] = leg_spin[leg]
            fl[g] = 1 if clus[leg] == c else 0
        else:
            s[g] = state[g] ^ flip[nc + g]
            fl[g] = 0
    e0 = np.searchsorted(gops_k, kmin)
    e1 = np.searchsorted(gops_k, kmax, side="right")
    return _scan_events(c, clus, leg_spin, row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr, cb_idx,
                        tri, tri_ptr, tri_idx, check_tri, gops_k, gops_leg, gops_site, s, fl,
                        e0, e1)


@numba.njit(cache=True)
def _scan_events(c, clus, leg_spin, row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr, cb_idx,
                 tri, tri_ptr, tri_idx, check_tri, gops_k, gops_leg, gops_site, s, fl, e, ng):
    """Replay guarded operator events e..ng-1, starting from zero flux change."""
    dx = 0
    dy = 0
    sites = np.empty(2, dtype=np.int64)
    rbuf = np.empty(8, dtype=np.int64)
    cbuf = np.empty(8, dtype=np.int64)
    tbuf = np.empty(24, dtype=np.int64)
    while e < ng:
        k = gops_k[e]
        ns = 0
        e_end = e
        while e_end < ng and gops_k[e_end] == k:
            sites[ns] = gops_site[e_end]
            ns += 1
            e_end += 1
        nr = _collect(rb_ptr, rb_idx, sites, ns, rbuf)
        ncb = _collect(cb_ptr, cb_idx, sites, ns, cbuf)
        for r in range(nr):
            dx -= _row_contrib(row_bonds[rbuf[r], 0], row_bonds[rbuf[r], 1], s, fl)
        for r in range(ncb):
            dy -= _row_contrib(col_bonds[cbuf[r], 0], col_bonds[cbuf[r], 1], s, fl)
        for q in range(e, e_end):
            up = gops_leg[q] + 2
            g = gops_site[q]
            s[g] = leg_spin[up]
            fl[g] = 1 if clus[up] == c else 0
        for r in range(nr):
            dx += _row_contrib(row_bonds[rbuf[r], 0], row_bonds[rbuf[r], 1], s, fl)
        for r in range(ncb):
            dy += _row_contrib(col_bonds[cbuf[r], 0], col_bonds[cbuf[r], 1], s, fl)
        if dx != 0 or dy != 0:
            return False
        if check_tri:
            nt = _collect(tri_ptr, tri_idx, sites, ns, tbuf)
            for r in range(nt):
                before, after = _tri_status(tbuf[r], tri, s, fl)
                if before != after:
                    return False
        e = e_end
    return True


@numba.njit(cache=True)
def _cluster_update(opstr, state, n_sites, bond_sites, rng, constrained, is_guard, gsites,
                    row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr, cb_idx,
                    tri, tri_ptr, tri_idx, check_tri):
    """One sweep of cluster flips; returns (clusters built, flips refused by the sector rule)."""
    pos, link, leg_spin, leg_site, first = _build_vertices(opstr, state, n_sites, bond_sites)
    clus, nc = _label_clusters(opstr, pos, link, n_sites)
    n = pos.shape[0]
    flip = np.zeros(nc + n_sites, dtype=np.int8)
    refused = 0
    if not constrained:
        for c in range(nc + n_sites):
            flip[c] = 1 if rng.random() < 0.5 else 0
    else:
        # legs of each cluster (counting sort) and whether it touches a guarded site
        counts = np.zeros(nc + 1, dtype=np.int64)
        touches = np.zeros(nc + n_sites, dtype=np.bool_)
        for leg in range(4 * n):
            cl = clus[leg]
            if cl >= 0:
                counts[cl + 1] += 1
                if is_guard[leg_site[leg]]:
                    touches[cl] = True
        for g in range(n_sites):
            if first[g] < 0 and is_guard[g]:
                touches[nc + g] = True
        ptr = np.cumsum(counts)
        fill = ptr[:-1].copy()
        members = np.empty(ptr[-1], dtype=np.int64)
        for leg in range(4 * n):
            cl = clus[leg]
            if cl >= 0:
                members[fill[cl]] = leg
                fill[cl] += 1
        # time-ordered lower legs on guarded sites
        ng = 0
        for leg in range(4 * n):
            if leg % 4 < 2 and link[leg] >= 0 and is_guard[leg_site[leg]]:
                ng += 1
        gk = np.empty(ng, dtype=np.int64)
        gl = np.empty(ng, dtype=np.int64)
        gs = np.empty(ng, dtype=np.int64)
        q = 0
        for leg in range(4 * n):
            if leg % 4 < 2 and link[leg] >= 0 and is_guard[leg_site[leg]]:
                gk[q] = leg // 4
                gl[q] = leg
                gs[q] = leg_site[leg]
                q += 1
        # per guarded site event lists, guarded time window of each cluster, and
        # whether the cluster occupies a guarded site at tau = 0
        site_ptr = np.zeros(n_sites + 1, dtype=np.int64)
        for q in range(ng):
            site_ptr[gs[q] + 1] += 1
        site_ptr = np.cumsum(site_ptr)
        sfill = site_ptr[:-1].copy()
        site_ev = np.empty(ng, dtype=np.int64)
        kmin = np.full(nc + n_sites, n, dtype=np.int64)
        kmax = np.full(nc + n_sites, -1, dtype=np.int64)
        for q in range(ng):
            site_ev[sfill[gs[q]]] = q
            sfill[gs[q]] += 1
            for leg in (gl[q], gl[q] + 2):
                cl = clus[leg]
                if gk[q] < kmin[cl]:
                    kmin[cl] = gk[q]
                if gk[q] > kmax[cl]:
                    kmax[cl] = gk[q]
        wraps = np.zeros(nc + n_sites, dtype=np.bool_)
        for g in gsites:
            if first[g] >= 0:
                wraps[clus[first[g]]] = True
            else:
                wraps[nc + g] = True
        s_buf = np.zeros(n_sites, dtype=np.int8)
        f_buf = np.zeros(n_sites, dtype=np.int8)
        for c in range(nc + n_sites):
            if rng.random() >= 0.5:
                continue
            if touches[c]:
                if wraps[c]:
                    ok = _sector_check(c, nc, clus, leg_spin, first, state, flip, gsites,
                                       row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr, cb_idx,
                                       tri, tri_ptr, tri_idx, check_tri, gk, gl, gs, s_buf, f_buf)
                else:
                    ok = _sector_check_window(c, nc, clus, leg_spin, first, state, flip, gsites,
                                              row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr,
                                              cb_idx, tri, tri_ptr, tri_idx, check_tri, gk, gl,
                                              gs, site_ptr, site_ev, kmin[c], kmax[c], s_buf,
                                              f_buf)
                if not ok:
                    refused += 1
                    continue
            flip[c] = 1
            if c < nc:
                for j in range(ptr[c], ptr[c + 1]):
                    leg_spin[members[j]] ^= 1
    for k in range(n):
        op = opstr[pos[k]]
        if op < 2 * n_sites and flip[clus[4 * k]] != flip[clus[4 * k + 2]]:
            opstr[pos[k]] = op ^ 1
    for site in range(n_sites):
        if first[site] >= 0:
            state[site] ^= flip[clus[first[site]]]
        else:
            state[site] ^= flip[nc + site]
    return nc, refused


@numba.njit(cache=True)
def _adjust_cutoff(opstr, n_ops):
    """Grow the string to ceil(5 n / 4) slots, spreading the new identities evenly."""
    M = opstr.shape[0]
    target = max(M, (5 * n_ops + 3) // 4)
    if target == M:
        return opstr
    out = np.full(target, -1, dtype=np.int64)
    extra = target - M
    j = 0
    for p in range(M):
        out[j] = opstr[p]
        j += 1
        # insert identities at evenly spaced positions
        if (p + 1) * extra // M > p * extra // M:
            j += (p + 1) * extra // M - p * extra // M
    return out


@numba.njit(cache=True)
def _sweeps(opstr, state, n_ops, bond_sites, cum_w, n_sites, site_w, beta, rng, n_sweeps,
            constrained, is_guard, gsites, row_bonds, rb_ptr, rb_idx, col_bonds, cb_ptr,
            cb_idx, tri, tri_ptr, tri_idx, check_tri, snaps, n_rec, noff_rec, refused_rec):
    """Run sweeps and record per-sweep expansion order, spin-flip count and tau = 0 state."""
    for t in range(n_sweeps):
        n_ops = _diagonal_update(opstr, state, n_ops, bond_sites, cum_w, n_sites, site_w,
                                 beta, rng)
        nc, refused = _cluster_update(opstr, state, n_sites, bond_sites, rng, constrained,
                                      is_guard, gsites, row_bonds, rb_ptr, rb_idx, col_bonds,
                                      cb_ptr, cb_idx, tri, tri_ptr, tri_idx, check_tri)
        if snaps.shape[0] > 0:
            snaps[t] = state
            n_rec[t] = n_ops
            noff = 0
            for p in range(opstr.shape[0]):
                op = opstr[p]
                if op >= 0 and op < 2 * n_sites and op % 2 == 1:
                    noff += 1
            noff_rec[t] = noff
            refused_rec[t] = refused
    return n_ops


@numba.njit(cache=True)
def _propagate_fields(opstr, state, n_sites, phases_site, phases_link, right_of):
    """Fourier amplitudes of (n - 1/2) and of the k = 0 electric field in every propagated state.

    Row p holds the amplitudes of the state in front of the p-th non-identity
    operator.  ``right_of[i]`` is the a1 neighbour of site i; the k = 0 link of
    up triangle i crosses the bond (i, right_of[i]).
    """
    M = opstr.shape[0]
    n = 0
    for p in range(M):
        if opstr[p] != -1:
            n += 1
    nq = phases_site.shape[1]
    left_of = np.empty(n_sites, dtype=np.int64)
    for i in range(n_sites):
        left_of[right_of[i]] = i
    rho = np.zeros(nq, dtype=np.complex128)
    ef = np.zeros(nq, dtype=np.complex128)
    s = state.copy()
    for i in range(n_sites):
        rho += (s[i] - 0.5) * phases_site[i]
        e = 2.0 if s[i] == s[right_of[i]] else -1.0
        ef += e * phases_link[i]
    out_r = np.empty((max(n, 1), nq), dtype=np.complex128)
    out_e = np.empty((max(n, 1), nq), dtype=np.complex128)
    k = 0
    if n == 0:
        out_r[0] = rho
        out_e[0] = ef
        return out_r, out_e
    for p in range(M):
        op = opstr[p]
        if op == -1:
            continue
        out_r[k] = rho
        out_e[k] = ef
        k += 1
        if op < 2 * n_sites and op % 2 == 1:
            i = op // 2
            # links (i, right) and (left, i) change their frustration
            for t in (i, left_of[i]):
                e_old = 2.0 if s[t] == s[right_of[t]] else -1.0
                ef -= e_old * phases_link[t]
            s[i] ^= 1
            for t in (i, left_of[i]):
                e_new = 2.0 if s[t] == s[right_of[t]] else -1.0
                ef += e_new * phases_link[t]
            rho += (1.0 if s[i] == 1 else -1.0) * phases_site[i]
    return out_r, out_e


# ---------------------------------------------------------------------------
# guard tables for sector-constrained runs


def _csr(lists, n):
    ptr = np.zeros(n + 1, dtype=np.int64)
    for i, l in enumerate(lists):
        ptr[i + 1] = ptr[i] + len(l)
    idx = np.array([v for l in lists for v in l], dtype=np.int64)
    return ptr, idx


def guard_tables(lat: Lattice):
    """Bonds and triangles watched by the sector constraint, as flat numba-ready arrays."""
    N = lat.n_sites
    row_bonds = np.array([(lat.site(x, 0), lat.site(x + 1, 0)) for x in range(lat.Lx)])
    col_bonds = np.array([(lat.site(0, y), lat.site(0, y + 1)) for y in range(lat.Ly)])
    tris = set()
    for x in range(lat.Lx):
        tris.add(tuple(sorted(lat.up_triangles[lat.site(x, 0)])))
        tris.add(tuple(sorted(lat.down_triangles[lat.site(x, lat.Ly - 1)])))
    for y in range(lat.Ly):
        tris.add(tuple(sorted(lat.up_triangles[lat.site(0, y)])))
        tris.add(tuple(sorted(lat.down_triangles[lat.site(lat.Lx - 1, y)])))
    tri = np.array(sorted(tris), dtype=np.int64)
    rb = [[] for _ in range(N)]
    for r, (a, b) in enumerate(row_bonds):
        rb[a].append(r)
        rb[b].append(r)
    cb = [[] for _ in range(N)]
    for r, (a, b) in enumerate(col_bonds):
        cb[a].append(r)
        cb[b].append(r)
    tl = [[] for _ in range(N)]
    for t, abc in enumerate(tri):
        for v in set(abc.tolist()):
            tl[v].append(t)
    is_guard = np.zeros(N, dtype=np.bool_)
    is_guard[row_bonds.ravel()] = True
    is_guard[col_bonds.ravel()] = True
    is_guard[tri.ravel()] = True
    rb_ptr, rb_idx = _csr(rb, N)
    cb_ptr, cb_idx = _csr(cb, N)
    tri_ptr, tri_idx = _csr(tl, N)
    return (is_guard, np.flatnonzero(is_guard).astype(np.int64),
            row_bonds.astype(np.int64), rb_ptr, rb_idx,
            col_bonds.astype(np.int64), cb_ptr, cb_idx, tri, tri_ptr, tri_idx)


def _empty_guard(N):
    z2 = np.zeros((0, 2), dtype=np.int64)
    z1 = np.zeros(0, dtype=np.int64)
    ptr = np.zeros(N + 1, dtype=np.int64)
    return (np.zeros(N, dtype=np.bool_), z1, z2, ptr, z1, z2, ptr, z1,
            np.zeros((0, 3), dtype=np.int64), ptr, z1)


# ---------------------------------------------------------------------------
# configuration and results


@dataclass
class SSEConfig:
    beta: float
    n_therm: int = 1000
    n_meas: int = 10000
    n_bins: int = 20
    seed: int | None = None
    sector: object = None  # flux density f, or None for unconstrained runs
    guard_cut_triangles: bool = True
    initial_cutoff: int = 32
    chunk: int = 2000  # sweeps per numba call during measurement
    tau_points: int = 50
    tau_every: int = 0  # 0 disables imaginary-time measurements
    tau_momenta: tuple = ()
    # "auto": clock state when 3 divides both sides, else random; or "clock", "random"
    initial_state: str = "auto"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.initial_state not in ("auto", "clock", "random"):
            raise ValueError("initial_state must be auto, clock or random")
        if self.n_bins < 2 or self.n_meas % self.n_bins:
            raise ValueError("n_meas must be a positive multiple of n_bins (n_bins >= 2)")


@dataclass
class BinnedSeries:
    bins: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.bins))

    @property
    def error(self) -> float:
        b = np.asarray(self.bins, dtype=float)
        nb = len(b)
        var = np.mean(b**2) - np.mean(b) ** 2
        return float(np.sqrt(max(var, 0.0) / (nb - 1)))

    @property
    def equilibrated(self) -> bool:
        """False when the two halves of the bin series disagree by more than 5 sigma."""
        b = np.asarray(self.bins, dtype=float)
        h = len(b) // 2
        if h < 2:
            return True
        first, second = BinnedSeries(b[:h]), BinnedSeries(b[h:2 * h])
        sig = np.hypot(first.error, second.error)
        diff = abs(first.mean - second.mean)
        return bool(diff <= 5 * sig) if sig > 0 else bool(diff == 0)


@dataclass
class ImagTimeCorrelator:
    tau: np.ndarray
    momenta: np.ndarray  # (n_q, 2) Cartesian
    bins: dict  # observable -> (n_bins, n_q, n_tau)

    def mean(self, observable: str) -> np.ndarray:
        return self.bins[observable].mean(axis=0)

    def covariance(self, observable: str, q_index: int) -> np.ndarray:
        """C_ij = sum_b (G_b(i) - G(i)) (G_b(j) - G(j)) / (N_B (N_B - 1))."""
        g = self.bins[observable][:, q_index, :]
        nb = g.shape[0]
        d = g - g.mean(axis=0)
        return d.T @ d / (nb * (nb - 1))


@dataclass
class RunResult:
    series: dict
    imag_time: ImagTimeCorrelator | None
    snapshots: np.ndarray | None
    psi_r: np.ndarray | None
    refused_flips: int
    cutoff: int
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {k: (v.mean, v.error, v.equilibrated) for k, v in self.series.items()}


def tau_grid(beta: float, n: int = 50) -> np.ndarray:
    """n points in [0, beta/2], quadratically denser towards tau = 0."""
    return 0.5 * beta * (np.arange(n) / (n - 1)) ** 2


# ---------------------------------------------------------------------------
# chain


class SSEChain:
    """One Markov chain: trial state, operator string and random stream."""

    def __init__(self, lat: Lattice, tbl: CouplingTable, cfg: SSEConfig, state=None):
        self.lat = lat
        self.tbl = tbl
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.bond_sites, J = tbl.bond_arrays(lat)
        self.bond_sites = np.ascontiguousarray(self.bond_sites, dtype=np.int64)
        if np.any(J < 0):
            raise ValueError("antiferromagnetic couplings only (U > 0)")
        self.J = J
        self.cum_w = np.cumsum(J / 2)
        self.site_w = tbl.omega / 2
        self.constant = float(J.sum() / 4 + lat.n_sites * tbl.omega / 2)
        N = lat.n_sites
        if cfg.sector is not None:
            self.sector = Fraction(cfg.sector).limit_denominator(4 * lat.Lx)
            init = gauge.sector_config(lat, self.sector)
            self.guard = guard_tables(lat)
        else:
            self.sector = None
            divisible = lat.Lx % 3 == 0 and lat.Ly % 3 == 0
            if cfg.initial_state == "clock" or (cfg.initial_state == "auto" and divisible):
                # a constraint-satisfying start avoids long-lived pairs of triangle defects
                init = gauge.clock_config(lat)
            else:
                init = self.rng.integers(0, 2, N)
            self.guard = _empty_guard(N)
        if state is not None:
            init = np.asarray(state)
        self.state = np.asarray(init, dtype=np.int8).copy()
        self.opstr = np.full(max(cfg.initial_cutoff, 4), -1, dtype=np.int64)
        self.n_ops = 0
        self.refused = 0
        self._empty = (np.zeros((0, N), dtype=np.int8), np.zeros(0, dtype=np.int64),
                       np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @property
    def cutoff(self) -> int:
        return self.opstr.shape[0]

    def _call(self, n_sweeps, rec):
        g = self.guard
        self.n_ops = _sweeps(self.opstr, self.state, self.n_ops, self.bond_sites, self.cum_w,
                             self.lat.n_sites, self.site_w, self.cfg.beta, self.rng, n_sweeps,
                             self.sector is not None, g[0], g[1], g[2], g[3], g[4], g[5], g[6],
                             g[7], g[8], g[9], g[10], self.cfg.guard_cut_triangles, *rec)

    def thermalize(self, n_sweeps: int | None = None):
        """Sweeps with cutoff growth after each one."""
        for _ in range(self.cfg.n_therm if n_sweeps is None else n_sweeps):
            self._call(1, self._empty)
            self.opstr = _adjust_cutoff(self.opstr, self.n_ops)

    def sweep(self, n_sweeps: int = 1):
        self._call(n_sweeps, self._empty)

    def record(self, n_sweeps: int):
        """Sweeps returning (tau=0 states, expansion orders, spin-flip counts, refused flips)."""
        N = self.lat.n_sites
        rec = (np.empty((n_sweeps, N), dtype=np.int8), np.empty(n_sweeps, dtype=np.int64),
               np.empty(n_sweeps, dtype=np.int64), np.empty(n_sweeps, dtype=np.int64))
        self._call(n_sweeps, rec)
        self.refused += int(rec[3].sum())
        return rec

    def energy_samples(self, snaps, n_rec) -> np.ndarray:
        """Total energy of the spin Hamiltonian per sweep.

        For Omega > 0 this is the standard -n/beta + constant estimator.  For
        Omega = 0 the sampled states are classical and the diagonal energy of
        the trial state is used instead, which has no variance in a ground state.
        """
        if self.tbl.omega > 0:
            return -n_rec / self.cfg.beta + self.constant
        return classical_energy(snaps, self.tbl, self.lat)

    def imaginary_time(self, momenta, tau) -> dict:
        """G_R(q, tau) and G_E(q, tau) of the current configuration (one sample).

        Uses the exact mapping of SSE positions to imaginary time: a separation
        of m operators contributes with binomial weight Binom(m; n, tau/beta).
        """
        from scipy.stats import binom

        lat = self.lat
        momenta = np.atleast_2d(np.asarray(momenta, dtype=float))
        ph_s = np.exp(1j * lat.coords @ momenta.T)
        ph_l = np.exp(1j * lat.dual_coords[:lat.n_sites] @ momenta.T)
        right = np.array([lat.site(x + 1, y) for y in range(lat.Ly) for x in range(lat.Lx)])
        rho, ef = _propagate_fields(self.opstr, self.state, lat.n_sites, ph_s, ph_l, right)
        n = self.n_ops
        out = {}
        for name, amp in (("density", rho), ("electric_y", ef)):
            if n == 0:
                c = (np.abs(amp[0]) ** 2)[:, None] * np.ones(len(tau))
                out[name] = c / lat.n_sites
                continue
            F = np.fft.fft(amp, axis=0)
            corr = np.fft.ifft(np.conj(F) * F, axis=0).real / n  # (n, n_q), lag m
            corr = np.concatenate([corr, corr[:1]], axis=0)  # lag n equals lag 0
            m = np.arange(n + 1)
            w = binom.pmf(m[:, None], n, np.clip(tau / self.cfg.beta, 0, 1)[None, :])
            out[name] = (corr.T @ w) / lat.n_sites
        return out

    # checkpoints ---------------------------------------------------------

    def checkpoint(self, path):
        meta = {"version": CHECKPOINT_VERSION, "n_ops": self.n_ops, "refused": self.refused,
                "rng": self.rng.bit_generator.state,
                "sector": None if self.sector is None else str(self.sector)}
        np.savez(path, state=self.state, opstr=self.opstr, meta=json.dumps(meta))

    def restore(self, path):
        with np.load(path, allow_pickle=False) as d:
            meta = json.loads(str(d["meta"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"checkpoint version {meta['version']} is not supported")
            if d["state"].shape[0] != self.lat.n_sites:
                raise ValueError("checkpoint lattice size does not match")
            self.state = d["state"].astype(np.int8).copy()
            self.opstr = d["opstr"].astype(np.int64).copy()
        self.n_ops = int(meta["n_ops"])
        self.refused = int(meta["refused"])
        self.rng.bit_generator.state = meta["rng"]


# ---------------------------------------------------------------------------
# measurement driver

DEFAULT_POINTS = ("K", "M", "M2")


def _sample_observables(chain: SSEChain, snaps, n_rec, noff_rec) -> dict:
    lat = chain.lat
    N = lat.n_sites
    tbl = chain.tbl
    obs = {}
    e = chain.energy_samples(snaps, n_rec)
    obs["energy"] = e
    obs["energy_per_site"] = e / N
    if tbl.omega > 0:
        obs["sx"] = noff_rec / (chain.cfg.beta * tbl.omega * N)
    obs["magnetization"] = snaps.mean(axis=1) - 0.5
    for name in DEFAULT_POINTS:
        obs[f"S_{name}"] = gauge.structure_factor_at(snaps, lat, HIGH_SYMMETRY[name])
    psi = gauge.psi_r(snaps, lat)
    obs["psi_r_abs"] = np.abs(psi)
    obs["psi_r_sq"] = np.abs(psi) ** 2
    E = gauge.electric_field(snaps, lat)
    obs["psi_e_abs"] = np.abs(gauge.psi_e(E, lat))
    cx, cy = gauge.cut_links(lat)
    obs["flux_x"] = E[:, cx].sum(axis=1).astype(float)
    obs["flux_y"] = E[:, cy].sum(axis=1).astype(float)
    obs["violation_fraction"] = gauge.violation_fraction(snaps, lat)
    return obs


def run(chain: SSEChain, keep_snapshots: bool = False, full_structure_factor: bool = False,
        progress=None) -> RunResult:
    """Thermalize, then measure ``n_meas`` sweeps in ``n_bins`` bins."""
    cfg = chain.cfg
    chain.thermalize()
    per_bin = cfg.n_meas // cfg.n_bins
    series: dict = {}
    bins: dict = {}
    snaps_kept = []
    psi_all = []
    sq_bins = []
    tau = tau_grid(cfg.beta, cfg.tau_points)
    momenta = np.array(cfg.tau_momenta, dtype=float).reshape(-1, 2)
    tau_bins = {"density": [], "electric_y": []}
    sweep_index = 0
    for b in range(cfg.n_bins):
        acc: dict = {}
        sq_acc = np.zeros(chain.lat.n_sites)
        tau_acc = {k: [] for k in tau_bins}
        done = 0
        while done < per_bin:
            step = min(cfg.chunk, per_bin - done)
            if cfg.tau_every and len(momenta):
                step = min(step, cfg.tau_every - sweep_index % cfg.tau_every)
            snaps, n_rec, noff_rec, _ = chain.record(step)
            done += step
            sweep_index += step
            for k, v in _sample_observables(chain, snaps, n_rec, noff_rec).items():
                acc.setdefault(k, []).append(v)
            psi_all.append(gauge.psi_r(snaps, chain.lat))
            if full_structure_factor:
                sq_acc += gauge.structure_factor(snaps, chain.lat) * len(snaps)
            if keep_snapshots:
                snaps_kept.append(snaps.copy())
            if cfg.tau_every and len(momenta) and sweep_index % cfg.tau_every == 0:
                g = chain.imaginary_time(momenta, tau)
                for k in tau_acc:
                    tau_acc[k].append(g[k])
        for k, v in acc.items():
            bins.setdefault(k, []).append(float(np.mean(np.concatenate(v))))
        if full_structure_factor:
            sq_bins.append(sq_acc / per_bin)
        for k in tau_bins:
            if tau_acc[k]:
                tau_bins[k].append(np.mean(tau_acc[k], axis=0))
        if progress is not None:
            progress(b + 1, cfg.n_bins)
    for k, v in bins.items():
        series[k] = BinnedSeries(np.array(v))
    if full_structure_factor:
        sq = np.array(sq_bins)
        series["structure_factor"] = sq
    imag = None
    if tau_bins["density"]:
        imag = ImagTimeCorrelator(tau, momenta, {k: np.array(v) for k, v in tau_bins.items()})
    notes = [f"{k} not equilibrated (halves differ by > 5 sigma)"
             for k, s in series.items() if isinstance(s, BinnedSeries) and not s.equilibrated]
    return RunResult(series, imag,
                     np.concatenate(snaps_kept) if keep_snapshots else None,
                     np.concatenate(psi_all), chain.refused, chain.cutoff, notes)
