"""Spin -> gauge-field dictionary on the dual honeycomb lattice.

A nearest-neighbour bond is frustrated when both ends carry the same state.
The electric field on the dual link crossing it (oriented A -> B) is +2 for a
frustrated bond and -1 otherwise; the triangle rule (one frustrated bond per
triangle) is the charge-free condition, and the E = +2 links then form a
perfect matching of the honeycomb lattice.

Reference cuts: C_x runs along the site row y = 0 and crosses the ``Lx``
vertical links (k = 0) of the up triangles in that row; C_y runs up the site
column x = 0 and crosses the ``Ly`` links of its a2 bonds (k = 1).  Fluxes are
plain sums of E over the crossed links.

Configurations are occupation arrays (n = 0/1) with sites on the last axis;
most functions accept a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .lattice import HIGH_SYMMETRY, Lattice

OMEGA3 = np.exp(2j * np.pi / 3)


class ConstraintViolation(ValueError):
    """Raised when a field is not divergence free; ``vertices`` lists the charged dual sites."""

    def __init__(self, vertices):
        self.vertices = np.asarray(vertices)
        super().__init__(f"{len(self.vertices)} charged dual vertices, first: {self.vertices[:6]}")


@dataclass(frozen=True)
class WindingNumbers:
    Fx: int
    Fy: int
    Lx: int

    @property
    def f(self) -> Fraction:
        return Fraction(self.Fx, self.Lx)


@dataclass(frozen=True)
class HeightField:
    h: np.ndarray  # one integer per hexagonal plaquette (= triangular site)
    Hx: int  # height gained across one period along a1
    Hy: int  # height gained across one period along a2


def frustrated_bonds(cfg, lat: Lattice) -> np.ndarray:
    """Boolean mask over nearest-neighbour bonds, in dual-link order."""
    n = np.asarray(cfg)
    return n[..., lat.link_bond[:, 0]] == n[..., lat.link_bond[:, 1]]


def electric_field(cfg, lat: Lattice) -> np.ndarray:
    return np.where(frustrated_bonds(cfg, lat), 2, -1).astype(np.int64)


def divergence(E, lat: Lattice) -> np.ndarray:
    """Charge Q_v on every dual vertex: outgoing flux at A sites, minus incoming at B sites."""
    E = np.asarray(E)
    N = lat.n_sites
    Q = np.zeros(E.shape[:-1] + (2 * N,), dtype=np.int64)
    Q[..., :N] = E.reshape(E.shape[:-1] + (N, 3)).sum(axis=-1)
    for k in range(3):
        # for fixed k the up -> down map is a permutation
        Q[..., lat.dual_links[k::3, 1]] -= E[..., k::3]
    return Q


def n_frustrated_per_triangle(cfg, lat: Lattice) -> np.ndarray:
    """Frustrated-bond count of every triangle (up triangles first)."""
    n = np.asarray(cfg)
    tri = lat.triangles
    a, b, c = n[..., tri[:, 0]], n[..., tri[:, 1]], n[..., tri[:, 2]]
    return (a == b).astype(int) + (b == c) + (a == c)


def violation_fraction(cfg, lat: Lattice) -> np.ndarray | float:
    return np.mean(n_frustrated_per_triangle(cfg, lat) != 1, axis=-1)


def dimer_cover(E, lat: Lattice) -> np.ndarray:
    """Occupied-link mask of the perfect matching encoded by a divergence-free field."""
    E = np.asarray(E)
    Q = divergence(E, lat)
    bad = np.flatnonzero(Q != 0)
    if len(bad):
        raise ConstraintViolation(bad)
    return E == 2


def field_from_cover(cover) -> np.ndarray:
    return np.where(np.asarray(cover, dtype=bool), 2, -1).astype(np.int64)


def cut_links(lat: Lattice, row: int = 0, column: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Dual links crossed by the row cut C_x and the column cut C_y."""
    xs = np.arange(lat.Lx)
    ys = np.arange(lat.Ly)
    cx = 3 * np.array([lat.site(x, row) for x in xs]) + 0
    cy = 3 * np.array([lat.site(column, y) for y in ys]) + 1
    return cx, cy


def winding_flux(E, lat: Lattice, row: int = 0, column: int = 0) -> WindingNumbers:
    E = np.asarray(E)
    cx, cy = cut_links(lat, row, column)
    return WindingNumbers(int(E[cx].sum()), int(E[cy].sum()), lat.Lx)


def reachable_fluxes(L: int) -> list[Fraction]:
    """Flux densities f = F/L allowed for spin configurations on a ring of L sites.

    F = 3d - L with d frustrated bonds along the cut, and a periodic ring needs an
    even number L - d of sign changes.
    """
    return [Fraction(3 * d - L, L) for d in range(L + 1) if (L - d) % 2 == 0]


def height_field(cover, lat: Lattice) -> HeightField:
    """Integrate the plaquette height of a dimer cover along a spanning tree.

    Turning clockwise around an up triangle the height rises by 1 across an
    empty link and drops by 2 across an occupied one.  Every bond is then
    re-checked, including the ones that wrap around the torus.
    """
    cover = np.asarray(cover, dtype=bool)
    step = np.where(cover, -2, 1)
    Lx, Ly = lat.Lx, lat.Ly
    N = lat.n_sites
    # (i, j, dh, wx, wy): h(j + wrap) - h(i) = dh, j is displaced by (wx, wy) periods
    x = np.arange(N) % Lx
    y = np.arange(N) // Lx
    t = np.arange(N)
    i0, j0 = lat.link_bond[0::3, 0], lat.link_bond[0::3, 1]
    i1, j1 = lat.link_bond[1::3, 0], lat.link_bond[1::3, 1]
    i2, j2 = lat.link_bond[2::3, 0], lat.link_bond[2::3, 1]
    rel = [
        (i0, j0, -step[3 * t + 0], (x + 1) // Lx, np.zeros(N, int)),
        (i1, j1, step[3 * t + 1], np.zeros(N, int), (y + 1) // Ly),
        (i2, j2, -step[3 * t + 2], -((x + 1) // Lx), (y + 1) // Ly),
    ]
    h = np.zeros(N, dtype=np.int64)
    for xx in range(1, Lx):
        h[lat.site(xx, 0)] = h[lat.site(xx - 1, 0)] - step[3 * lat.site(xx - 1, 0)]
    for yy in range(1, Ly):
        for xx in range(Lx):
            s = lat.site(xx, yy - 1)
            h[lat.site(xx, yy)] = h[s] + step[3 * s + 1]
    Hx = int(-step[3 * np.array([lat.site(xx, 0) for xx in range(Lx)])].sum())
    Hy = int(step[3 * np.array([lat.site(0, yy) for yy in range(Ly)]) + 1].sum())
    bad = []
    for i, j, dh, wx, wy in rel:
        err = h[j] + wx * Hx + wy * Hy - h[i] - dh
        bad.append(np.flatnonzero(err))
    bad = np.unique(np.concatenate(bad))
    if len(bad):
        raise ConstraintViolation(bad)
    return HeightField(h, Hx, Hy)


def spins_from_cover(cover, lat: Lattice, reference: int = 1) -> np.ndarray:
    """Occupation config(s) whose frustrated bonds are the occupied links (site 0 fixed).

    Spins are propagated along row 0 through the a1 bonds and then up every
    column through the a2 bonds; the full bond set is re-checked afterwards.
    """
    cover = np.asarray(cover, dtype=bool)
    c3 = cover.reshape(cover.shape[:-1] + (lat.Ly, lat.Lx, 3))
    # the state flips across every empty link
    row_flip = ~c3[..., 0, :-1, 0]
    n_row = np.zeros(cover.shape[:-1] + (lat.Lx,), dtype=np.int64)
    n_row[..., 1:] = np.cumsum(row_flip, axis=-1) % 2
    col_flip = ~c3[..., :-1, :, 1]
    n = np.zeros(cover.shape[:-1] + (lat.Ly, lat.Lx), dtype=np.int64)
    n[..., 0, :] = n_row
    n[..., 1:, :] = (n_row[..., None, :] + np.cumsum(col_flip, axis=-2)) % 2
    n = (n.reshape(cover.shape[:-1] + (lat.n_sites,)) + reference) % 2
    if not np.array_equal(frustrated_bonds(n, lat), cover):
        raise ValueError("cover is not realisable by a spin configuration on this torus")
    return n


def sublattice(lat: Lattice) -> np.ndarray:
    """Three-colouring c = (x - y) mod 3; each triangle holds one site of each colour."""
    i = np.arange(lat.n_sites)
    return ((i % lat.Lx) - (i // lat.Lx)) % 3


def psi_r(cfg, lat: Lattice) -> np.ndarray | complex:
    """Clock order parameter n_A + n_B w + n_C w^2 from sublattice-averaged densities."""
    n = np.asarray(cfg, dtype=float) - 0.5
    phase = OMEGA3 ** sublattice(lat)
    return 3 * (n @ phase) / lat.n_sites


def psi_r_local(cfg, lat: Lattice) -> np.ndarray:
    """psi_R on each up triangle (one three-site unit cell per A dual site)."""
    n = np.asarray(cfg, dtype=float) - 0.5
    phase = OMEGA3 ** sublattice(lat)
    tri = lat.up_triangles
    return sum(n[..., tri[:, k]] * phase[tri[:, k]] for k in range(3))


def psi_e_local(E, lat: Lattice) -> np.ndarray:
    """E_b1 + E_b2 w* + E_b3 w on each up triangle, b_k = link direction k."""
    E = np.asarray(E, dtype=float)
    E3 = E.reshape(E.shape[:-1] + (lat.n_sites, 3))
    return E3[..., 0] + E3[..., 1] * OMEGA3.conjugate() + E3[..., 2] * OMEGA3


def psi_e(E, lat: Lattice):
    return psi_e_local(E, lat).mean(axis=-1)


def axis_correlator(field, lat: Lattice) -> np.ndarray:
    """<psi*(R) psi(R + r a1)> for r = 0..Lx-1, averaged over R and any batch axis."""
    f = np.asarray(field)
    f = f.reshape((-1, lat.Ly, lat.Lx))
    F = np.fft.fft(f, axis=-1)
    c = np.fft.ifft(np.conj(F) * F, axis=-1).real / lat.Lx
    return c.mean(axis=(0, 1))


def correlators(cfgs, lat: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """(C_E(r), C_R(r)) along a1 from occupation samples."""
    cfgs = np.atleast_2d(cfgs)
    ce = axis_correlator(psi_e_local(electric_field(cfgs, lat), lat), lat)
    cr = axis_correlator(psi_r_local(cfgs, lat), lat)
    return ce, cr


def structure_factor(cfgs, lat: Lattice) -> np.ndarray:
    """S(Q) = |sum_i (n_i - 1/2) e^{iQ.r_i}|^2 / N on the momentum grid, sample-averaged."""
    s = np.atleast_2d(np.asarray(cfgs, dtype=float)) - 0.5
    F = np.fft.fft2(s.reshape(-1, lat.Ly, lat.Lx))
    S = (np.abs(F) ** 2).mean(axis=0) / lat.n_sites
    return S.ravel()


def structure_factor_at(cfgs, lat: Lattice, q) -> np.ndarray:
    """Per-sample S(Q) at an arbitrary Cartesian momentum (name or vector)."""
    if isinstance(q, str):
        q = HIGH_SYMMETRY[q]
    s = np.atleast_2d(np.asarray(cfgs, dtype=float)) - 0.5
    phase = np.exp(1j * lat.coords @ np.asarray(q, dtype=float))
    return np.abs(s @ phase) ** 2 / lat.n_sites


# reference configurations ----------------------------------------------------

def clock_config(lat: Lattice, pattern=(1, 1, 0)) -> np.ndarray:
    if lat.Lx % 3 or lat.Ly % 3:
        raise ValueError("three-sublattice order needs Lx and Ly divisible by 3")
    return np.asarray(pattern)[sublattice(lat)].astype(np.int64)


def stripe_config(lat: Lattice) -> np.ndarray:
    """Rows alternate between all-Rydberg and all-ground: every a1 bond is frustrated."""
    if lat.Ly % 2:
        raise ValueError("stripe order needs an even Ly")
    return ((np.arange(lat.n_sites) // lat.Lx) % 2 == 0).astype(np.int64)


def row_pattern(L: int, d: int) -> np.ndarray:
    """Ring of L occupations with exactly d equal-neighbour pairs, spread evenly."""
    if (L - d) % 2 or not 0 <= d <= L:
        raise ValueError(f"no ring of {L} sites has {d} frustrated bonds")
    equal = np.zeros(L, dtype=bool)
    equal[(np.arange(d) * L) // d if d else []] = True
    row = np.empty(L, dtype=np.int64)
    row[0] = 1
    for x in range(1, L):
        row[x] = row[x - 1] if equal[x - 1] else 1 - row[x - 1]
    return row


def _stack_rows(row, shifts):
    """Rows n(x, y + 1) = 1 - n(x + s_y, y); both shifts s_y = 0, 1 keep the triangle rule."""
    n = np.empty((len(shifts), len(row)), dtype=np.int64)
    n[0] = row
    for yy in range(1, len(shifts)):
        n[yy] = 1 - np.roll(n[yy - 1], -shifts[yy - 1])
    return n.ravel()


def sector_config(lat: Lattice, f) -> np.ndarray:
    """Constraint-satisfying config with row-cut flux density f.

    f = 0 gives the three-sublattice clock state and f = 2 the stripe.  Other
    sectors stack a row with the required number of frustrated bonds using
    n(x, y + 1) = 1 - n(x + s_y, y), with s_y = 0 on the first rows and 1 on
    the rest.  The number of shifted rows sets the column-cut flux F_y; the
    choice closest to the clock-stripe line F_y = -F_x / 2 is returned.
    """
    f = Fraction(f).limit_denominator(4 * lat.Lx)
    if f not in reachable_fluxes(lat.Lx):
        raise ValueError(f"flux density {f} is not reachable on Lx = {lat.Lx}")
    if f == 0 and lat.Lx % 3 == 0 and lat.Ly % 3 == 0:
        return clock_config(lat)
    d = int((f * lat.Lx + lat.Lx) / 3)
    row = row_pattern(lat.Lx, d)
    target = -f * lat.Lx / 2
    best, best_key = None, None
    for k in range(lat.Ly + 1):
        n = _stack_rows(row, [0] * (lat.Ly - k) + [1] * k)
        closes = np.array_equal(1 - np.roll(n[-lat.Lx:], -(1 if k else 0)), row)
        if not closes or np.any(n_frustrated_per_triangle(n, lat) != 1):
            continue
        Fy = winding_flux(electric_field(n, lat), lat).Fy
        key = (abs(Fy - target), Fy)
        if best_key is None or key < best_key:
            best, best_key = n, key
    if best is None:
        raise ValueError(f"stacked rows do not close around a torus of height {lat.Ly} for f = {f}")
    return best
