"""Periodic triangular lattice, its dual honeycomb lattice and the momentum grid.

Sites are indexed row-major, ``i = x + Lx * y``, with primitive vectors
a1 = (1, 0) and a2 = (1/2, sqrt(3)/2).

Bond tables are built from direction vectors: every site owns three bonds per
shell, so each shell holds exactly ``3 * Lx * Ly`` entries.  On very small tori
(L < 6) a direction vector may wrap onto a shorter minimum-image separation; the
table then describes the periodically summed interaction, which is what the
Monte Carlo engine and the exact-diagonalisation oracle both consume.

The dual honeycomb lattice has one vertex per elementary triangle.  Up
triangles form the A sublattice (dual index ``t``), down triangles the B
sublattice (dual index ``N + t``).  Dual links are oriented A -> B.  The link
``3 * t + k`` leaves up triangle ``t = (x, y)`` across

    k = 0: the a1 bond  (x, y)-(x+1, y)     towards down triangle (x, y-1)
    k = 1: the a2 bond  (x, y)-(x, y+1)     towards down triangle (x-1, y)
    k = 2: the a3 bond  (x+1, y)-(x, y+1)   towards down triangle (x, y)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SQRT3 = np.sqrt(3.0)
A1 = np.array([1.0, 0.0])
A2 = np.array([0.5, SQRT3 / 2])

# reciprocal vectors, a_i . g_j = 2 pi delta_ij
G1 = 2 * np.pi * np.array([1.0, -1.0 / SQRT3])
G2 = 2 * np.pi * np.array([0.0, 2.0 / SQRT3])

SHELL_VECTORS = {
    1: ((1, 0), (0, 1), (-1, 1)),
    2: ((1, 1), (-1, 2), (-2, 1)),
    3: ((2, 0), (0, 2), (-2, 2)),
}
# squared distance in units of a^2 -> shell
_SHELL_OF_D2 = {1: 1, 3: 2, 4: 3}

HIGH_SYMMETRY = {
    "Gamma": np.array([0.0, 0.0]),
    "K": np.array([4 * np.pi / 3, 0.0]),
    "M": np.array([np.pi, -np.pi / SQRT3]),
    # symmetry partner of M selected by the (-1)^y stripe
    "M2": np.array([0.0, 2 * np.pi / SQRT3]),
}


def _d2(m, n):
    return m * m + m * n + n * n


@dataclass(frozen=True)
class Lattice:
    Lx: int
    Ly: int
    coords: np.ndarray = field(repr=False)
    bonds: dict = field(repr=False)
    up_triangles: np.ndarray = field(repr=False)
    down_triangles: np.ndarray = field(repr=False)
    dual_links: np.ndarray = field(repr=False)
    link_bond: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly

    @property
    def n_dual(self) -> int:
        return 2 * self.n_sites

    @property
    def triangles(self) -> np.ndarray:
        return np.concatenate([self.up_triangles, self.down_triangles])

    def site(self, x: int, y: int) -> int:
        return (x % self.Lx) + self.Lx * (y % self.Ly)

    def xy(self, i: int) -> tuple[int, int]:
        return i % self.Lx, i // self.Lx

    @cached_property
    def dual_coords(self) -> np.ndarray:
        up = self.coords + np.array([0.5, SQRT3 / 6])
        down = self.coords + np.array([1.0, SQRT3 / 3])
        return np.concatenate([up, down])

    @cached_property
    def link_kind(self) -> np.ndarray:
        return np.tile(np.arange(3), self.n_sites)

    @cached_property
    def _bond_lookup(self) -> dict:
        return {frozenset(map(int, b)): l for l, b in enumerate(self.link_bond)}

    @cached_property
    def site_links(self) -> np.ndarray:
        """(N, 6) dual links whose crossed bond touches each site."""
        out = [[] for _ in range(self.n_sites)]
        for l, (i, j) in enumerate(self.link_bond):
            out[i].append(l)
            out[j].append(l)
        return np.array(out, dtype=np.int64)

    def dual_link_for_bond(self, i: int, j: int) -> int:
        """Index of the dual link crossing the nearest-neighbour bond (i, j)."""
        try:
            return self._bond_lookup[frozenset((int(i), int(j)))]
        except KeyError:
            raise ValueError(f"({i}, {j}) is not a nearest-neighbour bond") from None

    def min_image(self, i: int, j: int) -> tuple[int, int]:
        """Shortest lattice displacement (m, n) from site i to site j."""
        xi, yi = self.xy(i)
        xj, yj = self.xy(j)
        dx, dy = (xj - xi) % self.Lx, (yj - yi) % self.Ly
        best = None
        for m in (dx - self.Lx, dx, dx + self.Lx):
            for n in (dy - self.Ly, dy, dy + self.Ly):
                if best is None or _d2(m, n) < _d2(*best):
                    best = (m, n)
        return best

    def shell_of(self, i: int, j: int) -> int | None:
        """Interaction shell (1, 2, 3) of a site pair by minimum-image distance."""
        if i == j:
            return None
        return _SHELL_OF_D2.get(_d2(*self.min_image(i, j)))

    def momentum_grid(self) -> "MomentumGrid":
        return MomentumGrid(self.Lx, self.Ly)


def build_lattice(Lx: int, Ly: int | None = None) -> Lattice:
    if Ly is None:
        Ly = Lx
    if Lx < 3 or Ly < 3:
        raise ValueError(f"lattice must be at least 3x3, got {Lx}x{Ly}")
    N = Lx * Ly
    xs, ys = np.meshgrid(np.arange(Lx), np.arange(Ly))
    xs, ys = xs.ravel(), ys.ravel()
    coords = np.outer(xs, A1) + np.outer(ys, A2)

    def idx(x, y):
        return (x % Lx) + Lx * (y % Ly)

    bonds = {}
    for shell, vecs in SHELL_VECTORS.items():
        table = np.empty((3 * N, 2), dtype=np.int64)
        for k, (dx, dy) in enumerate(vecs):
            table[k::3, 0] = idx(xs, ys)
            table[k::3, 1] = idx(xs + dx, ys + dy)
        bonds[shell] = table

    up = np.stack([idx(xs, ys), idx(xs + 1, ys), idx(xs, ys + 1)], axis=1)
    down = np.stack([idx(xs + 1, ys), idx(xs, ys + 1), idx(xs + 1, ys + 1)], axis=1)

    t = idx(xs, ys)
    links = np.empty((3 * N, 2), dtype=np.int64)
    link_bond = np.empty((3 * N, 2), dtype=np.int64)
    links[0::3] = np.stack([t, N + idx(xs, ys - 1)], axis=1)
    links[1::3] = np.stack([t, N + idx(xs - 1, ys)], axis=1)
    links[2::3] = np.stack([t, N + idx(xs, ys)], axis=1)
    link_bond[0::3] = np.stack([idx(xs, ys), idx(xs + 1, ys)], axis=1)
    link_bond[1::3] = np.stack([idx(xs, ys), idx(xs, ys + 1)], axis=1)
    link_bond[2::3] = np.stack([idx(xs + 1, ys), idx(xs, ys + 1)], axis=1)

    return Lattice(Lx, Ly, coords, bonds, up, down, links, link_bond)


@dataclass(frozen=True)
class MomentumGrid:
    """Allowed momenta q = (m/Lx) g1 + (n/Ly) g2 of the periodic lattice."""

    Lx: int
    Ly: int

    @cached_property
    def mn(self) -> np.ndarray:
        m, n = np.meshgrid(np.arange(self.Lx), np.arange(self.Ly))
        return np.stack([m.ravel(), n.ravel()], axis=1)

    @cached_property
    def cartesian(self) -> np.ndarray:
        mn = self.mn
        return np.outer(mn[:, 0] / self.Lx, G1) + np.outer(mn[:, 1] / self.Ly, G2)

    def __len__(self) -> int:
        return self.Lx * self.Ly

    def index_of(self, q) -> int | None:
        """Grid index of a Cartesian momentum, or None if it is off the grid."""
        q = np.asarray(q, dtype=float)
        frac = np.array([q @ A1, q @ A2]) / (2 * np.pi)
        m, n = frac[0] * self.Lx, frac[1] * self.Ly
        if abs(m - round(m)) > 1e-9 or abs(n - round(n)) > 1e-9:
            return None
        return int(round(m)) % self.Lx + self.Lx * (int(round(n)) % self.Ly)

    def negate(self, index: int) -> int:
        m, n = self.mn[index]
        return (-m) % self.Lx + self.Lx * ((-n) % self.Ly)

    def wrap(self, q) -> np.ndarray:
        """Fold a Cartesian momentum into the first Brillouin zone."""
        q = np.asarray(q, dtype=float)
        best = q
        for i in range(-2, 3):
            for j in range(-2, 3):
                cand = q + i * G1 + j * G2
                if cand @ cand < best @ best - 1e-12:
                    best = cand
        return best

    def distance(self, q1, q2) -> float:
        """Distance between two momenta modulo reciprocal lattice vectors."""
        return float(np.linalg.norm(self.wrap(np.asarray(q1) - np.asarray(q2))))

    @property
    def spacing(self) -> float:
        return float(min(np.linalg.norm(G1) / self.Lx, np.linalg.norm(G2) / self.Ly))
