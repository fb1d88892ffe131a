"""Post-processing: sector-energy crossings, power-law and dispersion fits, order-parameter histograms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

# Reference values used as cross-checks (Rydberg-model units unless noted).
MULTICRITICAL_RATIOS = {"U2/Omega": (0.547, 0.005), "U3/Omega": (0.215, 0.003)}
MULTICRITICAL_U1_UNITS = {"J2": (0.1093, 0.0011), "J3": (0.0429, 0.0007)}
CURVATURE_REFERENCE = {
    "rydberg": {"resonon": (0.080, 0.003), "pi0n": (0.057, 0.004), "pi0n_star": (0.095, 0.002)},
    "rk_qdm": {"resonon": (0.61, 0.03), "pi0n": (0.36, 0.04), "pi0n_star": (0.78, 0.08)},
}


def omega_over_u1(u2_over_omega=0.547, j2=0.1093) -> float:
    """Omega/U1 implied by the same point quoted in both unit systems (about 0.2)."""
    return j2 / u2_over_omega


def to_u1_units(u2_over_omega, u3_over_omega, omega_over_u1_ratio):
    return u2_over_omega * omega_over_u1_ratio, u3_over_omega * omega_over_u1_ratio


# ---------------------------------------------------------------------------
# multicritical point


@dataclass
class SectorEnergyScan:
    """Sector energies at parameter points (u2, u3) for one lattice size.

    ``energies`` maps a flux label (e.g. "0", "2", "2-6/L") to an array of
    energies per site aligned with ``points``; ``errors`` likewise.
    """

    L: int
    points: np.ndarray  # (n, 2): (U2/Omega, U3/Omega)
    energies: dict
    errors: dict = field(default_factory=dict)


@dataclass
class MulticriticalEstimate:
    u2: float
    u3: float
    per_size: dict  # L -> (u2, u3)


def _plane(points, values):
    X = np.column_stack([np.ones(len(points)), points])
    coef, *_ = np.linalg.lstsq(X, values, rcond=None)
    return coef


def crossing_point(scan: SectorEnergyScan, clock="0", stripe="2", intermediate=None):
    """Point where E(clock) = E(stripe) = E(intermediate), from planar fits of the differences."""
    if intermediate is None:
        intermediate = next(k for k in scan.energies if k not in (clock, stripe))
    pts = np.asarray(scan.points, dtype=float)
    if len(pts) < 3:
        raise ValueError("need at least three parameter points to fit the crossing planes")
    d1 = np.asarray(scan.energies[stripe]) - np.asarray(scan.energies[clock])
    d2 = np.asarray(scan.energies[intermediate]) - np.asarray(scan.energies[stripe])
    c1, c2 = _plane(pts, d1), _plane(pts, d2)
    A = np.array([c1[1:], c2[1:]])
    if abs(np.linalg.det(A)) < 1e-14:
        raise ValueError("crossing lines are parallel")
    u = np.linalg.solve(A, -np.array([c1[0], c2[0]]))
    lo, hi = pts.min(0), pts.max(0)
    span = hi - lo
    if np.any(u < lo - span) or np.any(u > hi + span):
        raise ValueError(f"no crossing in range: solution {u} lies far outside the scanned window")
    return float(u[0]), float(u[1])


def locate_multicritical(scans, **labels) -> MulticriticalEstimate:
    """Per-size crossings, extrapolated linearly in 1/L."""
    if len(scans) < 2:
        raise ValueError("need at least two system sizes")
    per = {s.L: crossing_point(s, **labels) for s in scans}
    Ls = np.array(sorted(per))
    u = np.array([per[L] for L in Ls])
    X = np.column_stack([np.ones(len(Ls)), 1.0 / Ls])
    coef, *_ = np.linalg.lstsq(X, u, rcond=None)
    return MulticriticalEstimate(float(coef[0, 0]), float(coef[0, 1]), per)


# ---------------------------------------------------------------------------
# power laws


@dataclass
class PowerLawFit:
    exponent: float
    error: float
    amplitude: float
    window: tuple
    oscillating: bool = False


def _window(r, L, window):
    lo, hi = window if window is not None else (2, L // 4)
    m = (r >= lo) & (r <= hi)
    if m.sum() < 4:
        raise ValueError(f"fewer than four distances in the fit window [{lo}, {hi}]")
    return m, (lo, hi)


def _loglog(r, C, err):
    y = np.log(C)
    w = (C / err) ** 2 if err is not None else np.ones_like(C)
    X = np.column_stack([np.ones_like(r), np.log(r)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return -coef[1], np.exp(coef[0])


def _modulated(r, C, err, period):
    """Exponent p of r^-p (B + A cos(2 pi r / period) + A' sin(2 pi r / period))."""
    w = 1.0 / err if err is not None else np.ones_like(C)

    def cost(p):
        X = np.column_stack([np.ones_like(r), np.cos(2 * np.pi * r / period),
                             np.sin(2 * np.pi * r / period)]) * r[:, None] ** (-p)
        coef, *_ = np.linalg.lstsq(X * w[:, None], C * w, rcond=None)
        return np.sum(((X @ coef - C) * w) ** 2), coef

    res = minimize_scalar(lambda p: cost(p)[0], bounds=(0.05, 6.0), method="bounded",
                          options={"xatol": 1e-10})
    return res.x, float(np.hypot(*cost(res.x)[1][:2]))


def fit_power_law(r, C, L, err=None, bins=None, window=None, period=None) -> PowerLawFit:
    """Exponent of C(r) ~ r^-p on the window (default [2, L/4]).

    Without ``period`` this is weighted least squares of log C against log r.
    With ``period`` the data may change sign and are fitted by a power law
    times a constant-plus-harmonic modulation of that period.  ``bins`` (per
    bin correlators, shape (n_bins, len(r))) gives a jackknife error.
    """
    r = np.asarray(r, dtype=float)
    C = np.asarray(C, dtype=float)
    m, win = _window(r, L, window)
    e = None if err is None else np.asarray(err, dtype=float)[m]
    if e is not None and np.any(e <= 0):
        e = None

    def fit(Cm):
        if period is None:
            if np.any(Cm <= 0):
                raise ValueError("log-log fit needs positive correlations; pass period for oscillating data")
            return _loglog(r[m], Cm, e)
        return _modulated(r[m], Cm, e, period)

    p, amp = fit(C[m])
    error = float("nan")
    if bins is not None:
        bins = np.asarray(bins, dtype=float)
        nb = len(bins)
        loo = (bins.sum(0) - bins) / (nb - 1)
        ps = np.array([fit(row[m])[0] for row in loo])
        error = float(np.sqrt((nb - 1) / nb * np.sum((ps - ps.mean()) ** 2)))
    return PowerLawFit(float(p), error, float(amp), win, period is not None)


# ---------------------------------------------------------------------------
# dispersion


@dataclass
class DispersionFit:
    q0: np.ndarray
    C2: float
    radius: float
    residual: float


def fit_curvature(q, omega, q0, radius=None) -> DispersionFit:
    """Least-squares C2 in omega = C2 |q - q0|^2 / 2 over momenta within ``radius`` of q0."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[0] == 1 and q.shape[1] != 2:
        q = q.T
    omega = np.asarray(omega, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    d2 = np.sum((q - q0) ** 2, axis=1) if q.shape[1] == 2 else (q[:, 0] - q0) ** 2
    if radius is not None:
        m = d2 <= radius**2
        d2, omega = d2[m], omega[m]
    if len(d2) < 3:
        raise ValueError("need at least three momenta in the fit window")
    x = 0.5 * d2
    C2 = float(x @ omega / (x @ x))
    res = float(np.sqrt(np.mean((C2 * x - omega) ** 2)))
    return DispersionFit(q0, C2, float(np.sqrt(d2.max())) if radius is None else radius, res)


# ---------------------------------------------------------------------------
# order-parameter histogram


@dataclass
class OrderParameterHistogram:
    density: np.ndarray  # (n, n) over Re, Im
    edges: np.ndarray
    anisotropy: float
    mean_abs: float
    angular: np.ndarray  # weighted angular distribution
    n_angular_maxima: int
    ring: bool


def z6_anisotropy(psi) -> float:
    psi = np.asarray(psi)
    a = np.abs(psi)
    if a.sum() == 0:
        return 0.0
    return float(np.abs(np.sum(a * np.exp(6j * np.angle(psi)))) / a.sum())


def symmetrize_order_parameter(psi) -> np.ndarray:
    """Images of every sample under the exact six-fold group of psi_R.

    A lattice translation multiplies psi_R by exp(2 pi i / 3) and the global
    flip at half filling by -1; together they generate rotations by pi / 3.
    """
    psi = np.asarray(psi).ravel()
    return (psi[None, :] * np.exp(1j * np.pi * np.arange(6) / 3)[:, None]).ravel()


def histogram_order_parameter(psi, n_bins: int = 41, n_angle: int = 72,
                              min_samples: int = 10_000,
                              symmetrize: bool = False) -> OrderParameterHistogram:
    """Complex-plane histogram of psi_R samples with its Z6 anisotropy.

    With ``symmetrize`` the samples are first averaged over the six-fold
    symmetry group, which restores the weight of symmetry-related states that
    a single finite run may not have tunnelled between.  The anisotropy is
    invariant under this operation.
    """
    psi = np.asarray(psi).ravel()
    if len(psi) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(psi)}")
    if symmetrize:
        psi = symmetrize_order_parameter(psi)
    rmax = max(np.abs(psi).max(), 1e-12)
    edges = np.linspace(-rmax, rmax, n_bins + 1)
    H, _, _ = np.histogram2d(psi.real, psi.imag, bins=[edges, edges], density=True)
    theta = np.angle(psi)
    ang, _ = np.histogram(theta, bins=n_angle, range=(-np.pi, np.pi), weights=np.abs(psi))
    # circular smoothing over neighbouring bins
    sm = (np.roll(ang, 1) + 2 * ang + np.roll(ang, -1)) / 4
    ext = np.concatenate([sm[-3:], sm, sm[:3]])
    peaks, _ = find_peaks(ext, prominence=0.1 * sm.max())
    n_max = int(np.sum((peaks >= 3) & (peaks < 3 + n_angle)))
    radii = np.abs(psi)
    rh, redges = np.histogram(radii, bins=30, range=(0, rmax))
    rc = 0.5 * (redges[1:] + redges[:-1])
    density_2d = rh / np.maximum(rc, 1e-12)
    ring = bool(np.argmax(density_2d) > 2 and z6_anisotropy(psi) < 0.2)
    return OrderParameterHistogram(H, edges, z6_anisotropy(psi), float(radii.mean()), sm,
                                   n_max, ring)
