"""Stochastic analytic continuation with equal-amplitude delta functions.

The spectrum is a set of ``n_delta`` delta functions of equal amplitude at
positive frequencies.  Imaginary-time data are modelled as

    G(tau) = sum_i a K(tau, omega_i),
    K(tau, omega) = (exp(-tau omega) + exp(-(beta - tau) omega)) / (pi (1 + exp(-beta omega))),

so that the total amplitude is fixed by ``n_delta * a = pi G(0)``.  Goodness of
fit is chi^2 in the eigenbasis of the data covariance; configurations are
sampled with weight exp(-chi^2 / (2 Theta)) at a sampling temperature Theta
that is annealed downwards and finally fixed by

    <chi^2>(Theta*) = chi^2_min + a_crit sqrt(2 chi^2_min).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np


@dataclass
class SacInput:
    tau: np.ndarray
    G: np.ndarray
    cov: np.ndarray
    beta: float

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if np.any(self.tau < 0) or np.any(self.tau > self.beta):
            raise ValueError("tau must lie in [0, beta]")
        if self.G[0] <= 0:
            raise ValueError("G(0) must be positive")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")


@dataclass
class SacConfig:
    n_delta: int = 500
    omega_max: float | None = None  # None: ten times the decay-rate guess
    n_grid: int = 20000
    theta_start: float = 1e3
    theta_factor: float = 0.8
    n_theta: int = 60
    sweeps_per_theta: int = 200
    final_sweeps: int = 2000
    a_crit: float = 0.5
    eigen_floor: float = 1e-12
    n_hist: int = 400
    seed: int | None = None


@dataclass
class Spectrum:
    omega: np.ndarray  # histogram bin centres
    B: np.ndarray  # spectral density of the delta positions, integrates to pi G(0)
    beta: float
    positions: np.ndarray = field(repr=False)  # final delta positions
    amplitude: float = 0.0
    theta: float = 0.0
    chi2_min: float = 0.0
    chi2: float = 0.0
    anneal: np.ndarray | None = field(default=None, repr=False)  # (Theta, <chi2>) rows
    converged: bool = True
    n_tau: int = 0  # data points entering chi^2

    @property
    def fit_quality(self) -> float:
        """<chi^2> per data point at Theta*; values above 2 call for a longer anneal."""
        return self.chi2 / self.n_tau if self.n_tau else float("nan")

    @property
    def S(self) -> np.ndarray:
        return self.B / (1 + np.exp(-self.beta * self.omega))

    def peak(self, method: str = "mode", window=None) -> float:
        """Peak frequency: the maximum of S(omega) or its first moment."""
        w, s = self.omega, self.S
        if window is not None:
            m = (w >= window[0]) & (w <= window[1])
            w, s = w[m], s[m]
        if method == "mode":
            k = int(np.argmax(s))
            if 0 < k < len(s) - 1:
                # parabolic refinement through the three highest bins
                y0, y1, y2 = s[k - 1], s[k], s[k + 1]
                den = y0 - 2 * y1 + y2
                shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
                return float(w[k] + shift * (w[1] - w[0]))
            return float(w[k])
        if method == "moment":
            return float(np.sum(w * s) / np.sum(s))
        raise ValueError(f"unknown peak method {method!r}")


def kernel(tau, omega, beta):
    tau = np.asarray(tau, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("frequencies must be non-negative")
    return (np.exp(-tau * omega) + np.exp(-(beta - tau) * omega)) / (np.pi * (1 + np.exp(-beta * omega)))


def _whitening(cov, floor):
    w, U = np.linalg.eigh(cov)
    w = np.maximum(w, floor * w.max())
    return U, np.sqrt(w)


def chi2(positions, amplitude, data: SacInput, floor: float = 1e-12) -> float:
    """Residual quadratic form of a delta-function spectrum against the data (tau = 0 excluded)."""
    sel = data.tau > 0
    U, sig = _whitening(data.cov[np.ix_(sel, sel)], floor)
    model = amplitude * kernel(data.tau[sel, None], np.asarray(positions)[None, :], data.beta).sum(1)
    r = (U.T @ (model - data.G[sel])) / sig
    return float(r @ r)


@numba.njit(cache=True)
def _mc(idx, resid, Kp, amp, theta, n_sweeps, step, n_grid, rng, hist, hist_every):
    """Metropolis sweeps at fixed Theta; returns (<chi2>, min chi2, acceptance)."""
    nd = idx.shape[0]
    nt = resid.shape[0]
    c2 = 0.0
    for k in range(nt):
        c2 += resid[k] ** 2
    acc = 0
    tries = 0
    mean_c2 = 0.0
    min_c2 = c2
    new = np.empty(nt)
    for sweep in range(n_sweeps):
        for _ in range(nd):
            tries += 1
            if rng.random() < 0.5:
                i = rng.integers(0, nd)
                d = int(np.round(rng.normal() * step))
                j = idx[i] + d
                if d == 0 or j < 0 or j >= n_grid:
                    continue
                nc2 = 0.0
                for k in range(nt):
                    new[k] = resid[k] + amp * (Kp[k, j] - Kp[k, idx[i]])
                    nc2 += new[k] ** 2
                if nc2 <= c2 or rng.random() < np.exp((c2 - nc2) / (2 * theta)):
                    idx[i] = j
                    resid[:] = new
                    c2 = nc2
                    acc += 1
            else:
                i = rng.integers(0, nd)
                i2 = rng.integers(0, nd)
                if i == i2:
                    continue
                d = int(np.round(rng.normal() * step))
                j = idx[i] + d
                j2 = idx[i2] - d
                if d == 0 or j < 0 or j >= n_grid or j2 < 0 or j2 >= n_grid:
                    continue
                nc2 = 0.0
                for k in range(nt):
                    new[k] = resid[k] + amp * (Kp[k, j] - Kp[k, idx[i]] + Kp[k, j2] - Kp[k, idx[i2]])
                    nc2 += new[k] ** 2
                if nc2 <= c2 or rng.random() < np.exp((c2 - nc2) / (2 * theta)):
                    idx[i] = j
                    idx[i2] = j2
                    resid[:] = new
                    c2 = nc2
                    acc += 1
        mean_c2 += c2
        if c2 < min_c2:
            min_c2 = c2
        if hist_every > 0 and sweep % hist_every == 0:
            for i in range(nd):
                hist[idx[i]] += 1
    return mean_c2 / max(n_sweeps, 1), min_c2, acc / max(tries, 1)


def decay_rate_guess(data: SacInput) -> float:
    """-d ln G / d tau from the first two positive-G points."""
    g = data.G
    k = 1
    while k < len(g) - 1 and g[k] <= 0:
        k += 1
    if g[k] <= 0 or data.tau[k] == data.tau[0]:
        return 1.0
    rate = -np.log(g[k] / g[0]) / (data.tau[k] - data.tau[0])
    return float(max(rate, 1.0 / data.beta))


def sample(data: SacInput, cfg: SacConfig = SacConfig()) -> Spectrum:
    rng = np.random.default_rng(cfg.seed)
    omega_max = cfg.omega_max or 10 * decay_rate_guess(data)
    grid = (np.arange(cfg.n_grid) + 0.5) * omega_max / cfg.n_grid
    sel = data.tau > 0
    U, sig = _whitening(data.cov[np.ix_(sel, sel)], cfg.eigen_floor)
    Kp = np.ascontiguousarray((U.T @ kernel(data.tau[sel, None], grid[None, :], data.beta)) / sig[:, None])
    target = (U.T @ data.G[sel]) / sig
    amp = np.pi * data.G[0] / cfg.n_delta
    idx = rng.integers(0, cfg.n_grid, cfg.n_delta).astype(np.int64)
    resid = amp * Kp[:, idx].sum(axis=1) - target
    step = cfg.n_grid / 10
    theta = cfg.theta_start
    history = []
    saved = []
    dummy = np.zeros(1, dtype=np.int64)
    chi2_min = np.inf
    for _ in range(cfg.n_theta):
        for _ in range(3):
            m, mn, acc = _mc(idx, resid, Kp, amp, theta, max(cfg.sweeps_per_theta // 10, 1),
                             step, cfg.n_grid, rng, dummy, 0)
            # keep the acceptance rate near one half
            step = float(np.clip(step * (1.5 if acc > 0.5 else 0.7), 1, cfg.n_grid / 2))
        m, mn, acc = _mc(idx, resid, Kp, amp, theta, cfg.sweeps_per_theta, step, cfg.n_grid,
                         rng, dummy, 0)
        chi2_min = min(chi2_min, mn)
        history.append((theta, m, step))
        saved.append((idx.copy(), resid.copy(), step))
        theta *= cfg.theta_factor
    hist_arr = np.array(history)
    threshold = chi2_min + cfg.a_crit * np.sqrt(2 * max(chi2_min, 0.0))
    ok = np.flatnonzero(hist_arr[:, 1] <= threshold)
    k = int(ok[0]) if len(ok) else len(history) - 1
    last = hist_arr[-5:, 1]
    converged = bool(len(ok)) and bool(np.ptp(last) <= 0.1 * max(last.mean(), 1.0))
    theta_star = hist_arr[k, 0]
    idx, resid, step = saved[k]
    idx = idx.copy()
    resid = resid.copy()
    counts = np.zeros(cfg.n_grid, dtype=np.int64)
    m, _, _ = _mc(idx, resid, Kp, amp, theta_star, cfg.final_sweeps, step, cfg.n_grid, rng,
                  counts, 1)
    edges = np.linspace(0, omega_max, cfg.n_hist + 1)
    coarse = np.add.reduceat(counts, (np.arange(cfg.n_hist) * cfg.n_grid) // cfg.n_hist)
    width = edges[1] - edges[0]
    B = coarse / max(coarse.sum(), 1) * np.pi * data.G[0] / width
    return Spectrum(0.5 * (edges[1:] + edges[:-1]), B, data.beta, grid[idx], amp,
                    float(theta_star), float(chi2_min), float(m), hist_arr[:, :2], converged,
                    int(sel.sum()))


def synthetic_input(omegas, weights, beta, tau=None, noise: float = 1e-5, n_tau: int = 50,
                    seed=None) -> SacInput:
    """Imaginary-time data of a delta-function spectrum with relative Gaussian noise."""
    if tau is None:
        tau = 0.5 * beta * (np.arange(n_tau) / (n_tau - 1)) ** 2
    omegas = np.asarray(omegas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    G = (weights[None, :] * kernel(np.asarray(tau)[:, None], omegas[None, :], beta)).sum(1)
    sigma = noise * np.abs(G)
    rng = np.random.default_rng(seed)
    Gn = G + sigma * rng.normal(size=G.shape)
    Gn[0] = G[0]
    return SacInput(tau, Gn, np.diag(np.maximum(sigma, 1e-300) ** 2), beta)
