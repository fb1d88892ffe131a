from fractions import Fraction

import numpy as np
import pytest

from rydgauge import ed, gauge
from rydgauge.lattice import HIGH_SYMMETRY, build_lattice
from rydgauge.model import CouplingTable, ModelParams, classical_energy, coupling_table
from rydgauge.sse import BinnedSeries, SSEChain, SSEConfig, run, tau_grid

LAT3 = build_lattice(3)
FREE = CouplingTable((1e-12, 0.0, 0.0), 1.0)


def free_spin(beta, omega=1.0):
    return -0.5 * omega * np.tanh(beta * omega / 2), 0.5 * np.tanh(beta * omega / 2)


def test_binned_error_formula():
    b = np.array([1.0, 2.0, 4.0, 7.0])
    s = BinnedSeries(b)
    assert s.error == pytest.approx(np.sqrt((np.mean(b**2) - np.mean(b) ** 2) / 3))
    assert BinnedSeries(np.r_[np.zeros(10), np.ones(10)] + 1e-3 * np.arange(20)).equilibrated is False


def test_config_validation():
    with pytest.raises(ValueError):
        SSEConfig(beta=1.0, n_meas=101, n_bins=10)
    with pytest.raises(ValueError):
        SSEConfig(beta=0.0)


def test_tau_grid():
    t = tau_grid(8.0, 50)
    assert len(t) == 50 and t[0] == 0 and t[-1] == pytest.approx(4.0)
    assert np.all(np.diff(np.diff(t)) > 0)


@pytest.mark.parametrize("beta", [0.5, 3.0])
def test_free_spins(beta):
    res = run(SSEChain(LAT3, FREE, SSEConfig(beta=beta, n_therm=200, n_meas=20000, n_bins=20, seed=4)))
    e, sx = free_spin(beta)
    for name, exact in (("energy_per_site", e), ("sx", sx)):
        s = res.series[name]
        assert abs(s.mean - exact) < 3.5 * s.error, (name, s.mean, exact, s.error)


def test_error_bars_cover_truth():
    beta = 1.0
    e, _ = free_spin(beta)
    inside = 0
    seeds = range(40)
    for seed in seeds:
        res = run(SSEChain(LAT3, FREE, SSEConfig(beta=beta, n_therm=50, n_meas=2000, n_bins=10, seed=seed)))
        s = res.series["energy_per_site"]
        inside += abs(s.mean - e) <= s.error
    # 68% coverage; 3 sigma binomial band for 40 trials is about 17..37
    assert 17 <= inside <= 37


def test_classical_limit_zero_variance():
    tbl = CouplingTable((1.0, 0.1, 0.05), 0.0)
    ch = SSEChain(LAT3, tbl, SSEConfig(beta=4.0, n_therm=50, seed=1))
    ch.thermalize()
    snaps, n_rec, noff, _ = ch.record(500)
    assert np.all(noff == 0)
    e = ch.energy_samples(snaps, n_rec)
    np.testing.assert_array_equal(e, classical_energy(snaps, tbl, LAT3))
    assert np.all(np.isin(ch.opstr[ch.opstr >= 0] % 2, [0, 1]))
    # only diagonal operators: no site-flip entries
    site_ops = ch.opstr[(ch.opstr >= 0) & (ch.opstr < 2 * LAT3.n_sites)]
    assert np.all(site_ops % 2 == 0)


def test_deterministic():
    tbl = CouplingTable((1.0, 0.2, 0.1), 0.5)
    cfg = SSEConfig(beta=2.0, n_therm=50, n_meas=400, n_bins=4, seed=99)
    a = run(SSEChain(LAT3, tbl, cfg))
    b = run(SSEChain(LAT3, tbl, cfg))
    for k in a.series:
        np.testing.assert_array_equal(np.asarray(a.series[k].bins), np.asarray(b.series[k].bins))


def test_checkpoint_resume_bit_exact(tmp_path):
    tbl = CouplingTable((1.0, 0.2, 0.1), 0.5)
    cfg = SSEConfig(beta=2.0, n_therm=20, seed=7)
    a = SSEChain(LAT3, tbl, cfg)
    a.thermalize()
    a.sweep(30)
    a.checkpoint(tmp_path / "c.npz")
    ra = a.record(40)
    b = SSEChain(LAT3, tbl, SSEConfig(beta=2.0, n_therm=20, seed=123))
    b.restore(tmp_path / "c.npz")
    rb = b.record(40)
    for x, y in zip(ra, rb):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ValueError):
        SSEChain(build_lattice(4, 3), tbl, cfg).restore(tmp_path / "c.npz")


def test_order_distribution_matches_exact():
    tbl = CouplingTable((1.0, 0.547, 0.215), 1.0)
    beta = 1.0
    ch = SSEChain(LAT3, tbl, SSEConfig(beta=beta, n_therm=500, seed=3))
    ch.thermalize()
    _, n_rec, _, _ = ch.record(60000)
    p = ed.sse_order_distribution(ed.build_and_solve(tbl, LAT3), beta, ch.constant, 400)
    n = np.arange(401)
    mean, var = (n * p).sum(), (n * n * p).sum() - (n * p).sum() ** 2
    blocks = n_rec.reshape(60, -1)
    err = blocks.mean(1).std(ddof=1) / np.sqrt(60)
    assert abs(n_rec.mean() - mean) < 4 * err
    assert n_rec.var() == pytest.approx(var, rel=0.05)
    # a few histogram bins around the mode
    emp = np.bincount(n_rec, minlength=401)[:401] / len(n_rec)
    mode = int(np.argmax(p))
    np.testing.assert_allclose(emp[mode - 3:mode + 4], p[mode - 3:mode + 4], atol=0.01)


def test_z2_symmetry_of_unconstrained_run():
    tbl = CouplingTable((1.0, 0.547, 0.215), 1.0)
    res = run(SSEChain(LAT3, tbl, SSEConfig(beta=2.0, n_therm=200, n_meas=20000, n_bins=20, seed=8)))
    m = res.series["magnetization"]
    assert abs(m.mean) < 3.5 * m.error


def test_sector_run_conserves_flux():
    lat = build_lattice(6)
    tbl = coupling_table(ModelParams.multicritical(0.2))
    for f in (0, 1, 2):
        ch = SSEChain(lat, tbl, SSEConfig(beta=36.0, n_therm=100, n_meas=400, n_bins=4, seed=2, sector=f))
        res = run(ch)
        fx = np.asarray(res.series["flux_x"].bins)
        np.testing.assert_array_equal(fx, 6 * f)
    with pytest.raises(ValueError):
        SSEChain(lat, tbl, SSEConfig(beta=1.0, sector=Fraction(3, 2)))


def test_imaginary_time_symmetry_and_classical_limit():
    tbl = CouplingTable((1.0, 0.3, 0.1), 1.0)
    beta = 4.0
    ch = SSEChain(LAT3, tbl, SSEConfig(beta=beta, n_therm=200, seed=5))
    ch.thermalize()
    q = np.array([HIGH_SYMMETRY["K"], [1.0, 0.3]])
    tau = np.array([0.3, 1.1, beta - 1.1, beta - 0.3])
    for _ in range(5):
        ch.sweep()
        g = ch.imaginary_time(q, tau)
        for k in g:
            np.testing.assert_allclose(g[k][:, 0], g[k][:, 3], rtol=1e-10)
            np.testing.assert_allclose(g[k][:, 1], g[k][:, 2], rtol=1e-10)
    cl = SSEChain(LAT3, CouplingTable((1.0, 0.3, 0.1), 0.0), SSEConfig(beta=beta, n_therm=50, seed=5))
    cl.thermalize()
    g = cl.imaginary_time(q, tau_grid(beta, 10))
    for k in g:
        np.testing.assert_allclose(g[k], g[k][:, :1] * np.ones(10), rtol=1e-10)


def test_equal_time_limit_matches_structure_factor():
    tbl = CouplingTable((1.0, 0.547, 0.215), 1.0)
    cfg = SSEConfig(beta=2.0, n_therm=200, n_meas=20000, n_bins=20, seed=6, tau_every=5,
                    tau_points=10, tau_momenta=(tuple(HIGH_SYMMETRY["K"]),))
    res = run(SSEChain(LAT3, tbl, cfg))
    g0 = res.imag_time.bins["density"][:, 0, 0]
    sk = res.series["S_K"]
    err = np.hypot(g0.std(ddof=1) / np.sqrt(len(g0)), sk.error)
    assert abs(g0.mean() - sk.mean) < 4 * err
    cov = res.imag_time.covariance("density", 0)
    assert np.allclose(cov, cov.T) and np.all(np.linalg.eigvalsh(cov) > -1e-12)


def test_constraint_regime_has_few_violations():
    lat = build_lattice(6)
    tbl = coupling_table(ModelParams.from_ratios(0.1, 0.0, 0.0))
    res = run(SSEChain(lat, tbl, SSEConfig(beta=36.0, n_therm=300, n_meas=2000, n_bins=10, seed=1)))
    assert res.series["violation_fraction"].mean < 0.05


@pytest.mark.slow
def test_clock_phase_structure_factor_converges():
    lat = build_lattice(12)
    tbl = coupling_table(ModelParams.from_ratios(0.2, 0.02, 0.2))
    # the clock state orders slowly at beta = 144; short thermalisation leaves a drift in the bins
    cfg = SSEConfig(beta=144.0, n_therm=20000, n_meas=20000, n_bins=20, seed=3)
    assert cfg.n_therm + cfg.n_meas < 10**6
    res = run(SSEChain(lat, tbl, cfg))
    s = res.series["S_K"]
    assert s.error / s.mean < 0.05
