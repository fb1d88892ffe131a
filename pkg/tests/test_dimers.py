import numpy as np
import pytest
from scipy.stats import chisquare

from rydgauge import dimers, gauge
from rydgauge.lattice import build_lattice


@pytest.mark.parametrize("shape,count", [((3, 3), 42), ((4, 3), 113), ((4, 4), 417), ((6, 3), 860)])
def test_enumeration_matches_permanent(shape, count):
    lat = build_lattice(*shape)
    covers = dimers.enumerate_covers(lat)
    assert len(covers) == count
    assert dimers.permanent(dimers.biadjacency(lat)) == count
    assert len({c.tobytes() for c in covers}) == count


def test_permanent_small_matrices():
    assert dimers.permanent([[1, 2], [3, 4]]) == 10
    assert dimers.permanent(np.ones((4, 4), dtype=int)) == 24


def test_sectors_at_L3():
    lat = build_lattice(3)
    by = dimers.covers_by_sector(dimers.enumerate_covers(lat), lat)
    assert sum(len(v) for v in by.values()) == 42
    assert len(by[(0, 0)]) == 21
    for (fx, fy) in by:
        assert fx % 3 == 0 and fy % 3 == 0
        assert -1 <= fx / 3 <= 2


@pytest.mark.parametrize("policy", ["fixed", "free"])
def test_worm_preserves_matching(policy):
    lat = build_lattice(6)
    s = dimers.DimerSampler(lat, policy=policy, seed=3)
    start = s.fluxes()
    smp = s.sample(200, sweeps_between=1, n_therm=5)
    for cover, fl in zip(smp.covers, smp.fluxes):
        touches = np.bincount(lat.dual_links[cover].ravel(), minlength=lat.n_dual)
        assert np.all(touches == 1)
        w = gauge.winding_flux(gauge.field_from_cover(cover), lat)
        assert (w.Fx, w.Fy) == tuple(fl)
        if policy == "fixed":
            assert tuple(fl) == start
        else:
            assert (fl[0] - start[0]) % 3 == 0 and (fl[1] - start[1]) % 3 == 0
    if policy == "free":
        assert len({tuple(f) for f in smp.fluxes}) > 1


def test_rejects_non_matching_start():
    lat = build_lattice(3)
    with pytest.raises(ValueError):
        dimers.DimerSampler(lat, cover=np.zeros(27, dtype=bool))
    with pytest.raises(ValueError):
        dimers.DimerSampler(lat, policy="other")


def _chi2_uniform(lat, policy, cover, n, between, seed):
    covers = dimers.enumerate_covers(lat)
    if policy == "fixed":
        covers = dimers.covers_by_sector(covers, lat)[tuple(
            gauge.winding_flux(gauge.field_from_cover(cover), lat).__dict__[k] for k in ("Fx", "Fy"))]
    index = {c.tobytes(): i for i, c in enumerate(covers)}
    smp = dimers.DimerSampler(lat, cover=cover, policy=policy, seed=seed).sample(n, between, 50)
    counts = np.bincount([index[c.tobytes()] for c in smp.covers], minlength=len(covers))
    return chisquare(counts).pvalue


@pytest.mark.parametrize("policy", ["fixed", "free"])
def test_uniform_over_matchings(policy):
    lat = build_lattice(3)
    cover = gauge.frustrated_bonds(gauge.clock_config(lat), lat)
    p = _chi2_uniform(lat, policy, cover, 8000, 20, seed=11)
    assert p > 2.7e-3  # 3 sigma


def test_uniform_in_largest_sector_4x4():
    lat = build_lattice(4)
    by = dimers.covers_by_sector(dimers.enumerate_covers(lat), lat)
    key = max(by, key=lambda k: len(by[k]))
    p = _chi2_uniform(lat, "fixed", by[key][0], 8000, 20, seed=5)
    assert p > 2.7e-3


def test_rk_correlators_shape_and_positivity():
    lat = build_lattice(12)
    tab = dimers.rk_correlator_run(lat, n_bins=4, samples_per_bin=50, n_therm=20, seed=1)
    assert tab.C_R[0] > 0 and tab.C_E[0] > 0
    assert tab.C_E.shape == (12,) and np.all(np.isfinite(tab.C_E_err))
    assert tab.C_E_bins.shape == (4, 12)


def test_cover_correlators_match_spin_correlators():
    lat = build_lattice(6)
    cfg = gauge.sector_config(lat, 1)
    cover = gauge.frustrated_bonds(cfg, lat)
    ce1, cr1 = dimers.cover_correlators(cover[None], lat)
    ce2, cr2 = gauge.correlators(cfg[None], lat)
    np.testing.assert_allclose(ce1, ce2)
    np.testing.assert_allclose(cr1, cr2)


def test_sampler_deterministic():
    lat = build_lattice(6)
    a = dimers.DimerSampler(lat, seed=9).sample(20)
    b = dimers.DimerSampler(lat, seed=9).sample(20)
    np.testing.assert_array_equal(a.covers, b.covers)
