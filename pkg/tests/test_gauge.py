from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rydgauge import gauge
from rydgauge.lattice import HIGH_SYMMETRY, build_lattice

LAT3 = build_lattice(3)
LAT6 = build_lattice(6)
LAT12 = build_lattice(12)


def all_configs(N):
    k = np.arange(2**N)
    return ((k[:, None] >> np.arange(N)) & 1).astype(np.int8)


def valid_configs(lat):
    cfgs = all_configs(lat.n_sites)
    ok = np.all(gauge.n_frustrated_per_triangle(cfgs, lat) == 1, axis=1)
    return cfgs[ok]


def direct_structure_factor(cfg, lat, q):
    """Naive double sum over site pairs."""
    s = np.asarray(cfg, float) - 0.5
    total = 0.0
    for i in range(lat.n_sites):
        for j in range(lat.n_sites):
            total += s[i] * s[j] * np.cos(q @ (lat.coords[i] - lat.coords[j]))
    return total / lat.n_sites


configs6 = arrays(np.int8, LAT6.n_sites, elements=st.integers(0, 1))


def test_field_values_on_a_triangle():
    cfg = np.zeros(9, dtype=int)
    cfg[LAT3.site(1, 0)] = 1
    E = gauge.electric_field(cfg, LAT3)
    l_frust = LAT3.dual_link_for_bond(LAT3.site(0, 0), LAT3.site(0, 1))
    l_free = LAT3.dual_link_for_bond(LAT3.site(0, 0), LAT3.site(1, 0))
    assert E[l_frust] == 2 and E[l_free] == -1
    assert set(np.unique(E)) <= {-1, 2}


@given(configs6)
def test_divergence_free_iff_triangle_rule(cfg):
    E = gauge.electric_field(cfg, LAT6)
    Q = gauge.divergence(E, LAT6)
    n_fr = gauge.n_frustrated_per_triangle(cfg, LAT6)
    # the charge on a triangle is 3 (n_frustrated - 1)
    np.testing.assert_array_equal(np.abs(Q), 3 * np.abs(n_fr - 1))
    if np.any(n_fr != 1):
        with pytest.raises(gauge.ConstraintViolation):
            gauge.dimer_cover(E, LAT6)


@pytest.mark.parametrize("L", [3, 6])
def test_valid_configs_give_perfect_matchings(L):
    lat = build_lattice(L)
    cfgs = [gauge.clock_config(lat), gauge.sector_config(lat, 0)]
    if L == 3:
        cfgs = valid_configs(lat)
    for cfg in cfgs:
        cover = gauge.dimer_cover(gauge.electric_field(cfg, lat), lat)
        touches = np.bincount(lat.dual_links[cover].ravel(), minlength=lat.n_dual)
        assert np.all(touches == 1)


def test_valid_config_count_at_L3():
    # 6 clock states plus 36 others; checked against brute force of the triangle rule
    assert len(valid_configs(LAT3)) == 42


def test_violation_fraction_examples():
    assert gauge.violation_fraction(gauge.clock_config(LAT6), LAT6) == 0
    assert gauge.violation_fraction(np.zeros(36, dtype=int), LAT6) == 1


def test_clock_and_stripe_sectors():
    for L in (6, 12):
        lat = build_lattice(L)
        assert gauge.winding_flux(gauge.electric_field(gauge.clock_config(lat), lat), lat).f == 0
        assert gauge.winding_flux(gauge.electric_field(gauge.stripe_config(lat), lat), lat).f == 2


def test_reachable_fluxes():
    fl = gauge.reachable_fluxes(12)
    assert Fraction(0) in fl and Fraction(2) in fl and Fraction(1, 2) in fl and Fraction(1) in fl
    assert Fraction(2) - Fraction(3, 12) not in fl
    assert min(fl) == -1 and max(fl) == 2
    assert all(((f * 12 + 12) % 3 == 0) for f in fl)


@pytest.mark.parametrize("L,f", [(6, 0), (6, 2), (6, 1), (6, -1), (12, 0), (12, Fraction(1, 2)),
                                 (12, 1), (12, 2), (12, Fraction(3, 2))])
def test_sector_config_round_trip(L, f):
    lat = build_lattice(L)
    cfg = gauge.sector_config(lat, f)
    assert gauge.violation_fraction(cfg, lat) == 0
    E = gauge.electric_field(cfg, lat)
    assert gauge.winding_flux(E, lat).f == f
    cover = gauge.dimer_cover(E, lat)
    back = gauge.spins_from_cover(cover, lat, reference=int(cfg[0]))
    np.testing.assert_array_equal(back, cfg)


def test_unreachable_sector_rejected():
    with pytest.raises(ValueError):
        gauge.sector_config(LAT12, Fraction(2) - Fraction(3, 12))


@pytest.mark.parametrize("f", [0, 1, 2])
def test_parallel_cuts_give_same_flux(f):
    lat = LAT6
    E = gauge.electric_field(gauge.sector_config(lat, f), lat)
    w0 = gauge.winding_flux(E, lat)
    for row in range(lat.Ly):
        for col in range(lat.Lx):
            w = gauge.winding_flux(E, lat, row, col)
            assert (w.Fx, w.Fy) == (w0.Fx, w0.Fy)


def test_flux_differences_are_multiples_of_three():
    vals = valid_configs(LAT3)
    F = np.array([[w.Fx, w.Fy] for w in
                  (gauge.winding_flux(gauge.electric_field(c, LAT3), LAT3) for c in vals)])
    assert np.all((F[:, None, :] - F[None, :, :]) % 3 == 0)


def test_height_field_steps():
    cfg = gauge.sector_config(LAT6, 1)
    cover = gauge.dimer_cover(gauge.electric_field(cfg, LAT6), LAT6)
    hf = gauge.height_field(cover, LAT6)
    for t, (a, b, c) in enumerate(LAT6.up_triangles):
        # clockwise around the up triangle: a -> c -> b -> a
        for i, j in ((a, c), (c, b), (b, a)):
            l = LAT6.dual_link_for_bond(i, j)
            step = -2 if cover[l] else 1
            d = hf.h[j] - hf.h[i]
            # wrapped pairs differ by a period offset, which is a multiple of the tilt
            if abs(d - step) > 0:
                assert (d - step) % 3 == 0
    # tilt of the height equals minus the flux along the cut for this convention
    w = gauge.winding_flux(gauge.field_from_cover(cover), LAT6)
    assert abs(hf.Hx) == abs(w.Fx)


def test_height_field_rejects_non_matching():
    bad = np.zeros(3 * LAT6.n_sites, dtype=bool)
    bad[:3] = True
    with pytest.raises(gauge.ConstraintViolation):
        gauge.height_field(bad, LAT6)


def test_spins_from_cover_is_two_to_one():
    vals = valid_configs(LAT3)
    covers = gauge.frustrated_bonds(vals, LAT3)
    keys = {c.tobytes() for c in covers}
    assert len(keys) == len(vals) // 2
    for cfg, cov in zip(vals, covers):
        back = gauge.spins_from_cover(cov, LAT3, reference=int(cfg[0]))
        np.testing.assert_array_equal(back, cfg)


def test_clock_structure_factor():
    for L in (6, 12):
        lat = build_lattice(L)
        cfg = gauge.clock_config(lat)
        sk = gauge.structure_factor_at(cfg, lat, "K")[0]
        assert sk == pytest.approx(direct_structure_factor(cfg, lat, HIGH_SYMMETRY["K"]))
        assert sk == pytest.approx(lat.n_sites / 9)


def test_stripe_structure_factor_peaks_at_m():
    lat = LAT6
    cfg = gauge.stripe_config(lat)
    S = gauge.structure_factor(cfg, lat)
    grid = lat.momentum_grid()
    k = int(np.argmax(S))
    assert k == grid.index_of(HIGH_SYMMETRY["M2"])
    assert S[k] == pytest.approx(lat.n_sites / 4)
    assert gauge.structure_factor_at(cfg, lat, "K")[0] == pytest.approx(0, abs=1e-12)


def test_random_configs_flat_structure_factor(rng):
    cfgs = rng.integers(0, 2, (4000, LAT6.n_sites))
    S = gauge.structure_factor(cfgs, LAT6)
    assert np.all(np.abs(S - 0.25) < 0.03)


@given(configs6)
def test_sum_rule_and_inversion(cfg):
    S = gauge.structure_factor(cfg, LAT6)
    assert S.sum() == pytest.approx(LAT6.n_sites / 4)
    grid = LAT6.momentum_grid()
    for k in range(len(grid)):
        assert S[k] == pytest.approx(S[grid.negate(k)])


@given(configs6)
def test_fft_matches_direct_sum(cfg):
    S = gauge.structure_factor(cfg, LAT6)
    grid = LAT6.momentum_grid()
    for k in (1, 7, 20):
        assert S[k] == pytest.approx(direct_structure_factor(cfg, LAT6, grid.cartesian[k]), abs=1e-9)


@given(configs6)
def test_psi_r_bounded_and_translation_phase(cfg):
    p = gauge.psi_r(cfg, LAT6)
    assert abs(p) <= 1 + 1e-12
    shifted = np.empty_like(cfg)
    for i in range(LAT6.n_sites):
        x, y = LAT6.xy(i)
        shifted[LAT6.site(x + 1, y)] = cfg[i]
    q = gauge.psi_r(shifted, LAT6)
    if abs(p) > 1e-9:
        ratio = q / p
        assert min(abs(ratio - np.exp(2j * np.pi / 3)), abs(ratio - np.exp(-2j * np.pi / 3))) < 1e-9


def test_psi_r_of_clock_states():
    vals = [gauge.psi_r(gauge.clock_config(LAT6, p), LAT6)
            for p in [(1, 1, 0), (1, 0, 1), (0, 1, 1), (0, 0, 1), (0, 1, 0), (1, 0, 0)]]
    np.testing.assert_allclose(np.abs(vals), 1.0)
    angles = np.sort(np.mod(np.angle(vals), 2 * np.pi))
    np.testing.assert_allclose(np.diff(angles), np.pi / 3, atol=1e-12)


def test_correlators_at_zero_distance(rng):
    cfgs = rng.integers(0, 2, (50, LAT6.n_sites))
    ce, cr = gauge.correlators(cfgs, LAT6)
    assert cr[0] > 0 and ce[0] > 0
    assert len(ce) == LAT6.Lx
