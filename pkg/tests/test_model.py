import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rydgauge.lattice import build_lattice
from rydgauge.model import (
    CouplingTable, Dressed, ModelParams, VdW, classical_energy, coupling_table, flip_all,
    half_filling_detuning, rydberg_energy, rydberg_offset, vdw_lattice_sum,
)

LAT6 = build_lattice(6)
configs6 = arrays(np.int8, LAT6.n_sites, elements=st.integers(0, 1))
couplings = st.tuples(st.floats(0.1, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))


def test_vdw_profile_ratios():
    tbl = coupling_table(ModelParams(omega=0.1, profile=VdW(1.0)))
    assert tbl.U == pytest.approx((1.0, 1 / 27, 1 / 64))
    assert tbl.U[0] > tbl.U[1] > tbl.U[2]


def test_truncation_zeroes_far_shells():
    tbl = coupling_table(ModelParams(omega=0.1, profile=VdW(1.0), truncation=1))
    assert tbl.U == (1.0, 0.0, 0.0)


def test_dressed_profile_is_softer_at_short_range():
    d = Dressed(omega_d=0.5, delta_d=2.0, c6=3.0)
    r = np.array([1.0, np.sqrt(3), 2.0])
    u = d(r)
    assert np.all(np.diff(u) < 0)
    # same r^-6 tail as the bare interaction scaled by (Omega_d / 2 delta_d)^4
    far = d(np.array([50.0]))[0]
    assert far == pytest.approx((0.5 / 4.0) ** 4 * 3.0 / 50.0**6, rel=1e-6)
    # ratio U1/U2 smaller than the bare vdW ratio 27
    assert u[0] / u[1] < 27


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ModelParams(omega=-1.0)
    with pytest.raises(ValueError):
        ModelParams(omega=1.0, truncation=4)
    with pytest.raises(ValueError):
        CouplingTable((0.0, 0.0, 0.0), 1.0)


def test_multicritical_ratios():
    tbl = coupling_table(ModelParams.multicritical(omega=0.2))
    assert tbl.U == pytest.approx((1.0, 0.1094, 0.043))


def test_half_filling_detuning_truncated_and_untruncated():
    tbl = coupling_table(ModelParams(omega=0.1, profile=VdW(1.0)))
    assert half_filling_detuning(tbl) == pytest.approx(3 * (1 + 1 / 27 + 1 / 64))
    # the full lattice sum over all shells
    assert vdw_lattice_sum() == pytest.approx(3.188, abs=1e-3)


def test_known_configuration_energies():
    tbl = CouplingTable((1.0, 0.0, 0.0), 0.0)
    all_down = np.zeros(LAT6.n_sites, dtype=int)
    assert classical_energy(all_down, tbl, LAT6) == pytest.approx(3 * 36 / 4)
    one_up = all_down.copy()
    one_up[0] = 1
    # six nearest neighbours change sign
    assert classical_energy(one_up, tbl, LAT6) - classical_energy(all_down, tbl, LAT6) == pytest.approx(-3.0)


def test_single_flip_with_all_shells():
    tbl = CouplingTable((1.0, 0.3, 0.2), 0.0)
    down = np.zeros(LAT6.n_sites, dtype=int)
    up = down.copy()
    up[7] = 1
    dE = classical_energy(up, tbl, LAT6) - classical_energy(down, tbl, LAT6)
    assert dE == pytest.approx(-0.5 * sum(6 * u for u in tbl.U))


@given(configs6, couplings)
def test_z2_symmetry(cfg, U):
    tbl = CouplingTable(U, 0.5)
    assert classical_energy(cfg, tbl, LAT6) == pytest.approx(classical_energy(flip_all(cfg), tbl, LAT6))
    assert rydberg_energy(cfg, tbl, LAT6) == pytest.approx(rydberg_energy(flip_all(cfg), tbl, LAT6))


@given(st.lists(configs6, min_size=2, max_size=5), couplings)
def test_rydberg_and_spin_forms_differ_by_constant(cfgs, U):
    tbl = CouplingTable(U, 0.5)
    cfgs = np.array(cfgs)
    diff = rydberg_energy(cfgs, tbl, LAT6) - classical_energy(cfgs, tbl, LAT6)
    np.testing.assert_allclose(diff, rydberg_offset(tbl, LAT6), atol=1e-9)


def test_batch_and_size_check():
    tbl = CouplingTable((1.0, 0.1, 0.05), 0.0)
    cfgs = np.random.default_rng(0).integers(0, 2, (7, LAT6.n_sites))
    batch = classical_energy(cfgs, tbl, LAT6)
    assert batch.shape == (7,)
    np.testing.assert_allclose(batch, [classical_energy(c, tbl, LAT6) for c in cfgs])
    with pytest.raises(ValueError):
        classical_energy(np.zeros(5), tbl, LAT6)


def test_scaled_table():
    tbl = CouplingTable((2.0, 0.4, 0.2), 1.0, 3.0).scaled()
    assert tbl.U == pytest.approx((1.0, 0.2, 0.1))
    assert tbl.omega == pytest.approx(0.5) and tbl.delta == pytest.approx(1.5)
