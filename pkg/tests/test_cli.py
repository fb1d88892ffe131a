import json
from pathlib import Path

import numpy as np
import pytest

from rydgauge import cli, sac
from rydgauge.manifest import ManifestError, load_manifest, manifest_text, parse_manifest

MINIMAL = """schema_version = 1
L = 3
omega = 2.0
u2_over_omega = 0.547
u3_over_omega = 0.215
beta = 2
n_therm = 100
n_meas = 2000
n_bins = 10
seed = 5
measurers = energy, structure_factor, correlators, imag_time, psi_r
tau_every = 20
tau_points = 12
ed_betas = 2
"""


def write(tmp_path, text, name="m.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("text,line,fragment", [
    ("schema_version = 1\nLx = 3\nbogus = 2\n", 3, "unknown key"),
    ("schema_version = 1\nLx = 3\nLx = 4\n", 3, "duplicate"),
    ("schema_version = 1\nomega = fast\n", 2, "bad value"),
    ("schema_version = 2\n", 1, "unsupported"),
    ("schema_version = 1\nn_meas = 1001\nn_bins = 10\n", 2, "multiple"),
    ("schema_version = 1\nmeasurers = energy, spectra\n", 2, "unknown measurer"),
    ("schema_version = 1\njust words\n", 2, "key = value"),
])
def test_manifest_errors_name_the_line(text, line, fragment):
    with pytest.raises(ManifestError) as exc:
        parse_manifest(text, "m.txt")
    assert exc.value.line == line
    assert f"m.txt:{line}" in str(exc.value) and fragment in str(exc.value)


def test_manifest_missing_version():
    with pytest.raises(ManifestError, match="schema_version"):
        parse_manifest("Lx = 3\n")


def test_manifest_defaults_and_round_trip():
    m = parse_manifest(MINIMAL)
    assert m.L == (3, 3) and m.beta_value == 2.0
    assert m.couplings() == pytest.approx((1.094, 0.43))
    assert parse_manifest("schema_version = 1\nL = 6\n").beta_value == 36.0
    again = parse_manifest(manifest_text(m))
    for key in ("Lx", "omega", "u2_over_omega", "measurers", "tau_every", "ed_betas"):
        assert getattr(again, key) == getattr(m, key)
    assert parse_manifest("schema_version = 1\nsector = 3/2\n").sector == pytest.approx(1.5)
    assert parse_manifest("schema_version = 1\nsector = free\n").sector is None


def _csv_hashes(out: Path):
    for f in out.glob("*.csv"):
        yield f, f.read_text().splitlines()[0]


def test_run_smoke_and_determinism(tmp_path):
    mpath = write(tmp_path, MINIMAL)
    assert cli.main(["run", "--manifest", str(mpath), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--manifest", str(mpath), "--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in ("observables.csv", "summary.csv", "structure_factor.csv", "correlators.csv",
                 "imag_time.npz", "psi_r.npz", "checkpoint.npz", "provenance.json"):
        assert (a / name).exists(), name
    assert (a / "observables.csv").read_bytes() == (b / "observables.csv").read_bytes()
    sha = load_manifest(mpath).sha256
    for f, first in _csv_hashes(a):
        assert first == f"# manifest_sha256={sha}", f
    prov = json.loads((a / "provenance.json").read_text())
    assert prov["manifest_sha256"] == sha and prov["seed"] == 5 and "code_version" in prov
    with np.load(a / "imag_time.npz") as d:
        assert str(d["manifest_sha256"]) == sha
        assert d["density"].shape == (10, 3, 12)


def test_seed_and_sector_flags(tmp_path):
    mpath = write(tmp_path, MINIMAL.replace("measurers = energy, structure_factor, correlators, imag_time, psi_r\n", ""))
    cli.main(["run", "--manifest", str(mpath), "--out", str(tmp_path / "s1"), "--seed", "1"])
    cli.main(["run", "--manifest", str(mpath), "--out", str(tmp_path / "s2"), "--seed", "2"])
    assert (tmp_path / "s1/observables.csv").read_text() != (tmp_path / "s2/observables.csv").read_text()
    assert cli.main(["run", "--manifest", str(mpath), "--out", str(tmp_path / "f"), "--sector", "0"]) == 0
    rows = cli._read_csv(tmp_path / "f/summary.csv")
    fx = [r for r in rows if r["observable"] == "flux_x"][0]
    assert float(fx["mean"]) == 0.0 and float(fx["error"]) == 0.0


def test_oracle_ed_and_compare(tmp_path, capsys):
    mpath = write(tmp_path, MINIMAL.replace("n_meas = 2000", "n_meas = 20000"))
    assert cli.main(["run", "--manifest", str(mpath), "--out", str(tmp_path / "run")]) == 0
    assert cli.main(["oracle", "ed", "--manifest", str(mpath), "--out", str(tmp_path / "ed")]) == 0
    code = cli.main(["analyze", "compare", str(tmp_path / "ed/ed.csv"), str(tmp_path / "run/summary.csv")])
    report = capsys.readouterr().out
    assert "energy_per_site" in report and "S_K" in report
    assert code == (1 if "FAIL" in report else 0)
    assert report.count("PASS") >= 4


def test_sac_on_synthetic_archive(tmp_path):
    beta = 10.0
    tau = 0.5 * beta * (np.arange(20) / 19) ** 2
    rng = np.random.default_rng(0)
    G = np.stack([sac.kernel(tau, w, beta) for w in (1.0, 2.0)])  # (nq, ntau)
    bins = G[None] * (1 + 1e-4 * rng.normal(size=(30,) + G.shape))
    np.savez(tmp_path / "it.npz", tau=tau, momenta=np.zeros((2, 2)), beta=beta, density=bins,
             electric_y=bins, manifest_sha256="synthetic")
    mpath = write(tmp_path, "schema_version = 1\nsac_n_delta = 100\nsac_sweeps = 50\nsac_theta_steps = 40\nsac_omega_max = 5\n")
    assert cli.main(["sac", str(tmp_path / "it.npz"), "--manifest", str(mpath), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s/spectrum_density_q0.csv").exists() and (tmp_path / "s/spectrum_density_q1.csv").exists()
    peaks = cli._read_csv(tmp_path / "s/peaks_density.csv")
    assert float(peaks[0]["omega_mode"]) == pytest.approx(1.0, rel=0.1)
    assert float(peaks[1]["omega_mode"]) == pytest.approx(2.0, rel=0.1)


def test_scan_and_multicritical(tmp_path, capsys):
    text = """schema_version = 1
L = 6
omega = 0.2
beta = 6
n_therm = 20
n_meas = 100
n_bins = 2
scan_u2_over_omega = 0.5, 0.6, 0.5
scan_u3_over_omega = 0.2, 0.2, 0.3
scan_sectors = 0, 2, 1
"""
    for L in (6,):
        mpath = write(tmp_path, text, f"scan{L}.txt")
        assert cli.main(["scan", "--manifest", str(mpath), "--out", str(tmp_path / f"L{L}")]) == 0
    rows = cli._read_csv(tmp_path / "L6/scan.csv")
    assert len(rows) == 9 and {r["sector"] for r in rows} == {"0", "2", "1"}
    bad = write(tmp_path, "schema_version = 1\nL = 3\n", "noscan.txt")
    assert cli.main(["scan", "--manifest", str(bad)]) == 2


def test_rk_oracle_and_powerlaw(tmp_path, capsys):
    mpath = write(tmp_path, "schema_version = 1\nL = 12\nrk_bins = 4\nrk_samples_per_bin = 50\n")
    assert cli.main(["oracle", "rk", "--manifest", str(mpath), "--out", str(tmp_path / "rk")]) == 0
    assert (tmp_path / "rk/rk_correlators.csv").exists()
    assert cli.main(["analyze", "powerlaw", str(tmp_path / "rk/rk_correlators.csv"), "--L", "24"]) == 0
    assert "C_E: exponent" in capsys.readouterr().out


def test_histogram_and_curvature(tmp_path, capsys):
    rng = np.random.default_rng(2)
    psi = 0.7 * np.exp(1j * np.pi / 3 * rng.integers(0, 6, 12000) + 0.05j * rng.normal(size=12000))
    np.savez(tmp_path / "psi.npz", psi_r=psi)
    assert cli.main(["analyze", "histogram", str(tmp_path / "psi.npz")]) == 0
    assert "angular maxima 6" in capsys.readouterr().out
    q0 = np.array([4 * np.pi / 3, 0])
    q = q0 + rng.normal(scale=0.3, size=(8, 2))
    w = 0.5 * 0.1 * ((q - q0) ** 2).sum(1)
    lines = ["# manifest_sha256=x", "q,qx,qy,omega_mode"] + [f"{i},{a},{b},{c}" for i, ((a, b), c) in enumerate(zip(q, w))]
    (tmp_path / "peaks.csv").write_text("\n".join(lines) + "\n")
    assert cli.main(["analyze", "curvature", str(tmp_path / "peaks.csv"), "--q0", "K"]) == 0
    assert "C2 = 0.100000" in capsys.readouterr().out


def test_bad_manifest_exit_code(tmp_path, capsys):
    mpath = write(tmp_path, "schema_version = 1\nnope = 1\n")
    assert cli.main(["run", "--manifest", str(mpath)]) == 2
    assert "m.txt:2" in capsys.readouterr().err
