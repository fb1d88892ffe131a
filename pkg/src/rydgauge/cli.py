"""Command-line drivers.

    rydgauge run      --manifest M [--seed N] [--out DIR] [--sector F]
    rydgauge scan     --manifest M [--threads N]
    rydgauge sac      ARCHIVE [--manifest M] [--out DIR] [--threads N]
    rydgauge oracle   {ed|rk} --manifest M
    rydgauge analyze  {multicritical|powerlaw|curvature|histogram|compare} INPUT...

Every table starts with a ``# manifest_sha256=...`` comment line naming the
manifest that produced it.  Column layouts are listed in OUTPUTS.md.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, analysis, dimers, ed, gauge, sac
from .lattice import HIGH_SYMMETRY, build_lattice
from .manifest import ManifestError, RunManifest, load_manifest, manifest_text, parse_manifest
from .model import Dressed, Explicit, ModelParams, VdW, coupling_table
from .sse import SSEChain, SSEConfig, run

MOMENTUM_NAMES = {"Gamma": HIGH_SYMMETRY["Gamma"], **HIGH_SYMMETRY}


# ---------------------------------------------------------------------------
# helpers


def model_from_manifest(m: RunManifest):
    lat = build_lattice(*m.L)
    if m.profile == "explicit":
        u2, u3 = m.couplings()
        prof = Explicit(1.0, u2, u3)
    elif m.profile == "vdw":
        prof = VdW(m.c6)
    else:
        prof = Dressed(m.omega_d, m.delta_d, m.c6)
    params = ModelParams(omega=m.omega, profile=prof, truncation=m.truncation)
    tbl = coupling_table(params, lat)
    if m.profile != "explicit":
        tbl = tbl.scaled()
    return lat, tbl


def _header(m: RunManifest) -> str:
    return f"# manifest_sha256={m.sha256}\n"


def _write_csv(path: Path, m: RunManifest, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(_header(m))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _read_csv(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def _provenance(m: RunManifest, out: Path, extra=None):
    rec = {"manifest_sha256": m.sha256, "manifest": str(m.source) if m.source else None,
           "code_version": __version__, "seed": m.seed, "python": platform.python_version(),
           "numpy": np.__version__}
    try:
        import numba
        rec["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    rec.update(extra or {})
    (out / "provenance.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def _momenta(names):
    out = []
    for n in names:
        if n in MOMENTUM_NAMES:
            out.append(MOMENTUM_NAMES[n])
        else:
            out.append([float(v) for v in n.replace("(", "").replace(")", "").split()])
    return np.array(out, dtype=float)


# ---------------------------------------------------------------------------
# run


def cmd_run(m: RunManifest, out: Path | None = None, log=print) -> dict:
    out = Path(out or m.out)
    out.mkdir(parents=True, exist_ok=True)
    lat, tbl = model_from_manifest(m)
    meas = set(m.measurers)
    imag = "imag_time" in meas
    cfg = SSEConfig(beta=m.beta_value, n_therm=m.n_therm, n_meas=m.n_meas, n_bins=m.n_bins,
                    seed=m.seed, sector=m.sector, guard_cut_triangles=m.guard_cut_triangles,
                    tau_points=m.tau_points, tau_every=m.tau_every if imag else 0,
                    tau_momenta=tuple(map(tuple, _momenta(m.tau_momenta))) if imag else ())
    chain = SSEChain(lat, tbl, cfg)
    keep = bool(meas & {"correlators", "snapshots"})
    res = run(chain, keep_snapshots=keep, full_structure_factor="structure_factor" in meas)
    rows = [(name, b, v) for name, s in res.series.items() if hasattr(s, "bins")
            for b, v in enumerate(s.bins)]
    _write_csv(out / "observables.csv", m, ["observable", "bin", "value"], rows)
    summary = [(name, s.mean, s.error, int(s.equilibrated))
               for name, s in res.series.items() if hasattr(s, "bins")]
    _write_csv(out / "summary.csv", m, ["observable", "mean", "error", "equilibrated"], summary)
    if "structure_factor" in meas:
        sq = res.series["structure_factor"]
        grid = lat.momentum_grid()
        mean = sq.mean(0)
        err = sq.std(0, ddof=1) / np.sqrt(len(sq))
        rows = [(int(grid.mn[k, 0]), int(grid.mn[k, 1]), grid.cartesian[k, 0],
                 grid.cartesian[k, 1], mean[k], err[k]) for k in range(len(grid))]
        _write_csv(out / "structure_factor.csv", m, ["m", "n", "qx", "qy", "S", "error"], rows)
    if "correlators" in meas:
        ce, cr = gauge.correlators(res.snapshots, lat)
        rows = [(r, ce[r], cr[r]) for r in range(lat.Lx)]
        _write_csv(out / "correlators.csv", m, ["r", "C_E", "C_R"], rows)
    if "snapshots" in meas:
        np.savez_compressed(out / "snapshots.npz", snapshots=res.snapshots, manifest_sha256=m.sha256)
    if "psi_r" in meas:
        np.savez_compressed(out / "psi_r.npz", psi_r=res.psi_r, manifest_sha256=m.sha256)
    if res.imag_time is not None:
        it = res.imag_time
        np.savez(out / "imag_time.npz", tau=it.tau, momenta=it.momenta, beta=cfg.beta,
                 density=it.bins["density"], electric_y=it.bins["electric_y"],
                 manifest_sha256=m.sha256)
    chain.checkpoint(out / "checkpoint.npz")
    _provenance(m, out, {"refused_flips": res.refused_flips, "cutoff": res.cutoff,
                         "warnings": res.notes})
    for note in res.notes:
        log(f"warning: {note}")
    return {name: (s.mean, s.error) for name, s in res.series.items() if hasattr(s, "bins")}


# ---------------------------------------------------------------------------
# scan


def _scan_point(args):
    text, out = args
    m = parse_manifest(text)
    res = cmd_run(m, out, log=lambda *_: None)
    return res["energy_per_site"]


def cmd_scan(m: RunManifest, out: Path | None = None, threads: int = 1, log=print):
    out = Path(out or m.out)
    out.mkdir(parents=True, exist_ok=True)
    points = list(zip(m.scan_u2_over_omega, m.scan_u3_over_omega))
    if not points:
        raise ManifestError("scan needs scan_u2_over_omega and scan_u3_over_omega")
    sectors = m.scan_sectors or (m.sector,)
    jobs, keys = [], []
    for k, (a, b) in enumerate(points):
        for f in sectors:
            tag = f"p{k:03d}_f{'free' if f is None else str(f).replace('/', '_')}"
            text = manifest_text(m, u2=None, u3=None, u2_over_omega=a, u3_over_omega=b,
                                 sector="none" if f is None else str(f), scan_u2_over_omega=(),
                                 scan_u3_over_omega=(), scan_sectors=(), out=str(out / tag))
            jobs.append((text, out / tag))
            keys.append((a, b, f))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_scan_point, jobs))
    else:
        results = [_scan_point(j) for j in jobs]
    rows = [(a, b, "free" if f is None else str(f), e, s)
            for (a, b, f), (e, s) in zip(keys, results)]
    _write_csv(out / "scan.csv", m, ["u2_over_omega", "u3_over_omega", "sector",
                                     "energy_per_site", "error"], rows)
    _provenance(m, out, {"points": len(points), "sectors": [str(f) for f in sectors]})
    log(f"wrote {out / 'scan.csv'}")
    return rows


# ---------------------------------------------------------------------------
# sac


def _sac_one(args):
    tau, g_bins, beta, cfg = args
    G = g_bins.mean(0)
    nb = g_bins.shape[0]
    d = g_bins - G
    cov = d.T @ d / (nb * (nb - 1))
    spec = sac.sample(sac.SacInput(tau, G, cov, beta), cfg)
    return spec


def cmd_sac(archive: Path, m: RunManifest, out: Path | None = None, threads: int = 1,
            observable: str = "density", log=print):
    out = Path(out or m.out)
    out.mkdir(parents=True, exist_ok=True)
    with np.load(archive) as d:
        tau, momenta, beta, bins = d["tau"], d["momenta"], float(d["beta"]), d[observable]
    cfg = sac.SacConfig(n_delta=m.sac_n_delta, omega_max=m.sac_omega_max,
                        sweeps_per_theta=m.sac_sweeps, n_theta=m.sac_theta_steps, seed=m.seed)
    jobs = [(tau, bins[:, q, :], beta, cfg) for q in range(len(momenta))]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            specs = list(ex.map(_sac_one, jobs))
    else:
        specs = [_sac_one(j) for j in jobs]
    peaks = []
    for q, spec in enumerate(specs):
        _write_csv(out / f"spectrum_{observable}_q{q}.csv", m, ["omega", "B", "S"],
                   zip(spec.omega, spec.B, spec.S))
        peaks.append((q, momenta[q, 0], momenta[q, 1], spec.peak("mode"), spec.peak("moment"),
                      spec.theta, spec.chi2, spec.fit_quality, int(spec.converged)))
    _write_csv(out / f"peaks_{observable}.csv", m,
               ["q", "qx", "qy", "omega_mode", "omega_moment", "theta", "chi2", "chi2_per_point",
                "converged"], peaks)
    _provenance(m, out, {"archive": str(archive), "observable": observable})
    log(f"wrote {len(specs)} spectra to {out}")
    return peaks


# ---------------------------------------------------------------------------
# oracles


def cmd_oracle_ed(m: RunManifest, out: Path | None = None, log=print):
    out = Path(out or m.out)
    out.mkdir(parents=True, exist_ok=True)
    lat, tbl = model_from_manifest(m)
    spec = ed.build_and_solve(tbl, lat)
    cfgs = ed.basis_configs(lat.n_sites)
    diag = {"S_K": gauge.structure_factor_at(cfgs, lat, "K"),
            "S_M": gauge.structure_factor_at(cfgs, lat, "M"),
            "psi_r_sq": np.abs(gauge.psi_r(cfgs, lat)) ** 2}
    rows = []
    for beta in (m.ed_betas or (m.beta_value,)):
        rows.append((beta, "energy_per_site", ed.thermal_energy(spec, beta) / lat.n_sites))
        rows.append((beta, "sx", ed.thermal_sx(spec, beta)))
        for k, v in diag.items():
            rows.append((beta, k, ed.thermal_expectation(spec, v, beta)))
    _write_csv(out / "ed.csv", m, ["beta", "observable", "value"], rows)
    _provenance(m, out, {"ground_energy": spec.ground_energy})
    log(f"ground-state energy per site {spec.ground_energy / lat.n_sites:.8f}")
    return rows


def cmd_oracle_rk(m: RunManifest, out: Path | None = None, log=print):
    out = Path(out or m.out)
    out.mkdir(parents=True, exist_ok=True)
    lat = build_lattice(*m.L)
    f = 0 if m.sector is None else m.sector
    tab = dimers.rk_correlator_run(lat, n_bins=m.rk_bins, samples_per_bin=m.rk_samples_per_bin,
                                   seed=m.seed, f=f)
    rows = [(r, tab.C_E[r], tab.C_E_err[r], tab.C_R[r], tab.C_R_err[r]) for r in range(lat.Lx)]
    _write_csv(out / "rk_correlators.csv", m, ["r", "C_E", "C_E_err", "C_R", "C_R_err"], rows)
    np.savez(out / "rk_correlator_bins.npz", C_E=tab.C_E_bins, C_R=tab.C_R_bins,
             manifest_sha256=m.sha256)
    rep = {}
    try:
        fe = analysis.fit_power_law(tab.r, tab.C_E, lat.Lx, tab.C_E_err, tab.C_E_bins, period=3)
        fr = analysis.fit_power_law(tab.r, tab.C_R, lat.Lx, tab.C_R_err, tab.C_R_bins)
    except ValueError as exc:
        rep["fit_skipped"] = str(exc)
        log(f"power-law fit skipped: {exc}")
    else:
        rep = {"C_E_exponent": [fe.exponent, fe.error], "C_R_exponent": [fr.exponent, fr.error],
               "window": list(fe.window)}
        log(f"C_E exponent {fe.exponent:.3f} +- {fe.error:.3f}; "
            f"C_R exponent {fr.exponent:.3f} +- {fr.error:.3f}")
    (out / "rk_exponents.json").write_text(json.dumps(rep, indent=2) + "\n")
    _provenance(m, out)
    return rep


# ---------------------------------------------------------------------------
# analysis


def cmd_analyze(kind: str, inputs, args, log=print):
    if kind == "multicritical":
        scans = []
        for path in inputs:
            rows = _read_csv(path)
            L = int(args.size[len(scans)]) if args.size else int(_guess_size(path))
            pts = sorted({(float(r["u2_over_omega"]), float(r["u3_over_omega"])) for r in rows})
            energies = {}
            for r in rows:
                energies.setdefault(r["sector"], {})[(float(r["u2_over_omega"]),
                                                     float(r["u3_over_omega"]))] = float(r["energy_per_site"])
            e = {k: np.array([v[p] for p in pts]) for k, v in energies.items()}
            scans.append(analysis.SectorEnergyScan(L, np.array(pts), e))
        est = analysis.locate_multicritical(scans, clock=args.clock, stripe=args.stripe,
                                            intermediate=args.intermediate)
        log(json.dumps({"u2_over_omega": est.u2, "u3_over_omega": est.u3,
                        "per_size": {str(k): v for k, v in est.per_size.items()}}, indent=2))
        return est
    if kind == "powerlaw":
        rows = _read_csv(inputs[0])
        r = np.array([float(x["r"]) for x in rows])
        res = {}
        for col, period in (("C_E", 3), ("C_R", None)):
            if col not in rows[0]:
                continue
            C = np.array([float(x[col]) for x in rows])
            errc = f"{col}_err"
            err = np.array([float(x[errc]) for x in rows]) if errc in rows[0] else None
            fit = analysis.fit_power_law(r, C, args.L or len(r), err, period=period)
            res[col] = fit.exponent
            log(f"{col}: exponent {fit.exponent:.4f} on window {fit.window}")
        return res
    if kind == "curvature":
        rows = _read_csv(inputs[0])
        q = np.array([[float(x["qx"]), float(x["qy"])] for x in rows])
        w = np.array([float(x[args.column]) for x in rows])
        q0 = _momenta([args.q0])[0]
        fit = analysis.fit_curvature(q, w, q0, args.radius)
        log(f"C2 = {fit.C2:.6f} (residual {fit.residual:.3g})")
        return fit
    if kind == "histogram":
        with np.load(inputs[0]) as d:
            psi = d["psi_r"]
        h = analysis.histogram_order_parameter(psi, min_samples=args.min_samples,
                                               symmetrize=args.symmetrize)
        log(f"anisotropy {h.anisotropy:.4f}, <|psi|> {h.mean_abs:.4f}, "
            f"angular maxima {h.n_angular_maxima}, ring {h.ring}")
        return h
    if kind == "compare":
        ed_rows = _read_csv(inputs[0])
        sse_rows = {r["observable"]: r for r in _read_csv(inputs[1])}
        ok = True
        for r in ed_rows:
            if args.beta is not None and abs(float(r["beta"]) - args.beta) > 1e-12:
                continue
            s = sse_rows.get(r["observable"])
            if s is None:
                continue
            dev = abs(float(s["mean"]) - float(r["value"]))
            passed = dev <= 3 * float(s["error"])
            ok &= passed
            log(f"{'PASS' if passed else 'FAIL'} {r['observable']}: ED {float(r['value']):.6f} "
                f"SSE {float(s['mean']):.6f} +- {float(s['error']):.6f}")
        return ok
    raise ValueError(f"unknown analysis {kind!r}")


def _guess_size(path):
    import re

    hit = re.search(r"L(\d+)", str(path))
    if not hit:
        raise ValueError(f"cannot infer the lattice size from {path}; pass --size")
    return hit.group(1)


# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--manifest", type=Path, help="run manifest (key = value text)")
    p.add_argument("--seed", type=int, help="override the manifest seed")
    p.add_argument("--out", type=Path, help="override the output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for independent tasks")
    p.add_argument("--sector", type=str, help="flux density f for sector-constrained runs, or 'free'")


def build_parser():
    ap = argparse.ArgumentParser(prog="rydgauge", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="one SSE simulation"))
    _common(sub.add_parser("scan", help="SSE runs over parameter points and sectors"))
    p = sub.add_parser("sac", help="analytic continuation of an imag_time.npz archive")
    p.add_argument("archive", type=Path)
    p.add_argument("--observable", default="density", choices=("density", "electric_y"))
    _common(p)
    p = sub.add_parser("oracle", help="exact diagonalisation or RK dimer sampling")
    p.add_argument("which", choices=("ed", "rk"))
    _common(p)
    p = sub.add_parser("analyze", help="post-processing")
    p.add_argument("kind", choices=("multicritical", "powerlaw", "curvature", "histogram", "compare"))
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--size", nargs="*", help="lattice sizes of the multicritical scan files")
    p.add_argument("--clock", default="0")
    p.add_argument("--stripe", default="2")
    p.add_argument("--intermediate", default=None)
    p.add_argument("--L", type=int, default=None, help="lattice size for the power-law window")
    p.add_argument("--q0", default="K", help="band minimum for the curvature fit")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--column", default="omega_mode")
    p.add_argument("--min-samples", type=int, default=10_000)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--symmetrize", action="store_true",
                   help="average psi_R samples over the six-fold symmetry group")
    _common(p)
    return ap


def _load(args) -> RunManifest:
    if args.manifest is None:
        text = "schema_version = 1\n"
        m = parse_manifest(text)
    else:
        m = load_manifest(args.manifest)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = str(args.out)
    if args.sector is not None:
        changes["sector"] = None if args.sector.lower() in ("free", "none") else Fraction(args.sector)
    return replace(m, **changes) if changes else m


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        m = _load(args)
        if args.command == "run":
            if args.manifest is None:
                raise ManifestError("run needs --manifest")
            cmd_run(m)
        elif args.command == "scan":
            cmd_scan(m, threads=args.threads)
        elif args.command == "sac":
            cmd_sac(args.archive, m, threads=args.threads, observable=args.observable)
        elif args.command == "oracle":
            (cmd_oracle_ed if args.which == "ed" else cmd_oracle_rk)(m)
        else:
            res = cmd_analyze(args.kind, args.inputs, args)
            if args.kind == "compare" and not res:
                return 1
    except (ManifestError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
