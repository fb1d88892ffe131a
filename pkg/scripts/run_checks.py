#!/usr/bin/env python3
"""Run the exit checks outside pytest and print one verdict per line.

    python scripts/run_checks.py                 # everything (about 40 min on one core)
    python scripts/run_checks.py --only ed rk    # a subset
"""
import argparse
import sys
from fractions import Fraction

from rydgauge import experiments as x

SECTORS = (Fraction(0), Fraction(1, 2), Fraction(1), Fraction(3, 2), Fraction(2))


def sector_checks():
    runs = {f: x.sector_run(12, f, n_meas=20000, seed=k) for k, f in enumerate(SECTORS)}
    q_runs = [runs[f] for f in x.Q_SECTORS]
    return [x.check_q_of_f(q_runs), x.check_q_of_f_edge(q_runs),
            x.check_sector_splitting(runs),
            x.check_sector_splitting(runs, targets=(Fraction(2), Fraction(3, 2)),
                                     name="sector splitting (nearest reachable sectors)")]


GROUPS = {
    "ed": lambda: [x.check_ed_equivalence()],
    "classical": lambda: [x.check_classical_limit()],
    "constraint": lambda: [x.check_constraint_emergence()],
    "enumeration": lambda: [x.check_bijection_literal(), x.check_enumeration_l3()],
    "labels": lambda: [x.check_sector_labels()],
    "sectors": sector_checks,
    "rk": lambda: [x.check_rk_exponents()],
    "histogram": lambda: [x.check_histogram_clock(), x.check_histogram_multicritical()],
    "sac": lambda: [x.check_sac_two_delta(), x.check_sac_dispersion()],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="*", choices=sorted(GROUPS), default=None)
    args = ap.parse_args()
    failed = 0
    for name in args.only or GROUPS:
        for res in GROUPS[name]():
            print(res.line(), flush=True)
            failed += not res.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
