"""Earth-Moon transfer: continuation, lam = 1 solve, certification and plot data.

    python3 scripts/run_ems.py [--out out/ems_l1] [--no-jcurve]
"""

import argparse
import logging
import sys

from l1crtbp import cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/ems_l1")
    ap.add_argument("--no-jcurve", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    s = cli.load_scenario(cli.bundled_scenario())
    last = [0.0]

    def progress(lam, u, elapsed):
        if lam - last[0] >= 0.05:
            last[0] = lam
            print(f"  lam = {lam:.4f}  ({elapsed:.0f} s)", flush=True)

    rep = cli.run(s, a.out, jcurve=not a.no_jcurve, progress=progress)
    cli._print_summary(rep, sys.stdout)
    print(f"propellant {rep.propellant:.4f} kg, timing {rep.timing}")
    print(f"artifacts written to {a.out}")
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
