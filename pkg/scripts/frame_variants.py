"""Sensitivity of the Earth-Moon extremal to the frame of the target velocity.

The target speed row can use the two-body value sqrt(mu / r_m) as a
rotating-frame speed (bundled scenario) or the rotating-frame speed of an
inertially circular orbit.  Each variant is solved from the same seed by
arclength continuation and certified.  Runs take a few minutes each.
"""

import sys
from dataclasses import replace

from l1crtbp import cli


def main(frames=("rotating", "inertial")):
    base = cli.load_scenario(cli.bundled_scenario())
    for frame in frames:
        s = replace(base, name=f"{base.name}-{frame}", target=replace(base.target, frame=frame))
        try:
            rep = cli.run(s, f"out/frame_{frame}", jcurve=False)
        except Exception as exc:  # report and move on to the next variant
            print(f"{frame}: failed ({type(exc).__name__}: {exc})")
            continue
        suf = rep.sufficiency
        print(
            f"{frame}: burn arcs {rep.n_burn_arcs}, switches {rep.n_switches}, residual {rep.residual:.2e}, "
            f"reduced form {suf['reduced_matrix']}, {suf['classification']}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main(tuple(sys.argv[1:]) or ("rotating", "inertial")))
