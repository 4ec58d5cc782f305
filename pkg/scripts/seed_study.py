"""Conditioning of the lam = 0 Earth-Moon shooting map at different initial guesses.

Crude guesses (p_r = 0, p_v along the velocity or the radius) integrate to a
many-revolution spiral and give a nearly singular Jacobian; the tangential
primer seed does not.
"""

import numpy as np

from l1crtbp import cli
from l1crtbp import extremal as E
from l1crtbp import shooting as Sh


def describe(pb, guess, opts):
    S, DS, _, tr = Sh.evaluate(pb, guess.vector(), opts, jacobian=True)
    tr = E.flow(pb.z0(guess.p0), pb.t_f, 0.0, pb.engine, pb.params, opts.flow)
    rf = np.linalg.norm(tr.final[:3] - pb.params.r2)
    return np.max(np.abs(S)), np.linalg.cond(DS), rf


def main():
    s = cli.load_scenario(cli.bundled_scenario())
    pb = cli.build_problem(s, 0.0)
    opts = cli.shooting_options(s)[0]
    rows = [("primer", Sh.primer_seed(pb, s.homotopy.seed_magnitude, s.homotopy.seed_coupling))]
    for direction in ("velocity", "radial"):
        for scale in (0.05, 0.2, 1.0):
            rows.append((f"{direction} x{scale:g}", Sh.coarse_guess(pb, direction, scale)))
    print(f"{'guess':>16} {'|S|inf':>10} {'cond(DS)':>10} {'|r_f - r_moon|':>15}")
    for name, g in rows:
        res, cond, rf = describe(pb, g, opts)
        print(f"{name:>16} {res:10.3e} {cond:10.3e} {rf:15.4f}")


if __name__ == "__main__":
    main()
