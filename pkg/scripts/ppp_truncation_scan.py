"""PPP occupations against the statevector reference for several truncation weights."""

import argparse
import time

import numpy as np

from hubbardkit.model import HubbardParams, neel_state
from hubbardkit.ppp import TruncationPolicy, ppp_occupations
from hubbardkit.statevector import trotter_occupations


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=6)
    ap.add_argument("--U", type=float, default=2.0)
    ap.add_argument("--dt", type=float, default=0.2)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--mw", type=int, nargs="+", default=[8, 12, 16])
    ap.add_argument("--modes", type=int, nargs="*", help="qubit modes to propagate (default: the two central ones)")
    args = ap.parse_args()

    p = HubbardParams(L=args.L, U=args.U)
    ini = neel_state(args.L)
    modes = args.modes or [args.L - 1, args.L]
    ref = trotter_occupations(p, args.dt, args.steps, ini)[:, modes]
    for mw in args.mw:
        t0 = time.perf_counter()
        occ, runs = ppp_occupations(p, args.dt, args.steps, TruncationPolicy(mw=mw), ini, modes=modes)
        err = np.abs(occ - ref)
        peak = max(row.size_before for r in runs for row in r.census)
        print(f"mw={mw:<3d} max error {err.max():.4f}  mean error {err.mean():.4f}  "
              f"peak terms {peak}  {time.perf_counter() - t0:.1f}s", flush=True)


if __name__ == "__main__":
    main()
