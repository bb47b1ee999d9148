"""Trotter error growth when the step size is raised at fixed step count.

Prints mean and max RMSE against exact evolution for a grid of step sizes on
a vacancy-doped Neel chain, then the ratio between consecutive step sizes.
"""

import argparse

import numpy as np

from hubbardkit.model import DOWN, UP, FockState, HubbardParams
from hubbardkit.statevector import trotter_error_scan


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=10)
    ap.add_argument("--U", type=float, default=6.0)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--dts", type=float, nargs="+", default=[0.1, 0.15, 0.2])
    ap.add_argument("--pattern", default="u d u d . d u d u d", help="site occupations: u, d or . for empty")
    args = ap.parse_args()

    pattern = args.pattern.split()
    if len(pattern) != args.L:
        ap.error(f"pattern has {len(pattern)} sites, expected {args.L}")
    state = FockState.from_sites(args.L, [(i, UP if c == "u" else DOWN) for i, c in enumerate(pattern) if c != "."])
    p = HubbardParams(L=args.L, U=args.U)

    errs = {}
    for dt in args.dts:
        e = np.array([r.rmse for r in trotter_error_scan(p, [dt], args.steps, state)])
        errs[dt] = e
        print(f"dt={dt:<6g} mean RMSE {e.mean():.5f}  max RMSE {e.max():.5f}", flush=True)
    for a, b in zip(args.dts, args.dts[1:]):
        print(f"{a:g} -> {b:g}: mean ratio {errs[b].mean() / errs[a].mean():.3f}, max ratio {errs[b].max() / errs[a].max():.3f}")


if __name__ == "__main__":
    main()
