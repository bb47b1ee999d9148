"""Count simple qubit chains of several lengths on the 156-qubit heavy-hex map."""

import argparse
import time

from hubbardkit.layout import count_chains, heron_like


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("lengths", type=int, nargs="*", default=[20, 60, 120])
    ap.add_argument("--unoriented", action="store_true", help="count each chain once rather than once per direction")
    args = ap.parse_args()

    graph = heron_like()
    for n in args.lengths:
        t0 = time.perf_counter()
        count = count_chains(graph, n, oriented=not args.unoriented)
        print(f"{n:4d} qubits: {count:>12,d} chains  ({time.perf_counter() - t0:.1f}s)", flush=True)


if __name__ == "__main__":
    main()
