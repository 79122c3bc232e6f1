"""Passive estimation from On-Off traffic: estimate gap vs burstiness, load and horizon.

Prints the median sup-gap of the passive estimate against the true service
curve on [0, 50 ms]; larger horizons and burstier traffic should shrink it.
"""
from _common import median, parser, run_preset, table

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    s = run_preset("example1", args.out, args.runs, args.jobs)
    rows = [[load, level] + [f"{median(s, f'gap_{load}_{level}_{h}ms'):.3f}" for h in (1000, 10000)]
            for load in ("high", "low") for level in ("low", "med", "high")]
    print(f"median sup-gap [Mb] over {s['runs']} runs (S(50 ms) = 1.75 Mb)")
    table(rows, ["load", "burstiness", "H=1s", "H=10s"])
