"""Rate scan vs rate chirp on a 50 Mbps FIFO link with 25 Mbps cross traffic,
followed by the scan under CBR, exponential and Pareto cross traffic.

The true available bandwidth is 25 Mbps; the reference service curve used
for the gap is rate-latency(25 Mbps, 10 ms).
"""
from _common import median, parser, run_preset, table

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    scan = run_preset("exp1-ratescan", args.out, args.runs, args.jobs)
    chirp = run_preset("exp1-chirp", args.out, args.runs, args.jobs)
    rows = [["rate scan", f"{median(scan, 'stop_rate'):.1f}", f"{median(scan, 'long_run_rate'):.1f}",
             f"{median(scan, 'sup_gap'):.3f}", f"{median(scan, 'n_trains') * 400:.0f}"],
            ["chirp", f"{median(chirp, 'stop_rate'):.1f}", f"{median(chirp, 'long_run_rate'):.1f}",
             f"{median(chirp, 'sup_gap'):.3f}", f"{median(chirp, 'n_packets'):.0f}"]]
    table(rows, ["method", "stop [Mbps]", "long-run rate", "sup-gap [Mb]", "packets"])
    print()
    ct = run_preset("exp2-crosstraffic", args.out, args.runs, args.jobs)
    rows = [[d, f"{median(ct, f'stop_rate_{d}'):.1f}", f"{median(ct, f'long_run_rate_{d}'):.1f}",
             f"{median(ct, f'sup_gap_{d}'):.3f}"] for d in ("cbr", "exponential", "pareto")]
    table(rows, ["cross traffic", "stop [Mbps]", "long-run rate", "sup-gap [Mb]"])
