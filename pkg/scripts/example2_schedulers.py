"""Passive estimates of a bursty trace through FIFO and DRR links.

DRR isolates the flow to its fair share C/2; FIFO lets it borrow idle
capacity, so its estimated long-run rate should exceed C/2.
"""
from _common import median, parser, run_preset, table

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    s = run_preset("example2-generic", args.out, args.runs, args.jobs)
    rows = [[f"{c}", f"{c / 2:.0f}", f"{median(s, f'rate_C{c}_fifo'):.1f}",
             f"{median(s, f'rate_C{c}_drr'):.1f}"] for c in (70, 50, 30)]
    print(f"median long-run rate of S~ on [150, 300 ms] [Mbps], trace mean "
          f"{median(s, 'trace_mean_mbps'):.1f} Mbps")
    table(rows, ["C", "C/2", "FIFO", "DRR"])
