"""Fluid reconstructions of S(t) = 0.4 t^2 kb by rate scan and rate chirp.

Writes the estimate curves as CSV and prints the sup-gap on [0, 50 ms] (chirp)
and [0, 100 ms] (scan) for each probing resolution.
"""
from _common import median, parser, run_preset, table

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    s = run_preset("fluid-demos", args.out, 1, 1)
    rows = [["scan", f"delta r = {inc}", f"{median(s, f'scan_gap_inc{inc}'):.4f}",
             f"{median(s, f'scan_bmax_err_inc{inc}'):.1e}"] for inc in (10, 5)]
    rows += [["chirp", f"gamma = {g}", f"{median(s, f'chirp_gap_gamma{g}'):.4f}", "-"]
             for g in (1.2, 1.1, 1.05)]
    table(rows, ["method", "resolution", "sup-gap [Mb]", "B_max err [Mb]"])
