"""End-to-end probing vs convolution of per-link estimates over 2, 3 and 4 links.

Each link is 50 Mbps with 25 Mbps exponential cross traffic; the reference is
rate-latency(25 Mbps, 10 ms per link).
"""
from _common import median, parser, run_preset, table

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    rows = []
    for n in (2, 3, 4):
        s = run_preset("exp3-tandem", args.out, args.runs, args.jobs,
                       overrides=[f"n_links={n}"], rename=f"exp3-tandem-{n}links")
        rows.append([n, f"{median(s, 'e2e_rate'):.1f}", f"{median(s, 'conv_rate'):.1f}",
                     f"{median(s, 'e2e_gap'):.3f}", f"{median(s, 'conv_gap'):.3f}"])
    table(rows, ["links", "E2E rate", "conv rate", "E2E gap [Mb]", "conv gap [Mb]"])
