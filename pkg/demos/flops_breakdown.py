"""Analytical training-cost profile of the 7B geometry: per-category
FLOPs for full vs grouped attention across context lengths, checked
against the published breakdown.

Run:  python3 demos/flops_breakdown.py

The story the table tells: projections and the FFN grow linearly with
context, full attention grows quadratically, and grouped attention with
G = context/4 pins the attention term back to linear — which is the whole
reason the shifted-group trick pays for itself at long context.
"""

from shiftattn.costmodel import flops_profile, paper_check, speedup_table
from shiftattn.model import LLAMA2_7B, count_parameters
from shiftattn.patterns import AttentionSpec


def main():
    params = count_parameters(LLAMA2_7B)
    print(f"7B geometry: {params['total'] / 1e9:.2f}B parameters")
    print(f"  embedding fraction: {100 * params['fractions']['embedding']:.2f}%")
    print(f"  norm fraction:      {100 * params['fractions']['norms']:.4f}%")

    print(f"\n{'context':>8} {'pattern':>12} {'attn':>8} {'proj':>8} "
          f"{'ffn':>8} {'others':>8} {'total':>8}  (TFLOPs)")
    for seq in (8192, 16384, 32768, 65536):
        for label, spec in (("full", AttentionSpec(pattern="full")),
                            ("s2 G=seq/4", AttentionSpec(pattern="s2",
                                                         group_size=seq // 4))):
            r = flops_profile(LLAMA2_7B, seq, spec)
            print(f"{seq:>8} {label:>12} "
                  + " ".join(f"{v / 1e12:>8.1f}" for v in
                             (r.attn, r.proj, r.ffn, r.others, r.total)))

    print("\nspeedup of grouped attention over full (total FLOPs):")
    for seq in (8192, 16384, 32768, 65536):
        rows = speedup_table(LLAMA2_7B, [seq],
                             [AttentionSpec(pattern="s2", group_size=seq // 4)])
        print(f"  context {seq:>6}: {1 / rows[0]['total_ratio']:.2f}x")

    results = paper_check(LLAMA2_7B)
    bad = [r for r in results if not r["ok"]]
    print(f"\npublished-breakdown check: {len(results) - len(bad)}/{len(results)} "
          f"cells within tolerance")
    for r in bad:
        print(f"  MISMATCH {r['cell']}: ours {r['ours_tflops']:.1f}T "
              f"vs published {r['published_tflops']}T")


if __name__ == "__main__":
    main()
