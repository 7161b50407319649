"""Render every attention pattern as an ASCII allowed-pairs matrix and
dump CSV/PGM images.

Run:  python3 demos/mask_gallery.py [out_dir]

Reading the pictures: rows are queries, columns are keys, '#' means the
query may attend the key. The shifted pattern's second head shows the
wrap group in its top-right corner — the front tokens seeing the tail.
That corner is exactly what the isolated-wrap variant (v2) removes.
"""

import sys

from shiftattn.patterns import (AttentionSpec, build_equivalent_mask,
                                dump_mask, leakage_pairs)

N, H, G = 16, 2, 8

GALLERY = [
    ("full attention", AttentionSpec(pattern="full")),
    ("group-local, no shift", AttentionSpec(pattern="short", group_size=G)),
    ("shifted halves (baseline)", AttentionSpec(pattern="s2", group_size=G)),
    ("shifted, isolated wrap group (v2)",
     AttentionSpec(pattern="s2", group_size=G, variant="v2")),
    ("shifted, front/tail swap (v3)",
     AttentionSpec(pattern="s2", group_size=G, variant="v3")),
    ("dilated heads", AttentionSpec(pattern="dilated", group_size=G // 2)),
    ("block sparse", AttentionSpec(pattern="block_sparse", n_blocks=4)),
    ("stride sparse", AttentionSpec(pattern="stride_sparse")),
]


def ascii_mask(mask_2d):
    return "\n".join("".join("#" if m else "." for m in row) for row in mask_2d)


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "masks"
    for title, spec in GALLERY:
        mask = build_equivalent_mask(spec, N, H)
        print(f"\n=== {title} (N={N}, H={H}) ===")
        for head in range(H):
            if head and (mask.allowed[head] == mask.allowed[0]).all():
                print(f"[head {head}: same as head 0]")
                continue
            print(f"-- head {head} --")
            print(ascii_mask(mask.allowed[head]))
        stem = spec.pattern if spec.variant == "baseline" else (
            f"{spec.pattern}_{spec.variant}")
        paths = dump_mask(mask, out_dir, stem)
        print(f"wrote {len(paths)} files under {out_dir}/")

    print("\nwrap-group leakage pairs for the shifted baseline "
          f"(N={N}, G={G}):")
    print(sorted(leakage_pairs(N, G)))


if __name__ == "__main__":
    main()
