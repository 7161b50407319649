"""Train the same small model under full, shifted-group, and plain
group-local attention on the long-range recall corpus, and watch the
shift pay for itself.

The corpus interleaves episodes whose cue-to-answer distance is either
24 (fits inside one 64-token group) or 72 (does not). Group-local
attention without the shift cannot move the cue across the group
boundary, so it is stuck at the long-episode floor; the shifted halves
restore the flow at a fraction of full attention's cost.

Run:  python3 demos/shift_vs_noshift.py        (a couple of minutes on a laptop)
"""

import time

from shiftattn.model import ModelConfig, TransformerModel
from shiftattn.patterns import AttentionSpec
from shiftattn.training import SyntheticTask, TrainSpec, gen_task, train

CFG = ModelConfig(d_model=64, n_layers=3, n_heads=4, d_ff=172,
                  vocab_size=256, max_positions=256)
TASK = SyntheticTask(distances=(24, 72), group_size=64)
PATTERNS = [("full attention", AttentionSpec(pattern="full")),
            ("shifted groups (s2)", AttentionSpec(pattern="s2", group_size=64)),
            ("groups, no shift", AttentionSpec(pattern="short", group_size=64))]


def main():
    spec = TrainSpec(learning_rate=3e-3, warmup_steps=30, total_steps=400,
                     micro_batch=8, context_length=256, seed=0)
    sample = gen_task(TASK, 1, 256, seed=0)[0]
    print("one corpus row (token ids; 1=cue-mark, 2=query-mark, 3=filler):")
    print(" ", " ".join(str(t) for t in sample[:40]), "...")

    results = {}
    for label, attn in PATTERNS:
        t0 = time.time()
        model = TransformerModel(CFG, seed=0)
        log = train(model, TASK, attn, spec, eval_attn_spec=attn, n_eval=64)
        results[label] = log.final_eval
        curve = [log.losses[i] for i in (0, 99, 199, 399)]
        print(f"\n{label}")
        print("  train loss @ steps 1/100/200/400: "
              + " ".join(f"{v:.3f}" for v in curve))
        print(f"  eval loss: {log.final_eval:.4f}   ({time.time() - t0:.0f}s)")

    full, s2, short = (results[label] for label, _ in PATTERNS)
    print(f"\ns2 vs full:  {100 * (s2 - full) / full:+.1f}%   "
          f"(the shift nearly closes the gap)")
    print(f"no-shift vs s2: {100 * (short - s2) / s2:+.1f}%   "
          f"(without it, long episodes stay unanswered)")


if __name__ == "__main__":
    main()
