"""Extend a model pre-trained at context 128 to context 256 by
interpolating positions, and compare three fine-tuning regimes:
full fine-tuning, low-rank adapters with trainable embeddings and
norms, and low-rank adapters alone.

The extension corpus doubles the value vocabulary, so the frozen
embedding/output rows of the plain-adapter run have never seen half the
tokens — that is exactly the capacity the embed+norm variant buys back.

Run:  python3 demos/context_extension.py       (about two minutes)
"""

import os
import tempfile
import time

import numpy as np

from shiftattn.adapters import LoraSpec, attach
from shiftattn.model import ModelConfig, TransformerModel
from shiftattn.patterns import AttentionSpec
from shiftattn.training import SyntheticTask, TrainSpec, eval_loss, gen_task, train

FULL = AttentionSpec(pattern="full")


def main():
    cfg = ModelConfig(d_model=64, n_layers=3, n_heads=4, d_ff=172,
                      vocab_size=256, max_positions=128)
    task_pre = SyntheticTask(distances=(24, 72), value_count=16)
    task_ext = SyntheticTask(distances=(24, 72), value_count=32)

    print("pretraining at context 128 (16 distinct cue values)...")
    base = TransformerModel(cfg, seed=0)
    log = train(base, task_pre, FULL,
                TrainSpec(learning_rate=3e-3, warmup_steps=30,
                          total_steps=300, micro_batch=8,
                          context_length=128, seed=0))
    print(f"  eval loss at 128: {log.final_eval:.4f}")
    ckpt = os.path.join(tempfile.mkdtemp(), "base.ckpt")
    base.save(ckpt)

    ft = TrainSpec(learning_rate=3e-3, warmup_steps=10, total_steps=150,
                   micro_batch=8, context_length=256, seed=500)
    eval_data = gen_task(task_ext, 64, 256, seed=90001)
    arms = [("full fine-tune", None),
            ("adapters + embed + norm", LoraSpec(rank=2, train_embedding=True,
                                                 train_norm=True)),
            ("adapters only", LoraSpec(rank=2))]

    print("\nfine-tuning to context 256, positions interpolated 2x,")
    print("on the widened corpus (32 distinct cue values):")
    for label, lora in arms:
        t0 = time.time()
        model = TransformerModel.load(ckpt)
        model.cfg = model.cfg.with_pi_scale(2.0)
        note = "all weights"
        if lora is not None:
            info = attach(model, lora, seed=0)
            note = (f"{info['trainable']} of {info['base_total']} weights "
                    f"({100 * info['fraction']:.1f}%)")
        train(model, task_ext, FULL, ft)
        ppl = float(np.exp(eval_loss(model, eval_data, FULL)))
        print(f"  {label:<26} ppl {ppl:.4f}   trains {note}   "
              f"({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
