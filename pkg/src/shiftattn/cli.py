"""Command-line entrypoint: train / eval-ppl / passkey / flops / mask-dump.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The seed defaults to the SHIFTATTN_SEED environment variable; an explicit
--seed flag wins.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import adapters, costmodel, evaluation, training
from .errors import ConfigurationError, ContractError
from .model import LLAMA2_7B, ModelConfig, TransformerModel
from .patterns import AttentionSpec, build_equivalent_mask, dump_mask

USAGE_ERROR = 2
RUNTIME_ERROR = 1

_TRAIN_KEYS = {
    # TrainSpec
    "learning_rate", "beta1", "beta2", "eps", "weight_decay", "warmup_steps",
    "total_steps", "micro_batch", "grad_accum_steps", "context_length", "seed",
    # LoraSpec
    "rank", "alpha", "targets", "train_embedding", "train_norm", "use_lora",
    # AttentionSpec
    "pattern", "group_size", "variant", "swap_mode",
    # ModelConfig
    "d_model", "n_layers", "n_heads", "d_ff", "vocab_size", "max_positions",
    "rope_base", "pi_scale",
    # SyntheticTask
    "task", "distances", "value_count",
}

_PRESETS = {"llama2-7b": LLAMA2_7B}


def _default_seed() -> int:
    return int(os.environ.get("SHIFTATTN_SEED", "0"))


def _attn_spec_from(pattern: str, group: int | None, variant: str = "baseline",
                    swap_mode: str = "across_heads") -> AttentionSpec:
    aliases = {"s2": "s2", "full": "full", "short": "short",
               "dilated": "dilated", "dilate": "dilated",
               "block": "block_sparse", "block_sparse": "block_sparse",
               "stride": "stride_sparse", "stride_sparse": "stride_sparse"}
    if pattern not in aliases:
        raise ConfigurationError(
            f"unknown pattern {pattern!r}; choose from {sorted(set(aliases))}")
    return AttentionSpec(pattern=aliases[pattern], group_size=group,
                         variant=variant, swap_mode=swap_mode)


def _write_manifest(out_dir: str, args_snapshot: dict, seed: int,
                    outputs: list[str]) -> None:
    manifest = {
        "config": args_snapshot,
        "seed": seed,
        "version": "shiftattn-0.1.0",
        "outputs": outputs,
        "created_unix": time.time(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    if not os.path.exists(args.config):
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return USAGE_ERROR
    cfg_kv = training.load_config(args.config)
    unknown = set(cfg_kv) - _TRAIN_KEYS
    if unknown:
        print(f"error: unknown config keys {sorted(unknown)}; "
              f"valid keys: {sorted(_TRAIN_KEYS)}", file=sys.stderr)
        return USAGE_ERROR

    def get(key, cast, default):
        return cast(cfg_kv[key]) if key in cfg_kv else default

    seed = args.seed if args.seed is not None else get("seed", int, _default_seed())
    model_cfg = ModelConfig(
        d_model=get("d_model", int, 64), n_layers=get("n_layers", int, 4),
        n_heads=get("n_heads", int, 4), d_ff=get("d_ff", int, 172),
        vocab_size=get("vocab_size", int, 256),
        max_positions=get("max_positions", int, 256),
        rope_base=get("rope_base", float, 10000.0),
        pi_scale=get("pi_scale", float, 1.0))
    context = get("context_length", int, 256)
    steps = args.steps if args.steps is not None else get("total_steps", int, 50)
    train_spec = training.TrainSpec(
        learning_rate=get("learning_rate", float, 1e-3),
        beta1=get("beta1", float, 0.9), beta2=get("beta2", float, 0.95),
        eps=get("eps", float, 1e-8),
        weight_decay=get("weight_decay", float, 0.0),
        warmup_steps=min(get("warmup_steps", int, 20), max(steps, 0)),
        total_steps=steps, micro_batch=get("micro_batch", int, 4),
        grad_accum_steps=get("grad_accum_steps", int, 1),
        context_length=context, seed=seed)
    pattern = args.attn or cfg_kv.get("pattern", "full")
    group = args.group if args.group is not None else get("group_size", int, None)
    attn_spec = _attn_spec_from(pattern, group,
                                cfg_kv.get("variant", "baseline"),
                                cfg_kv.get("swap_mode", "across_heads"))
    task_fields = dict(
        kind=cfg_kv.get("task", "long_range_recall"),
        vocab_size=model_cfg.vocab_size,
        value_count=get("value_count", int, 32),
        group_size=group or context // 4)
    if "distances" in cfg_kv:
        task_fields["distances"] = tuple(
            int(d) for d in cfg_kv["distances"].split(","))
    task = training.SyntheticTask(**task_fields)

    os.makedirs(args.out, exist_ok=True)
    model = TransformerModel(model_cfg, seed=seed)
    if get("use_lora", lambda s: s.lower() == "true", False):
        lora_spec = adapters.LoraSpec(
            rank=get("rank", int, 8), alpha=get("alpha", float, None),
            targets=tuple(cfg_kv.get("targets", "wq,wk,wv,wo").split(",")),
            train_embedding=get("train_embedding",
                                lambda s: s.lower() == "true", False),
            train_norm=get("train_norm", lambda s: s.lower() == "true", False))
        adapters.attach(model, lora_spec, seed=seed)

    if steps > 0:
        log = training.train(model, task, attn_spec, train_spec)
    else:
        log = training.TrainLog()
    ckpt_path = os.path.join(args.out, "model.ckpt")
    log_path = os.path.join(args.out, "log.csv")
    model.save(ckpt_path)
    log.to_csv(log_path)
    _write_manifest(args.out, dict(cfg_kv, pattern=pattern), seed,
                    [ckpt_path, log_path])
    print(f"trained {steps} steps; final eval loss "
          f"{log.final_eval:.4f}" if steps else "wrote initial checkpoint")
    return 0


def cmd_eval_ppl(args) -> int:
    model = TransformerModel.load(args.checkpoint)
    with open(args.tokens, "rb") as f:
        tokens = np.frombuffer(f.read(), dtype=np.uint8).astype(np.int64)
    spec = evaluation.EvalSpec(context_length=args.context, stride=args.stride)
    ppl = evaluation.sliding_window_ppl(model, tokens, spec)
    if args.out:
        evaluation.ppl_report_csv(args.out, [(args.tokens, len(tokens), ppl)])
    print(f"ppl={ppl:.6f} tokens={len(tokens)} "
          f"C={args.context} S={args.stride}")
    return 0


def cmd_passkey(args) -> int:
    m, n = evaluation.repeats_for_length(args.length)
    doc = evaluation.passkey_generate(m, n, seed=args.seed
                                      if args.seed is not None
                                      else _default_seed())
    if args.doc_out:
        with open(args.doc_out, "w") as f:
            f.write(doc.text)
    if args.checkpoint is None:
        print(f"generated document: M={m} N={n} "
              f"tokens={len(doc.prompt_bytes)}")
        return 0
    model = TransformerModel.load(args.checkpoint)
    seed = args.seed if args.seed is not None else _default_seed()
    accuracy, rows = evaluation.passkey_score(model, doc, trials=args.trials,
                                              seed=seed)
    if args.out:
        evaluation.passkey_report_csv(args.out, rows)
    print(f"passkey accuracy={accuracy:.2f} over {args.trials} trials")
    return 0


def cmd_flops(args) -> int:
    if args.preset:
        cfg = _PRESETS[args.preset]
    else:
        cfg = ModelConfig(d_model=args.d_model, n_layers=args.layers,
                          n_heads=args.heads, d_ff=args.d_ff,
                          vocab_size=args.vocab, max_positions=args.seq)
    if args.paper_check:
        results = costmodel.paper_check(cfg)
        bad = [r for r in results if not r["ok"]]
        for r in results:
            status = "PASS" if r["ok"] else "FAIL"
            print(f"{status} {r['cell']:<16} ours={r['ours_tflops']:.1f}T "
                  f"published={r['published_tflops']}T")
        return 0 if not bad else RUNTIME_ERROR
    spec = _attn_spec_from(args.attn, args.group)
    report = costmodel.flops_profile(cfg, args.seq, spec)
    print(costmodel.format_report(args.seq, spec, report, args.format))
    return 0


def cmd_mask_dump(args) -> int:
    spec = _attn_spec_from(args.pattern, args.group, args.variant)
    mask = build_equivalent_mask(spec, args.n, args.heads)
    os.makedirs(args.out, exist_ok=True)
    stem = args.pattern if args.group is None else f"{args.pattern}_g{args.group}"
    paths = dump_mask(mask, args.out, stem)
    print("\n".join(paths))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftattn",
        description="grouped-attention training and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a toy model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--attn", default=None)
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-ppl", help="sliding-window perplexity on raw bytes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--context", type=int, default=256)
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_ppl)

    p = sub.add_parser("passkey", help="generate / score passkey documents")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--doc-out", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_passkey)

    p = sub.add_parser("flops", help="analytical FLOPs breakdown")
    p.add_argument("--preset", choices=sorted(_PRESETS), default=None)
    p.add_argument("--d-model", dest="d_model", type=int, default=4096)
    p.add_argument("--layers", type=int, default=32)
    p.add_argument("--heads", type=int, default=32)
    p.add_argument("--d-ff", dest="d_ff", type=int, default=11008)
    p.add_argument("--vocab", type=int, default=32000)
    p.add_argument("--seq", type=int, default=8192)
    p.add_argument("--attn", default="full")
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--paper-check", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("mask-dump", help="write pattern masks as CSV and PGM")
    p.add_argument("--pattern", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--variant", default="baseline")
    p.add_argument("--out", default="masks")
    p.set_defaults(func=cmd_mask_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
