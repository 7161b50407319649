"""Deterministic next-token training: AdamW, linear warmup, gradient
accumulation, and synthetic corpora with controllable long-range
dependencies.

The long-range recall corpus is built so that group-local attention
without shifting measurably underperforms: each sequence is a run of
episodes (cue-marker, cue, filler..., query-marker, answer) where the
answer repeats the cue at a distance that regularly exceeds the
attention group size, so answering requires information flow across
groups while everything except the cues stays predictable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigurationError, DimensionError, TrainingDiverged
from .model import TransformerModel
from .patterns import AttentionSpec

TASK_KINDS = ("unigram_iid", "long_range_recall", "byte_corpus")

# structural tokens for the recall corpus; value tokens live at
# value_base and above, so these never collide with cue values
CUE_MARKER = 1
QUERY_MARKER = 2
FILLER = 3


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 20
    total_steps: int = 200
    micro_batch: int = 4
    grad_accum_steps: int = 1
    context_length: int = 256
    seed: int = 0

    def validate(self):
        if self.warmup_steps > self.total_steps:
            raise ConfigurationError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps "
                f"{self.total_steps}")
        if self.grad_accum_steps < 1:
            raise ConfigurationError("grad_accum_steps must be >= 1")


@dataclass(frozen=True)
class SyntheticTask:
    """Reproducible toy corpora.

    * ``unigram_iid``: i.i.d. tokens from ``probs`` (analytic entropy floor).
    * ``long_range_recall``: back-to-back episodes
      ``(cue-marker, cue, filler..., query-marker, answer)`` where the
      answer repeats the cue at a cue-to-answer distance drawn from
      ``distances``; more than half the distances exceed ``group_size``,
      and every sequence opens with an episode longer than the group.
      Only the cues are unpredictable, so the loss floor is the cue
      entropy and everything above it is failed recall.
    * ``byte_corpus``: documents of repeated random phrases concatenated
      with a separator token.
    """

    kind: str = "long_range_recall"
    vocab_size: int = 256
    probs: tuple[float, ...] = ()
    value_base: int = 16
    value_count: int = 32
    distances: tuple[int, ...] = (16, 32, 48, 80, 96, 112)
    group_size: int = 64
    phrase_len: int = 8
    separator: int = 0

    def validate(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}")
        if self.kind == "unigram_iid":
            if not self.probs:
                raise ConfigurationError("unigram_iid needs token probabilities")
            if abs(sum(self.probs) - 1.0) > 1e-9:
                raise ConfigurationError("unigram probabilities must sum to 1")
        if self.kind == "long_range_recall":
            over = sum(1 for d in self.distances if d > self.group_size)
            if 2 * over < len(self.distances):
                raise ConfigurationError(
                    "at least half the recall distances must exceed the "
                    f"group size {self.group_size}")

    def entropy(self) -> float:
        """Per-token source entropy in nats (unigram task only)."""
        p = np.asarray(self.probs, dtype=np.float64)
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # (step, loss, lr)
    final_eval: float = float("nan")
    trainable_params: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss", "lr"])
            for step, loss, lr in self.records:
                writer.writerow([step, repr(float(loss)), repr(float(lr))])

    @property
    def losses(self):
        return [rec[1] for rec in self.records]


# ---------------------------------------------------------------------------
# corpora


def gen_task(task: SyntheticTask, n_samples: int, context_length: int,
             seed: int) -> np.ndarray:
    """Token sequences of shape (n_samples, context_length + 1)."""
    task.validate()
    rng = np.random.default_rng(seed)
    length = context_length + 1
    if task.kind == "unigram_iid":
        return rng.choice(len(task.probs), size=(n_samples, length),
                          p=np.asarray(task.probs))
    if task.kind == "long_range_recall":
        longs = [d for d in task.distances if d > task.group_size]
        seqs = np.full((n_samples, length), FILLER, dtype=np.int64)
        for s in range(n_samples):
            pos, first = 0, True
            while True:
                # an episode with distance d occupies d + 2 tokens
                fit = [d for d in task.distances if pos + d + 2 <= length]
                if first and any(d in longs for d in fit):
                    fit = [d for d in fit if d in longs]
                if not fit:
                    break  # tail stays filler
                dist = int(rng.choice(fit))
                value = task.value_base + int(rng.integers(0, task.value_count))
                seqs[s, pos] = CUE_MARKER
                seqs[s, pos + 1] = value
                seqs[s, pos + dist] = QUERY_MARKER
                seqs[s, pos + dist + 1] = value
                pos += dist + 2
                first = False
        return seqs
    # byte_corpus: documents of one repeated random phrase, separated.
    seqs = np.empty((n_samples, length), dtype=np.int64)
    for s in range(n_samples):
        row = []
        while len(row) < length:
            phrase = task.value_base + rng.integers(
                0, task.value_count, size=task.phrase_len)
            reps = int(rng.integers(2, 6))
            row.extend(np.tile(phrase, reps))
            row.append(task.separator)
        seqs[s] = np.asarray(row[:length])
    return seqs


# ---------------------------------------------------------------------------
# optimizer


def lr_at(step: int, spec: TrainSpec) -> float:
    """Linear 0 -> lr across the warmup, constant afterwards."""
    if step < 0:
        raise ConfigurationError(f"step must be >= 0, got {step}")
    if spec.warmup_steps == 0 or step >= spec.warmup_steps:
        return spec.learning_rate
    return spec.learning_rate * step / spec.warmup_steps


def init_adamw_state(named_params) -> dict:
    return {
        name: {
            "m": np.zeros_like(p.data, dtype=np.float64
                               if p.dtype == np.float64 else np.float32),
            "v": np.zeros_like(p.data, dtype=np.float64
                               if p.dtype == np.float64 else np.float32),
        }
        for name, p in named_params
    }


def adamw_step(named_params, state: dict, step: int, lr: float,
               spec: TrainSpec) -> None:
    """Bias-corrected AdamW with decoupled weight decay; ``step`` is 1-based."""
    b1, b2 = spec.beta1, spec.beta2
    for name, p in named_params:
        st = state[name]
        if st["m"].shape != p.shape:
            raise DimensionError(
                f"optimizer state shape {st['m'].shape} does not match "
                f"parameter {name!r} shape {p.shape}")
        if spec.weight_decay:
            p.data = p.data * (1.0 - lr * spec.weight_decay)
        if p.grad is None:
            continue
        g = p.grad
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * (g * g)
        m_hat = st["m"] / (1.0 - b1 ** step)
        v_hat = st["v"] / (1.0 - b2 ** step)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + spec.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# the loop


def batch_loss(model: TransformerModel, batch: np.ndarray,
               attn_spec: AttentionSpec):
    inputs, targets = batch[:, :-1], batch[:, 1:]
    logits = model.forward(inputs, attn_spec)
    return nc.cross_entropy(logits, targets)


def eval_loss(model: TransformerModel, data: np.ndarray,
              attn_spec: AttentionSpec, batch_size: int = 8) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(data), batch_size):
        chunk = data[lo:lo + batch_size]
        loss = batch_loss(model, chunk, attn_spec)
        total += float(loss.data) * len(chunk)
        count += len(chunk)
    return total / count


def train(model: TransformerModel, task: SyntheticTask,
          attn_spec: AttentionSpec, train_spec: TrainSpec,
          eval_attn_spec: AttentionSpec | None = None,
          n_eval: int = 32) -> TrainLog:
    """Run the loop; deterministic given specs and seed.

    Evaluation defaults to full attention regardless of the training
    pattern (the pattern is a call-time argument, not a weight).
    """
    train_spec.validate()
    task.validate()
    if eval_attn_spec is None:
        eval_attn_spec = AttentionSpec(pattern="full")
    named = model.trainable_parameters()
    state = init_adamw_state(named)
    log = TrainLog(trainable_params=sum(p.data.size for _, p in named))

    eval_data = gen_task(task, n_eval, train_spec.context_length,
                         seed=train_spec.seed + 90001)
    per_step = train_spec.micro_batch * train_spec.grad_accum_steps
    for step in range(train_spec.total_steps):
        batch = gen_task(task, per_step, train_spec.context_length,
                         seed=train_spec.seed * 1_000_003 + step)
        model.zero_grad()
        loss_total = 0.0
        for micro in range(train_spec.grad_accum_steps):
            mb = batch[micro * train_spec.micro_batch:
                       (micro + 1) * train_spec.micro_batch]
            loss = batch_loss(model, mb, attn_spec)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss at step {step} (micro-batch {micro})")
            nc.backward(loss)
            loss_total += loss_value
        if train_spec.grad_accum_steps > 1:
            inv = 1.0 / train_spec.grad_accum_steps
            for _, p in named:
                if p.grad is not None:
                    p.grad = p.grad * inv
        lr = lr_at(step + 1, train_spec)
        adamw_step(named, state, step + 1, lr, train_spec)
        log.records.append((step, loss_total / train_spec.grad_accum_steps, lr))

    log.final_eval = eval_loss(model, eval_data, eval_attn_spec)
    return log


# ---------------------------------------------------------------------------
# key=value run configuration files


def load_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
