"""Sliding-window perplexity and the passkey retrieval harness.

Tokenization throughout is byte-level (vocab 256); the protocols are
tokenizer-agnostic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .patterns import AttentionSpec

_LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class EvalSpec:
    context_length: int = 256
    stride: int = 256
    attn: AttentionSpec = AttentionSpec(pattern="full")

    def validate(self):
        if not (0 < self.stride <= self.context_length):
            raise ConfigurationError(
                f"stride {self.stride} must be in (0, context "
                f"{self.context_length}]")


def scored_segments(n_tokens: int, spec: EvalSpec):
    """(window_start, window_end, score_lo, score_hi) per window.

    Windows end at stride, 2*stride, ... and a final short window covers
    any tail. Each window spans the last min(end, C) tokens and scores
    only its newest tokens, so the scored union is exactly [1, n) with no
    overlap. When stride == C the window is widened by one token so the
    oldest scored position still has its conditioning token in view.
    """
    spec.validate()
    if n_tokens < 2:
        raise ContractError(f"need at least 2 tokens, got {n_tokens}")
    segments = []
    prev_end = 0
    end = 0
    while end < n_tokens:
        end = min(end + spec.stride, n_tokens)
        score_lo = max(prev_end, 1)
        start = min(max(0, end - spec.context_length), score_lo - 1)
        segments.append((start, end, score_lo, end))
        prev_end = end
    return segments


def sliding_window_ppl(model, tokens, spec: EvalSpec) -> float:
    """exp(mean NLL in nats) over positions [1, len), scored windowwise.

    ``model`` needs ``forward(tokens, attn_spec) -> logits`` over the
    byte vocabulary; inference runs with the spec's attention (full by
    default).
    """
    tokens = np.asarray(tokens)
    nll_sum = 0.0
    n_scored = 0
    for start, end, lo, hi in scored_segments(len(tokens), spec):
        window = tokens[start:end]
        logits = model.forward(window[None, :], spec.attn)
        logp = _log_softmax(np.asarray(logits.data, dtype=np.float64)[0])
        # logits at window position t predict window token t+1
        for pos in range(lo, hi):
            local = pos - start
            nll_sum -= logp[local - 1, tokens[pos]]
        n_scored += hi - lo
    return float(np.exp(nll_sum / n_scored))


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def ppl_report_csv(path, rows) -> None:
    """rows: iterable of (doc_id, n_tokens, ppl)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["doc_id", "tokens", "ppl"])
        for doc_id, n_tokens, ppl in rows:
            writer.writerow([doc_id, n_tokens, repr(float(ppl))])


# ---------------------------------------------------------------------------
# passkey retrieval

_PREAMBLE = ("There is an important info hidden inside a lot of irrelevant "
             "text. Find it and memorize them. I will quiz you about the "
             "important information there.\n")
_FILLER = ("The grass is green. The sky is blue. The sun is yellow. "
           "Here we go. There and back again. ")
_QUESTION = "What is the pass key? The pass key is"


@dataclass(frozen=True)
class PasskeyTemplate:
    m_repeats: int
    n_repeats: int
    key: int
    text: str

    @property
    def prompt_bytes(self) -> np.ndarray:
        return np.frombuffer(self.text.encode("ascii"), dtype=np.uint8).astype(np.int64)


def passkey_generate(m_repeats: int, n_repeats: int, key: int | None = None,
                     seed: int = 0) -> PasskeyTemplate:
    """Render the retrieval document; the key appears exactly twice."""
    if key is None:
        key = int(np.random.default_rng(seed).integers(10000, 100000))
    if not (10000 <= key <= 99999):
        raise ContractError(f"pass key must be a 5-digit integer, got {key}")
    parts = [
        _PREAMBLE,
        _FILLER * m_repeats + "\n" if m_repeats else "",
        f"The pass key is {key}. Remember it. {key} is the pass key.\n",
        _FILLER * n_repeats + "\n" if n_repeats else "",
        _QUESTION,
    ]
    return PasskeyTemplate(m_repeats, n_repeats, key, "".join(parts))


def repeats_for_length(target_tokens: int) -> tuple[int, int]:
    """Choose near-equal (M, N) so the byte-tokenized document length
    lands within +-5% of ``target_tokens``."""
    fixed = len(passkey_generate(0, 0, key=12362).text)
    per = len(_FILLER)
    budget = max(0, target_tokens - fixed - 2)
    total = int(round(budget / per))
    m = total // 2
    return m, total - m


def greedy_decode(model, prompt: np.ndarray, max_new: int,
                  attn: AttentionSpec | None = None) -> list[int]:
    if attn is None:
        attn = AttentionSpec(pattern="full")
    seq = list(np.asarray(prompt))
    out = []
    for _ in range(max_new):
        logits = model.forward(np.asarray(seq, dtype=np.int64)[None, :], attn)
        nxt = int(np.argmax(np.asarray(logits.data)[0, -1]))
        out.append(nxt)
        seq.append(nxt)
    return out


def passkey_score(model, doc: PasskeyTemplate, trials: int = 10,
                  seed: int = 0, attn: AttentionSpec | None = None):
    """Greedy-decode up to 6 tokens per trial; exact digit match counts.

    Each trial re-renders the document with a fresh random key. Returns
    (accuracy, rows) with one (trial, key, decoded, correct) row each.
    """
    if trials < 1:
        raise ContractError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    rows = []
    successes = 0
    for trial in range(trials):
        key = int(rng.integers(10000, 100000))
        trial_doc = passkey_generate(doc.m_repeats, doc.n_repeats, key=key)
        decoded = greedy_decode(model, trial_doc.prompt_bytes, 6, attn)
        text = bytes(b % 256 for b in decoded).decode("latin-1")
        digits = "".join(ch for ch in text if ch.isdigit())[:5]
        correct = digits == str(key)
        successes += correct
        rows.append((trial, key, text, correct))
    return successes / trials, rows


def passkey_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial", "key", "decoded", "correct"])
        for trial, key, decoded, correct in rows:
            writer.writerow([trial, key, decoded, int(correct)])
