"""Analytical FLOPs accounting for the decoder stack.

A multiply-add counts as 2 FLOPs. Causal masking is not discounted: the
attention term corresponds to full seq x seq score/value products, which
is what reproduces the published per-category breakdown.

Categories:

* attn  = 4 * L * seq * R * d_model, R = seq (full) or group size
* proj  = 8 * L * seq * d_model^2
* ffn   = 6 * L * seq * d_model * d_ff
* others = output head (2 * seq * d_model * vocab) + RMS norms;
  the embedding lookup contributes no multiply-adds.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .model import ModelConfig
from .patterns import AttentionSpec


@dataclass(frozen=True)
class FlopsReport:
    attn: float
    proj: float
    ffn: float
    others: float

    @property
    def total(self) -> float:
        return self.attn + self.proj + self.ffn + self.others

    def as_dict(self) -> dict:
        return {"attn": self.attn, "proj": self.proj, "ffn": self.ffn,
                "others": self.others, "total": self.total}


def attention_reach(spec: AttentionSpec, seq: int) -> int:
    """Per-query score width R of the pattern's attention kernel."""
    if spec.pattern == "full":
        return seq
    if spec.pattern in ("short", "s2"):
        g = spec.group_size
        if g is None or seq % g != 0:
            raise ConfigurationError(
                f"sequence {seq} not divisible by group size {g}")
        return g
    raise ConfigurationError(
        f"no analytic reach for pattern {spec.pattern!r}")


def flops_profile(cfg: ModelConfig, seq: int, spec: AttentionSpec,
                  batch: int = 1) -> FlopsReport:
    if seq < 1 or batch < 1:
        raise ConfigurationError(f"invalid geometry: seq={seq}, batch={batch}")
    reach = attention_reach(spec, seq)
    d, dff, l, v = cfg.d_model, cfg.d_ff, cfg.n_layers, cfg.vocab_size
    attn = 4.0 * l * seq * reach * d
    proj = 8.0 * l * seq * d * d
    ffn = 6.0 * l * seq * d * dff
    norms = 4.0 * seq * d * (2 * l + 1)
    others = 2.0 * seq * d * v + norms
    return FlopsReport(attn=batch * attn, proj=batch * proj,
                       ffn=batch * ffn, others=batch * others)


def speedup_table(cfg: ModelConfig, seqs, specs) -> list[dict]:
    """Per (seq, spec) report plus ratios against full attention."""
    if not seqs or not specs:
        raise ConfigurationError("speedup_table needs nonempty seq and spec lists")
    rows = []
    for seq in seqs:
        full = flops_profile(cfg, seq, AttentionSpec(pattern="full"))
        for spec in specs:
            report = flops_profile(cfg, seq, spec)
            rows.append({
                "seq": seq,
                "spec": spec,
                "report": report,
                "attn_ratio": report.attn / full.attn,
                "total_ratio": report.total / full.total,
            })
    return rows


# Published 7B breakdown (tera-FLOPs): seq -> (attn_full, attn_grouped
# with G = seq/4, proj, ffn, others, total_full, total_grouped).
PUBLISHED_7B_TFLOPS = {
    8192: (35.2, 8.8, 35.2, 70.9, 2.2, 143.5, 117.1),
    16384: (140.7, 35.2, 70.4, 141.8, 4.3, 357.2, 251.7),
    32768: (562.9, 140.7, 140.7, 283.7, 8.7, 996.0, 573.8),
    65536: (2251.8, 562.9, 281.5, 567.4, 17.3, 3118.0, 1429.1),
}

# Tolerances: attn/proj/ffn are fully determined by the formulas; the
# "others" bucket of the published profile is partially unstated, so it
# and the totals get a looser bound.
TIGHT_RTOL = 0.01
LOOSE_RTOL = 0.05


def paper_check(cfg: ModelConfig) -> list[dict]:
    """Compare the model against every published breakdown cell."""
    results = []

    def cell(name, ours, published, rtol):
        ours_t = ours / 1e12
        results.append({
            "cell": name,
            "ours_tflops": ours_t,
            "published_tflops": published,
            "rtol": rtol,
            "ok": abs(ours_t - published) <= rtol * published,
        })

    for seq, row in PUBLISHED_7B_TFLOPS.items():
        attn_full, attn_g, proj, ffn, others, total_full, total_g = row
        full = flops_profile(cfg, seq, AttentionSpec(pattern="full"))
        grouped = flops_profile(
            cfg, seq, AttentionSpec(pattern="s2", group_size=seq // 4))
        cell(f"{seq}/attn/full", full.attn, attn_full, TIGHT_RTOL)
        cell(f"{seq}/attn/s2", grouped.attn, attn_g, TIGHT_RTOL)
        cell(f"{seq}/proj", full.proj, proj, TIGHT_RTOL)
        cell(f"{seq}/ffn", full.ffn, ffn, TIGHT_RTOL)
        cell(f"{seq}/others", full.others, others, LOOSE_RTOL)
        cell(f"{seq}/total/full", full.total, total_full, LOOSE_RTOL)
        cell(f"{seq}/total/s2", grouped.total, total_g, LOOSE_RTOL)
    return results


# ---------------------------------------------------------------------------
# rendering


def format_report(seq: int, spec: AttentionSpec, report: FlopsReport,
                  fmt: str = "text") -> str:
    label = spec.pattern if spec.group_size is None else (
        f"{spec.pattern}(G={spec.group_size})")
    vals = report.as_dict()
    if fmt == "csv":
        head = "seq,pattern,attn,proj,ffn,others,total"
        row = ",".join([str(seq), label] + [f"{vals[k]:.6e}" for k in
                                            ("attn", "proj", "ffn", "others", "total")])
        return head + "\n" + row
    if fmt != "text":
        raise ConfigurationError(f"unknown format {fmt!r}")
    lines = [f"FLOPs profile: seq={seq} pattern={label}"]
    for key in ("attn", "proj", "ffn", "others", "total"):
        lines.append(f"  {key:<7}{vals[key] / 1e12:>12.1f} T"
                     f"  ({100.0 * vals[key] / vals['total']:5.1f}%)")
    return "\n".join(lines)
