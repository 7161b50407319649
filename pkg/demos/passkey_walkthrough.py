"""Walk through the passkey retrieval protocol: what a document looks
like, how length targeting works, and what scoring reports.

Run:  python3 demos/passkey_walkthrough.py
"""

import numpy as np

from shiftattn import numcore as nc
from shiftattn.evaluation import (passkey_generate, passkey_score,
                                  repeats_for_length)


class EchoOracle:
    """Reads the key out of the prompt and echoes ' <key>'."""

    def forward(self, tokens, spec=None):
        text = bytes(np.asarray(tokens)[0].tolist()).decode("latin-1")
        key = text[text.index("The pass key is ") + 16:][:5]
        tail = text[text.rindex("The pass key is") + 15:]
        target = " " + key
        nxt = target[len(tail)] if len(tail) < len(target) else "."
        logits = np.full(256, -100.0)
        logits[ord(nxt)] = 0.0
        return nc.tensor(np.broadcast_to(logits, (1, len(text), 256)).copy())


def main():
    doc = passkey_generate(1, 1, key=12362)
    print("=== minimal document (M=1, N=1) ===")
    print(doc.text)
    print(f"\n[{len(doc.prompt_bytes)} byte tokens; key appears "
          f"{doc.text.count(str(doc.key))} times]")

    print("\n=== length targeting ===")
    for target in (1024, 4096, 16384):
        m, n = repeats_for_length(target)
        actual = len(passkey_generate(m, n, key=12362).prompt_bytes)
        print(f"  target {target:>6}: M={m:>3} N={n:>3} -> {actual} tokens "
              f"({100 * (actual - target) / target:+.1f}%)")

    print("\n=== scoring an oracle retriever, 10 trials ===")
    doc = passkey_generate(2, 2)
    accuracy, rows = passkey_score(EchoOracle(), doc, trials=10, seed=0)
    for trial, key, decoded, correct in rows:
        print(f"  trial {trial}: key={key} decoded={decoded!r} "
              f"{'ok' if correct else 'MISS'}")
    print(f"accuracy: {accuracy:.2f}")


if __name__ == "__main__":
    main()
