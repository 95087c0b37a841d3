"""Regenerate goldens/text_keys_v1.tsv: 1000 texts with their 64-bit text keys.

Both the core package and the embedding exporter must agree on every line;
their test suites read this file. Output is deterministic. Run from the
repository root:

    python3 scripts/make_goldens.py
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from threadforge.features import text_key
from threadforge.preprocess import normalize_tweet

WORDS = ("breaking news just confirmed police report witnesses say crowd fled "
         "officials deny sources claim hoax video shows nobody hurt suspect "
         "arrested earlier tonight downtown area residents shaken updates soon "
         "cafe naïve déjà coördinate zürich").split()
EMOJI = ["\U0001F602", "\U0001F525", "❤️", "\U0001F62D", "\U0001F914"]
DECOR = ["http://t.co/{0}", "https://example.com/{0}/x", "@user{0}", "#tag{0}"]


def make_texts(n=1000, seed=20260814):
    rng = np.random.default_rng(seed)
    texts = []
    for i in range(n):
        k = int(rng.integers(2, 9))
        parts = [WORDS[int(rng.integers(0, len(WORDS)))] for _ in range(k)]
        if rng.random() < 0.4:
            parts.insert(int(rng.integers(0, len(parts) + 1)),
                         DECOR[int(rng.integers(0, len(DECOR)))].format(i))
        if rng.random() < 0.3:
            parts.append(EMOJI[int(rng.integers(0, len(EMOJI)))])
        if rng.random() < 0.15:
            parts = [p.upper() if j % 2 else p for j, p in enumerate(parts)]
        texts.append(" ".join(parts))
    return texts


def main():
    out = Path(__file__).resolve().parent.parent / "goldens" / "text_keys_v1.tsv"
    out.parent.mkdir(exist_ok=True)
    lines = []
    for text in make_texts():
        key = text_key(normalize_tweet(text).tokens)
        lines.append(f"{key:016x}\t{text}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} lines -> {out}")


if __name__ == "__main__":
    main()
