#!/usr/bin/env python3
"""Writes the bundled synthetic corpus (deterministic; no arguments needed)."""
import json
import random
import sys
from pathlib import Path

TECHNICAL = ("phosphorylation transcriptional heterozygous mitochondrial immunohistochemistry "
             "electrophysiological morphogenetic glycosylation chromatin polymerase "
             "cytoskeletal neurodegeneration endocytosis pathophysiological kinase "
             "microtubule-associated ubiquitination metabolomic genotype phenotypic").split()
PLAIN = "cells genes body brain people cause help grow find work make change food blood sleep".split()
LAY_OPENERS = ["We found that", "This study shows", "Scientists looked at", "Our work helps explain"]
TOPICS = ["malaria", "zebrafish", "sleep", "memory", "yeast", "wheat", "bats", "insulin", "coral", "influenza"]


def technical_sentence(rng, n):
    words = [rng.choice(TECHNICAL) for _ in range(n)]
    return " ".join(words).capitalize() + "."


def lay_sentence(rng, topic):
    words = [rng.choice(PLAIN) for _ in range(rng.randint(5, 8))]
    return f"{rng.choice(LAY_OPENERS)} {topic} {' '.join(words)}."


def main(out):
    rng = random.Random(20231015)
    splits = ["train"] * 6 + ["val"] * 2 + ["test"] * 2
    rows = []
    for i, topic in enumerate(TOPICS):
        # Every third article exceeds the 1024-token zero-shot budget.
        article_sentences = 160 if i % 3 == 0 else 25
        article = " ".join(technical_sentence(rng, rng.randint(6, 12)) for _ in range(article_sentences))
        abstract = " ".join(technical_sentence(rng, rng.randint(14, 22)) for _ in range(4 + i % 3))
        lay = " ".join(lay_sentence(rng, topic) for _ in range(4 + i % 2))
        rows.append({"id": f"syn-{i:02d}", "article": article, "abstract": abstract,
                     "lay_summary": lay, "split": splits[i]})
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data/synthetic/corpus.jsonl")
