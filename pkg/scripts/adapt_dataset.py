#!/usr/bin/env python3
"""Convert public multi-hop QA dev files into the engine's corpus/dataset
format.

Two input shapes are recognized:

* a JSON array of records with ``context`` (list of [title, [sentences]])
  and ``supporting_facts`` (list of [title, sent_id]) — the shape used by
  the HotpotQA and 2WikiMultihopQA dev sets;
* line-delimited JSON with a ``paragraphs`` list carrying ``title``,
  ``paragraph_text`` and ``is_supporting`` — the MuSiQue shape.

Paragraphs are deduplicated by content across questions into one corpus
file; gold paragraph ids point into it.  This is offline tooling, not part
of the engine's API.

Usage:
    python scripts/adapt_dataset.py INPUT --corpus corpus.jsonl --dataset dataset.jsonl
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path


def paragraph_id(title: str, text: str) -> str:
    digest = hashlib.sha1(f"{title}\n{text}".encode("utf-8")).hexdigest()[:12]
    return f"par-{digest}"


def load_records(path: Path) -> list[dict]:
    raw = path.read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        return json.loads(raw)
    return [json.loads(line) for line in raw.splitlines() if line.strip()]


def adapt_hotpot_style(records: list[dict]):
    corpus: dict[str, dict] = {}
    examples = []
    for record in records:
        title_to_pid: dict[str, str] = {}
        for title, sentences in record.get("context", []):
            text = "".join(sentences).strip()
            if not text:
                continue
            pid = paragraph_id(title, text)
            corpus.setdefault(pid, {"id": pid, "title": title, "text": text})
            title_to_pid[title] = pid
        gold_ids = sorted({
            title_to_pid[title]
            for title, _sent in record.get("supporting_facts", [])
            if title in title_to_pid
        })
        examples.append({
            "id": str(record["_id"]),
            "question": record["question"],
            "gold_answers": [record["answer"]],
            "gold_paragraph_ids": gold_ids,
        })
    return corpus, examples


def adapt_musique_style(records: list[dict]):
    corpus: dict[str, dict] = {}
    examples = []
    for record in records:
        gold_ids = []
        for paragraph in record.get("paragraphs", []):
            title = paragraph.get("title", "")
            text = paragraph.get("paragraph_text", "").strip()
            if not text:
                continue
            pid = paragraph_id(title, text)
            corpus.setdefault(pid, {"id": pid, "title": title, "text": text})
            if paragraph.get("is_supporting"):
                gold_ids.append(pid)
        answers = [record["answer"]]
        answers.extend(record.get("answer_aliases", []))
        examples.append({
            "id": str(record["id"]),
            "question": record["question"],
            "gold_answers": answers,
            "gold_paragraph_ids": sorted(set(gold_ids)),
        })
    return corpus, examples


def adapt(records: list[dict]):
    first = records[0] if records else {}
    if "context" in first:
        return adapt_hotpot_style(records)
    if "paragraphs" in first:
        return adapt_musique_style(records)
    raise SystemExit("unrecognized input shape: expected 'context' or "
                     "'paragraphs' fields")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("input", type=Path)
    parser.add_argument("--corpus", type=Path, required=True)
    parser.add_argument("--dataset", type=Path, required=True)
    parser.add_argument("--limit", type=int, default=0,
                        help="keep only the first N questions (0 = all)")
    args = parser.parse_args(argv)

    records = load_records(args.input)
    if args.limit:
        records = records[: args.limit]
    corpus, examples = adapt(records)

    with open(args.corpus, "w", encoding="utf-8") as handle:
        for pid in sorted(corpus):
            handle.write(json.dumps(corpus[pid], ensure_ascii=False) + "\n")
    with open(args.dataset, "w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(json.dumps(example, ensure_ascii=False) + "\n")
    print(f"wrote {len(corpus)} paragraphs and {len(examples)} questions")
    return 0


if __name__ == "__main__":
    sys.exit(main())
