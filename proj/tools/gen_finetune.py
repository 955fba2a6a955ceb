#!/usr/bin/env python3
"""Derives small fine-tuning sets from data/minicorpus.jsonl into data/finetune/:
code summarization (code -> docstring) and a toy defect task (label 1 when the
function compares for equality)."""
import json
import pathlib
import random

root = pathlib.Path(__file__).resolve().parent.parent / "data"
records = [json.loads(l) for l in (root / "minicorpus.jsonl").read_text().splitlines() if l.strip()]
rng = random.Random(20210916)
rng.shuffle(records)

out = root / "finetune"
out.mkdir(exist_ok=True)


def write(name, rows):
    with open(out / name, "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


summ = [{"source": r["code"], "target": r["docstring"]} for r in records if r.get("docstring")]
write("summarize.train.jsonl", summ[:-20])
write("summarize.valid.jsonl", summ[-20:])
defect = [{"source": r["code"], "target": "1" if "==" in r["code"] else "0"} for r in records]
write("defect.train.jsonl", defect[:60])
write("defect.valid.jsonl", defect[60:80])

mixture = {
    "alpha": 0.7,
    "tasks": [
        {"name": "summarize", "dataset": "summarize.train.jsonl", "validation": "summarize.valid.jsonl",
         "control_code": "Summarize:"},
        {"name": "defect", "dataset": "defect.train.jsonl", "validation": "defect.valid.jsonl",
         "control_code": "Defect:"},
    ],
}
(out / "mixture.json").write_text(json.dumps(mixture, indent=2) + "\n")
