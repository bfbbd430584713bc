"""Entity F1 over BIO tags, classification accuracy and ANLS."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DataError, TagParseError


@dataclass(frozen=True)
class EvalReport:
    name: str
    value: float
    support: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value {self.value} outside [0, 1]")

    def line(self) -> str:
        sup = " ".join(f"{k}={v}" for k, v in self.support.items())
        return f"{self.name}\t{self.value:.6f}\t{sup}".rstrip()


def _parse_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, sep, etype = tag.partition("-")
    if sep != "-" or prefix not in ("B", "I") or not etype:
        raise TagParseError(f"malformed BIO tag {tag!r}")
    return prefix, etype


def bio_entities(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Maximal typed segments ``(type, start, end_inclusive)``.

    An ``I-X`` that does not continue an ``X`` segment opens a new one.
    """
    out = set()
    cur: tuple[str, int] | None = None
    for i, tag in enumerate(tags):
        prefix, etype = _parse_tag(tag)
        if cur is not None and (prefix != "I" or etype != cur[0]):
            out.add((cur[0], cur[1], i - 1))
            cur = None
        if prefix != "O" and cur is None:
            cur = (etype, i)
    if cur is not None:
        out.add((cur[0], cur[1], len(tags) - 1))
    return out


def entity_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> EvalReport:
    """Micro entity F1 over documents; a match needs equal type and boundaries."""
    if len(gold) != len(pred):
        raise DataError(f"{len(gold)} gold documents but {len(pred)} predicted")
    n_gold = n_pred = n_match = 0
    for g, p in zip(gold, pred):
        if len(g) != len(p):
            raise DataError(f"tag sequences differ in length ({len(g)} vs {len(p)})")
        ge, pe = bio_entities(g), bio_entities(p)
        n_gold += len(ge)
        n_pred += len(pe)
        n_match += len(ge & pe)
    precision = n_match / n_pred if n_pred else 0.0
    recall = n_match / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport("entity_f1", f1, {"gold": n_gold, "pred": n_pred, "matched": n_match,
                                         "precision": round(precision, 6), "recall": round(recall, 6)})


def accuracy(gold: Sequence[int], pred: Sequence[int]) -> EvalReport:
    if not gold:
        raise DataError("accuracy of an empty set is undefined")
    if len(gold) != len(pred):
        raise DataError(f"{len(gold)} gold labels but {len(pred)} predictions")
    correct = sum(int(g == p) for g, p in zip(gold, pred))
    return EvalReport("accuracy", correct / len(gold), {"correct": correct, "total": len(gold)})


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_similarity(a: str, b: str) -> float:
    a, b = a.strip().lower(), b.strip().lower()
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def anls(preds: Sequence[str], golds: Sequence[Sequence[str]], tau: float = 0.5) -> EvalReport:
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} predictions but {len(golds)} gold answer sets")
    if not preds:
        raise DataError("ANLS of an empty question set is undefined")
    total = 0.0
    for p, answers in zip(preds, golds):
        if not answers:
            raise DataError("every question needs at least one gold answer")
        s = max(normalized_similarity(p, g) for g in answers)
        total += s if s >= tau else 0.0
    return EvalReport("anls", total / len(preds), {"questions": len(preds)})


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}: line {n}: {e.msg}") from None
    return rows


def evaluate_dumps(pred_path, gold_path) -> list[EvalReport]:
    """Score a prediction dump against a gold file of the same shape.

    Records are matched by ``id``. Token-label records carry ``labels``,
    doc-class records ``class``, QA records ``answer`` (gold may use
    ``answers`` for a list of acceptable strings).
    """
    preds = {r["id"]: r for r in _read_jsonl(pred_path)}
    golds = _read_jsonl(gold_path)
    missing = [g["id"] for g in golds if g["id"] not in preds]
    if missing:
        raise DataError(f"no prediction for documents {missing[:5]}")
    by_task: dict[str, list[tuple[dict, dict]]] = {}
    for g in golds:
        by_task.setdefault(g.get("task", ""), []).append((g, preds[g["id"]]))
    reports = []
    for task, pairs in by_task.items():
        if task == "token-label":
            reports.append(entity_f1([g["labels"] for g, _ in pairs], [p["labels"] for _, p in pairs]))
        elif task == "doc-class":
            reports.append(accuracy([g["class"] for g, _ in pairs], [p["class"] for _, p in pairs]))
        elif task == "extractive-qa":
            reports.append(anls([p["answer"] for _, p in pairs],
                                [g.get("answers") or [g["answer"]] for g, _ in pairs]))
        else:
            raise DataError(f"unknown task {task!r} in gold file")
    return reports


def write_report(reports: Sequence[EvalReport], path) -> None:
    Path(path).write_text("".join(r.line() + "\n" for r in reports))
