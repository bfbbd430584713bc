"""Pre-training, fine-tuning and evaluation loops.

Reference mode is single-threaded: every batch is reduced in document index
order and every random draw comes from a generator seeded by
``(run seed, step, slot)``, so equal configs give bitwise-equal loss logs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .. import config as model_presets
from ..batching import Batch, collate
from ..config import ModelConfig
from ..docmodel import TAGS, DocumentRecord, EncodedInput, Vocabulary, codebook_levels, encode_document, read_corpus
from ..errors import ConfigError, DataError, NumericError
from ..heads import (
    DOC_CLASS,
    EXTRACTIVE_QA,
    TOKEN_LABEL,
    TaskHeadConfig,
    TaskModel,
    doc_class_loss,
    prediction_record,
    qa_loss,
    qa_spans,
    token_label_loss,
)
from ..masking import MaskingConfig, build_plan
from ..metrics import EvalReport, accuracy, anls, entity_f1, write_report
from ..objectives import LOG_HEADER, LossBreakdown, ObjectiveSwitches, Pretrainer
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .optim import OptimizerState, adam_step

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class RunConfig:
    seed: int
    corpus: str | None = None
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=model_presets.desk)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    objectives: ObjectiveSwitches = field(default_factory=ObjectiveSwitches)
    batch_size: int = 8
    accum_steps: int = 1
    total_steps: int = 500
    peak_lr: float = 1e-4
    warmup_frac: float = 0.048
    decay: str = "linear"
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-6
    weight_decay: float = 1e-2
    checkpoint_every: int = 0
    precision: str = "float32"
    threads: int = 1
    task: str = TOKEN_LABEL
    head_shape: str = "linear"
    max_answer_len: int = 30
    init_checkpoint: str | None = None
    fresh_init: bool = False
    eval_corpus: str | None = None
    checkpoint: str | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.accum_steps < 1:
            raise ConfigError("batch_size and accum_steps must be positive")
        if self.batch_size % self.accum_steps:
            raise ConfigError(
                f"batch size {self.batch_size} not divisible by {self.accum_steps} accumulation steps")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.precision not in DTYPES:
            raise ConfigError(f"precision must be one of {sorted(DTYPES)}")

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.precision]

    @property
    def float_width(self) -> int:
        return 8 if self.precision == "float64" else 4


def _setup(run: RunConfig):
    torch.set_num_threads(run.threads)
    torch.manual_seed(run.seed)


def _load_docs(path: str | None, what: str = "corpus") -> list[DocumentRecord]:
    if path is None:
        raise ConfigError(f"no {what} path given")
    return list(read_corpus(path))


def _optimizer(run: RunConfig) -> OptimizerState:
    return OptimizerState(
        peak_lr=run.peak_lr,
        total_steps=max(run.total_steps, 1),
        warmup_frac=run.warmup_frac,
        betas=tuple(run.betas),
        eps=run.eps,
        weight_decay=run.weight_decay,
        decay=run.decay,
    )


def batch_indices(n_docs: int, batch_size: int, step: int, seed: int) -> list[int]:
    """Documents for 1-based ``step``: consecutive slices of per-epoch permutations."""
    out = []
    start = (step - 1) * batch_size
    for k in range(start, start + batch_size):
        epoch, pos = divmod(k, n_docs)
        perm = np.random.default_rng([seed, epoch, 7919]).permutation(n_docs)
        out.append(int(perm[pos]))
    return out


def plan_rng(seed: int, step: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, slot])


def _combine(parts: list[tuple[LossBreakdown, float]]) -> LossBreakdown:
    """Weighted sum of micro-batch breakdowns (weights = share of the batch)."""
    l_mlm = sum(p.l_mlm.detach() * w for p, w in parts)
    l_mim = sum(p.l_mim.detach() * w for p, w in parts)
    l_wpa = sum(p.l_wpa.detach() * w for p, w in parts)
    return LossBreakdown(
        l_mlm=l_mlm, l_mim=l_mim, l_wpa=l_wpa, total=l_mlm + l_mim + l_wpa,
        n_mlm=sum(p.n_mlm for p, _ in parts),
        n_mim=sum(p.n_mim for p, _ in parts),
        n_wpa=sum(p.n_wpa for p, _ in parts),
    )


def accumulate_gradients(model: torch.nn.Module, loss_fn, batch: Batch, accum_steps: int):
    """Backward over ``accum_steps`` equal slices of ``batch``, each scaled by its share.

    ``loss_fn(model, sub_batch)`` returns a LossBreakdown (or a scalar tensor).
    Returns the list of ``(result, weight)`` pairs.
    """
    B = batch.size
    micro = B // accum_steps
    parts = []
    for a in range(accum_steps):
        sub = batch.select(slice(a * micro, (a + 1) * micro))
        out = loss_fn(model, sub)
        loss = out.total if isinstance(out, LossBreakdown) else out
        w = micro / B
        if loss.requires_grad:
            (loss * w).backward()
        parts.append((out, w))
    return parts


def _named_grads(model: torch.nn.Module):
    params = dict(model.named_parameters())
    grads = {n: p.grad for n, p in params.items()}
    return {n: p.data for n, p in params.items()}, grads


def model_meta(model_cfg: ModelConfig, vocab: Vocabulary, **extra) -> dict:
    return {"model": model_cfg.to_dict(), "vocab": vocab.tokens, **extra}


@dataclass
class PretrainResult:
    log_lines: list[str]
    checkpoint: Path
    model: Pretrainer
    vocab: Vocabulary


def pretrain(run: RunConfig, docs: list[DocumentRecord] | None = None) -> PretrainResult:
    _setup(run)
    codebook_levels(run.model.image_vocab_size)  # fail before touching the corpus
    docs = _load_docs(run.corpus) if docs is None else docs
    if not docs:
        raise DataError("pre-training corpus is empty")
    cfg = run.model
    vocab = Vocabulary.build((w for d in docs for w in d.words), max_size=cfg.text_vocab_size)
    encs = [encode_document(d, cfg, vocab) for d in docs]
    model = Pretrainer(cfg).to(run.dtype)
    if run.init_checkpoint:
        _, tensors = load_checkpoint(run.init_checkpoint)
        load_into(model, tensors, strict=False)
    state = _optimizer(run)
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "pretrain.ckpt"
    log_path = out_dir / "loss_log.tsv"

    def save():
        save_checkpoint(ckpt, model.state_dict(), model_meta(cfg, vocab, stage="pretrain", step=state.step),
                        run.float_width)
        log.info("checkpoint %s at step %d", ckpt, state.step)

    def loss_fn(m, sub):
        return m(sub, run.objectives)

    lines = [LOG_HEADER]
    with open(log_path, "w") as log_file:
        log_file.write(LOG_HEADER + "\n")
        for step in range(1, run.total_steps + 1):
            idx = batch_indices(len(encs), run.batch_size, step, run.seed)
            plans = [build_plan(encs[i], run.masking, plan_rng(run.seed, step, slot), len(vocab),
                                cfg.image_vocab_size)
                     for slot, i in enumerate(idx)]
            batch = collate([encs[i] for i in idx], plans, run.dtype)
            model.zero_grad(set_to_none=True)
            parts = accumulate_gradients(model, loss_fn, batch, run.accum_steps)
            lb = _combine(parts)
            line = lb.log_line(step)
            lines.append(line)
            log_file.write(line + "\n")
            log_file.flush()
            log.debug("step %d total %.6f", step, float(lb.total))
            if not torch.isfinite(lb.total):
                raise NumericError(f"non-finite loss at step {step}; last checkpoint kept at {ckpt}")
            if run.objectives.any:
                params, grads = _named_grads(model)
                adam_step(params, grads, state)
            if run.checkpoint_every and step % run.checkpoint_every == 0:
                save()
    save()
    return PretrainResult(lines, ckpt, model, vocab)


def label_list(docs: list[DocumentRecord], task: str) -> list[str] | int:
    if task == TOKEN_LABEL:
        seen = {t for d in docs for t in (d.labels or {}).get("word_labels", [])}
        extra = sorted(seen - set(TAGS))
        return list(TAGS) + extra
    if task == DOC_CLASS:
        classes = [(d.labels or {}).get("doc_class") for d in docs]
        if any(c is None for c in classes):
            raise ConfigError("doc-class task needs labels.doc_class on every document")
        return max(classes) + 1
    return 2


def _task_targets(enc: EncodedInput, doc: DocumentRecord, task: str, tags: list[str] | None):
    labels = doc.labels or {}
    if task == TOKEN_LABEL:
        if "word_labels" not in labels:
            raise ConfigError(f"{doc.id}: token-label task needs labels.word_labels")
        tag_id = {t: i for i, t in enumerate(tags)}
        out = np.full(enc.text_len, -1, dtype=np.int64)
        for pos in np.flatnonzero(enc.real_text):
            out[pos] = tag_id[labels["word_labels"][enc.word_index[pos]]]
        return out
    if task == DOC_CLASS:
        if "doc_class" not in labels:
            raise ConfigError(f"{doc.id}: doc-class task needs labels.doc_class")
        return int(labels["doc_class"])
    ans = labels.get("answer")
    if ans is None:
        raise ConfigError(f"{doc.id}: extractive-qa task needs labels.answer")
    if ans["end"] >= enc.num_words:
        raise DataError(f"{doc.id}: answer span falls outside the truncated text")
    return int(ans["start"]) + 1, int(ans["end"]) + 1


def _task_batch_targets(targets: list, task: str):
    if task == TOKEN_LABEL:
        return torch.from_numpy(np.stack(targets))
    if task == DOC_CLASS:
        return torch.tensor(targets, dtype=torch.int64)
    return (torch.tensor([t[0] for t in targets], dtype=torch.int64),
            torch.tensor([t[1] for t in targets], dtype=torch.int64))


def task_loss(model: TaskModel, batch: Batch, targets) -> torch.Tensor:
    logits = model.logits(batch)
    kind = model.task.kind
    if kind == TOKEN_LABEL:
        return token_label_loss(logits, targets, batch.real_text)
    if kind == DOC_CLASS:
        return doc_class_loss(logits, targets)
    return qa_loss(logits, targets[0], targets[1], batch.real_text)


def _select_targets(targets, idx: slice):
    if isinstance(targets, tuple):
        return tuple(t[idx] for t in targets)
    return targets[idx]


@dataclass
class FinetuneResult:
    report: EvalReport
    checkpoint: Path
    model: TaskModel
    losses: list[float]


def _build_task_model(run: RunConfig, docs: list[DocumentRecord]):
    labels = label_list(docs, run.task)
    num_classes = len(labels) if isinstance(labels, list) else labels
    task = TaskHeadConfig(run.task, num_classes=max(num_classes, 2), shape=run.head_shape,
                          max_answer_len=run.max_answer_len)
    if run.init_checkpoint:
        meta, tensors = load_checkpoint(run.init_checkpoint)
        cfg = ModelConfig.from_dict(meta["model"])
        vocab = Vocabulary(meta["vocab"])
        model = TaskModel(cfg, task).to(run.dtype)
        load_into(model.encoder, tensors, prefix="encoder.")
    elif run.fresh_init:
        cfg = run.model
        vocab = Vocabulary.build((w for d in docs for w in d.words), max_size=cfg.text_vocab_size)
        model = TaskModel(cfg, task).to(run.dtype)
    else:
        raise ConfigError("finetune needs --init-checkpoint or --fresh-init")
    return model, cfg, vocab, labels


def finetune(run: RunConfig, docs: list[DocumentRecord] | None = None) -> FinetuneResult:
    _setup(run)
    docs = _load_docs(run.corpus) if docs is None else docs
    if not docs:
        raise DataError("fine-tuning corpus is empty")
    model, cfg, vocab, labels = _build_task_model(run, docs)
    tags = labels if isinstance(labels, list) else None
    encs = [encode_document(d, cfg, vocab) for d in docs]
    targets = [_task_targets(e, d, run.task, tags) for e, d in zip(encs, docs)]
    state = _optimizer(run)
    losses = []
    for step in range(1, run.total_steps + 1):
        idx = batch_indices(len(encs), run.batch_size, step, run.seed)
        batch = collate([encs[i] for i in idx], None, run.dtype)
        tgt = _task_batch_targets([targets[i] for i in idx], run.task)
        model.zero_grad(set_to_none=True)
        micro = run.batch_size // run.accum_steps
        total = 0.0
        for a in range(run.accum_steps):
            sl = slice(a * micro, (a + 1) * micro)
            loss = task_loss(model, batch.select(sl), _select_targets(tgt, sl))
            (loss * (micro / run.batch_size)).backward()
            total += loss.item() * micro / run.batch_size
        if not np.isfinite(total):
            raise NumericError(f"non-finite task loss at step {step}")
        losses.append(total)
        params, grads = _named_grads(model)
        adam_step(params, grads, state)

    out_dir = Path(run.out_dir)
    ckpt = out_dir / "finetune.ckpt"
    meta = model_meta(cfg, vocab, stage="finetune", step=state.step,
                      task=asdict(model.task), labels=tags)
    save_checkpoint(ckpt, model.state_dict(), meta, run.float_width)
    eval_docs = _load_docs(run.eval_corpus, "evaluation corpus") if run.eval_corpus else docs
    report = _evaluate_model(model, cfg, vocab, tags, eval_docs, out_dir, run.dtype)
    return FinetuneResult(report, ckpt, model, losses)


@torch.no_grad()
def predict(model: TaskModel, encs: list[EncodedInput], docs: list[DocumentRecord],
            tags: list[str] | None, dtype=torch.float32, batch_size: int = 16) -> list[dict]:
    model.eval()
    kind = model.task.kind
    preds = []
    for s in range(0, len(encs), batch_size):
        chunk = encs[s: s + batch_size]
        batch = collate(chunk, None, dtype)
        logits = model.logits(batch)
        if kind == TOKEN_LABEL:
            ids = logits.argmax(-1)
            for b, enc in enumerate(chunk):
                preds.append({"labels": [tags[int(i)] for i in ids[b][batch.real_text[b]]]})
        elif kind == DOC_CLASS:
            for c in logits.argmax(-1).tolist():
                preds.append({"class": int(c)})
        else:
            spans = qa_spans(logits, batch.real_text, k=1, max_len=model.task.max_answer_len)
            for b, enc in enumerate(chunk):
                i, j = spans[b][0]
                words = docs[s + b].words
                preds.append({"span": [i, j], "answer": " ".join(words[i: j + 1])})
    model.train()
    return preds


def gold_record(doc: DocumentRecord, enc: EncodedInput, kind: str) -> dict:
    labels = doc.labels or {}
    if kind == TOKEN_LABEL:
        return {"labels": labels["word_labels"][: enc.num_words]}
    if kind == DOC_CLASS:
        return {"class": int(labels["doc_class"])}
    a = labels["answer"]
    return {"span": [a["start"], a["end"]], "answer": " ".join(doc.words[a["start"]: a["end"] + 1])}


def _evaluate_model(model, cfg, vocab, tags, docs, out_dir: Path, dtype) -> EvalReport:
    kind = model.task.kind
    encs = [encode_document(d, cfg, vocab) for d in docs]
    preds = predict(model, encs, docs, tags, dtype)
    golds = [gold_record(d, e, kind) for d, e in zip(docs, encs)]
    if kind == TOKEN_LABEL:
        report = entity_f1([g["labels"] for g in golds], [p["labels"] for p in preds])
    elif kind == DOC_CLASS:
        report = accuracy([g["class"] for g in golds], [p["class"] for p in preds])
    else:
        report = anls([p["answer"] for p in preds], [[g["answer"]] for g in golds])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "predictions.jsonl", "w") as f:
        for d, p in zip(docs, preds):
            f.write(prediction_record(d.id, kind, **p) + "\n")
    with open(out_dir / "gold.jsonl", "w") as f:
        for d, g in zip(docs, golds):
            f.write(prediction_record(d.id, kind, **g) + "\n")
    write_report([report], out_dir / "report.tsv")
    return report


def load_task_model(path, dtype=torch.float32):
    meta, tensors = load_checkpoint(path)
    if "task" not in meta:
        raise ConfigError(f"{path} holds no task head; run finetune first")
    cfg = ModelConfig.from_dict(meta["model"])
    task = TaskHeadConfig(**meta["task"])
    model = TaskModel(cfg, task).to(dtype)
    load_into(model, tensors)
    return model, cfg, Vocabulary(meta["vocab"]), meta.get("labels")


def evaluate(run: RunConfig, docs: list[DocumentRecord] | None = None) -> EvalReport:
    if not run.checkpoint:
        raise ConfigError("evaluate needs a fine-tuned checkpoint")
    docs = _load_docs(run.eval_corpus or run.corpus) if docs is None else docs
    model, cfg, vocab, tags = load_task_model(run.checkpoint, run.dtype)
    return _evaluate_model(model, cfg, vocab, tags, docs, Path(run.out_dir), run.dtype)


def with_overrides(run: RunConfig, **changes) -> RunConfig:
    return replace(run, **changes)
