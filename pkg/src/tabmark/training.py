"""Losses, the optimizer, the staged training loop, and gradient checking.

The structure decoder trains as two weight-shared students (left-to-right and
right-to-left).  Each student minimizes cross-entropy plus a KL divergence
pulling it toward the other student's realigned output distribution; the
reference side of the KL is held constant (no gradient flows into the other
student through the KL term).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from . import synth
from . import vocab as V
from .autodiff import Tensor
from .model import TableModel, cell_buffer_layout

REPORT_FIELDS = (
    "struct_ce_ltor",
    "struct_ce_rtol",
    "kl_ltor",
    "kl_rtol",
    "content_ce",
    "bbox",
    "total",
)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    p = np.exp(z - z.max(axis=-1, keepdims=True))
    return p / p.sum(axis=-1, keepdims=True)


def realign(rows: np.ndarray) -> np.ndarray:
    """Map one student's per-position rows onto the other's positions.

    Both students end with EOS, so the EOS slot stays put and the token
    slots reverse.  The map is its own inverse.
    """
    rows = np.asarray(rows)
    if rows.shape[0] == 0:
        return rows
    return np.concatenate([rows[-2::-1], rows[-1:]], axis=0)


@dataclass(frozen=True)
class LossWeights:
    struct_ce: float = 1.0
    kl: float = 1.0
    content_ce: float = 1.0
    bbox: float = 1.0


@dataclass(frozen=True)
class LossReport:
    """Per-sample (or per-epoch mean) loss components; all nonnegative."""

    struct_ce_ltor: float
    struct_ce_rtol: float
    kl_ltor: float
    kl_rtol: float
    content_ce: float
    bbox: float
    total: float

    def __post_init__(self) -> None:
        for name in REPORT_FIELDS[:-1]:
            v = getattr(self, name)
            if math.isfinite(v) and v < -1e-9:
                raise ValueError(f"negative loss component {name}={v}")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class DistributionSeq:
    """Per-position predicted probabilities paired with ground-truth ids."""

    probs: np.ndarray  # (L, V), rows sum to 1
    targets: np.ndarray  # (L,) ints

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.probs.ndim != 2 or self.targets.shape != (self.probs.shape[0],):
            raise ValueError("need (L, V) probabilities and L targets")
        if not np.allclose(self.probs.sum(axis=-1), 1.0, atol=1e-6):
            raise ValueError("probability rows must sum to 1")
        if np.any((self.targets < 0) | (self.targets >= self.probs.shape[1])):
            raise ValueError("target id outside the vocabulary")

    def __len__(self) -> int:
        return self.probs.shape[0]


def _kl_rows(ref: np.ndarray, q: np.ndarray) -> float:
    """Mean over positions of KL(ref || q); 0 * log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ref > 0.0, ref * (np.log(ref) - np.log(q)), 0.0)
    return float(terms.sum(axis=-1).mean())


def mutual_loss(
    q_ltor: DistributionSeq, q_rtol: DistributionSeq, weights: LossWeights | None = None
) -> LossReport:
    """Probability-space reference for the bidirectional structure loss.

    The fused training path works from logits for numerical stability; this
    form exists to pin its semantics and for direct evaluation in tests.
    """
    w = weights or LossWeights()
    if len(q_ltor) != len(q_rtol):
        raise ValueError("the two students must decode the same sample")
    n = np.arange(len(q_ltor))
    ce_lt = float(-np.log(q_ltor.probs[n, q_ltor.targets]).mean())
    ce_rt = float(-np.log(q_rtol.probs[n, q_rtol.targets]).mean())
    kl_lt = _kl_rows(realign(q_rtol.probs), q_ltor.probs)
    kl_rt = _kl_rows(realign(q_ltor.probs), q_rtol.probs)
    total = w.struct_ce * (ce_lt + ce_rt) + w.kl * (kl_lt + kl_rt)
    return LossReport(ce_lt, ce_rt, kl_lt, kl_rt, 0.0, 0.0, total)


def structure_mutual_loss(model: TableModel, body_ids, img_feats, kl_refs=None):
    """Teacher-forced bidirectional structure loss, differentiable.

    Returns (parts, hidden, kl_refs): parts maps component name to a scalar
    Tensor; hidden is the LtoR student's per-token state aligned with
    body_ids (the SOS row dropped); kl_refs are the constant reference
    distributions actually used, so a caller can re-evaluate the identical
    objective (finite differences pin them).
    """
    body = list(body_ids)
    sv = V.STRUCTURE
    inp_lt = [sv.sos] + body
    tgt_lt = body + [sv.eos]
    rev = body[::-1]
    inp_rt = [sv.sos] + rev
    tgt_rt = rev + [sv.eos]

    logits_lt, hidden_lt = model.html_step(inp_lt, "ltor", img_feats)
    logits_rt, _ = model.html_step(inp_rt, "rtol", img_feats)

    if kl_refs is None:
        kl_refs = (realign(softmax(logits_rt.data)), realign(softmax(logits_lt.data)))
    ref_lt, ref_rt = kl_refs

    parts = {
        "struct_ce_ltor": ad.cross_entropy(logits_lt, tgt_lt),
        "struct_ce_rtol": ad.cross_entropy(logits_rt, tgt_rt),
        "kl_ltor": ad.kl_to_const(ref_lt, logits_lt),
        "kl_rtol": ad.kl_to_const(ref_rt, logits_rt),
    }
    token_hidden = ad.take_rows(hidden_lt, np.arange(1, len(inp_lt)))
    return parts, token_hidden, kl_refs


def content_loss(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy over non-PAD target positions (SEP and EOS count)."""
    t = np.asarray(targets, dtype=np.int64)
    keep = np.flatnonzero(t != V.CONTENT.pad)
    if keep.size == 0:
        return Tensor(np.asarray(0.0))
    if keep.size == t.size:
        return ad.cross_entropy(logits, t)
    return ad.cross_entropy(ad.take_rows(logits, keep), t[keep])


def bbox_loss(pred, truth) -> Tensor:
    """Mean absolute error over all 4n box components; 0 for empty tables."""
    from .model import boxes_to_array

    if isinstance(pred, list):
        pred = Tensor(boxes_to_array(pred))
    if isinstance(truth, list):
        truth = boxes_to_array(truth)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 4)
    if tuple(pred.shape) != truth.shape:
        raise ValueError(f"box shape mismatch: {pred.shape} vs {truth.shape}")
    if truth.shape[0] == 0:
        return Tensor(np.asarray(0.0))
    return ad.mean(ad.absolute(ad.add(pred, Tensor(-truth))))


@dataclass
class SampleLoss:
    total: Tensor
    report: LossReport
    kl_refs: tuple[np.ndarray, np.ndarray]


def sample_loss(
    model: TableModel,
    record: synth.TableRecord,
    weights: LossWeights | None = None,
    kl_refs=None,
) -> SampleLoss:
    """Teacher-forced total loss of one record through every stage.

    The LtoR student's hidden states feed the fetcher, refiner, bbox head and
    cell decoder (inference decodes structure left-to-right).  The bbox
    variant conditions cells on its own predicted boxes, matching inference.
    """
    w = weights or LossWeights()
    cfg = model.cfg
    img = synth.prepare_image(record.image, cfg.image_side)
    feats = model.encode_image(img)

    body = list(record.structure_ids)
    parts, token_hidden, kl_refs = structure_mutual_loss(model, body, feats, kl_refs)

    sf = model.struct_features(body, token_hidden)
    refined = model.refine(model.fetch_cells(sf))
    boxes_pred = model.bbox_head(refined)
    parts["bbox"] = bbox_loss(boxes_pred, record.boxes)

    concat = V.concat_cells([V.tokenize_content(c) for c in record.cells])
    buf = [V.CONTENT.sos] + list(concat.ids)
    layout = cell_buffer_layout(buf, record.n_cells())
    cond = model.cell_conditioning(refined, boxes_pred)
    logits = model.cell_step(buf, layout, cond, feats)
    parts["content_ce"] = content_loss(logits, list(concat.ids) + [V.CONTENT.eos])

    total = ad.add(
        ad.add(
            ad.mul(ad.add(parts["struct_ce_ltor"], parts["struct_ce_rtol"]), w.struct_ce),
            ad.mul(ad.add(parts["kl_ltor"], parts["kl_rtol"]), w.kl),
        ),
        ad.add(ad.mul(parts["content_ce"], w.content_ce), ad.mul(parts["bbox"], w.bbox)),
    )
    report = LossReport(
        **{k: float(parts[k].data) for k in REPORT_FIELDS[:-1]}, total=float(total.data)
    )
    return SampleLoss(total, report, kl_refs)


class AdamW:
    """Adaptive moments with decoupled weight decay.

    A zero learning rate still advances the moment state but leaves every
    weight bitwise untouched.  Parameters without a gradient are skipped.
    """

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self._m[name], self._v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.lr == 0.0:
                continue
            p.data = p.data - self.lr * self.wd * p.data
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lrs: tuple[float, float, float] = (1e-3, 1e-4, 1e-5)
    stage_proportions: tuple[int, int, int] = (25, 3, 2)
    weight_decay: float = 0.01
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)


def lr_schedule(epochs: int, lrs=(1e-3, 1e-4, 1e-5), proportions=(25, 3, 2)) -> list[float]:
    """Per-epoch learning rate; stage lengths proportional to `proportions`.

    With the defaults and 30 epochs the stages are exactly 25, 3 and 2 epochs.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    if len(lrs) != len(proportions):
        raise ValueError("one learning rate per stage")
    cum = np.cumsum(proportions, dtype=np.float64)
    out = []
    for e in range(epochs):
        stage = int(np.searchsorted(cum * epochs / cum[-1], e, side="right"))
        out.append(float(lrs[min(stage, len(lrs) - 1)]))
    return out


class TrainingDiverged(RuntimeError):
    pass


def train(
    model: TableModel,
    corpus,
    tcfg: TrainConfig | None = None,
    out_dir: str | None = None,
) -> list[dict]:
    """Run the staged loop over the corpus; returns per-epoch metric rows.

    corpus: TableRecords, or (id, record) pairs as load_corpus yields them.
    With out_dir set, writes metrics.jsonl (one row per epoch, no timing
    fields) and model.ckpt there.
    """
    tcfg = tcfg or TrainConfig()
    records = [r[1] if isinstance(r, tuple) else r for r in corpus]
    if not records:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(tcfg.seed)
    opt = AdamW(model.params, lr=tcfg.lrs[0], weight_decay=tcfg.weight_decay)
    metrics: list[dict] = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    log_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w") if out_dir else None
    try:
        for epoch, lr in enumerate(lr_schedule(tcfg.epochs, tcfg.lrs, tcfg.stage_proportions)):
            opt.lr = lr
            order = rng.permutation(len(records))
            sums = dict.fromkeys(REPORT_FIELDS, 0.0)
            for start in range(0, len(order), tcfg.batch_size):
                batch = order[start : start + tcfg.batch_size]
                model.params.zero_grad()
                for idx in batch:
                    out = sample_loss(model, records[idx], tcfg.weights)
                    if not math.isfinite(out.report.total):
                        raise TrainingDiverged(
                            f"non-finite loss at epoch {epoch}, sample {idx}: {out.report}"
                        )
                    ad.mul(out.total, 1.0 / len(batch)).backward()
                    for k in REPORT_FIELDS:
                        sums[k] += getattr(out.report, k)
                opt.step()
            row = {"epoch": epoch, "lr": lr}
            row.update({k: sums[k] / len(records) for k in REPORT_FIELDS})
            metrics.append(row)
            if log_fh:
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    if out_dir:
        checkpoint.save(os.path.join(out_dir, "model.ckpt"), model)
    return metrics


def gradcheck(model: TableModel, record: synth.TableRecord, weights=None, step: float = 1e-5):
    """Max relative error between analytic and central-difference gradients.

    The KL references are pinned at the starting point so both sides
    differentiate the identical objective.  Checks every element of every
    parameter tensor; meant for tiny configs.
    """
    w = weights or LossWeights()
    with ad.no_grad():
        refs = sample_loss(model, record, w).kl_refs
    model.params.zero_grad()
    sample_loss(model, record, w, kl_refs=refs).total.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in model.params.items()
    }
    model.params.zero_grad()

    def evaluate() -> float:
        with ad.no_grad():
            return float(sample_loss(model, record, w, kl_refs=refs).total.data)

    worst = 0.0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = evaluate()
            flat[i] = keep - step
            down = evaluate()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            worst = max(worst, abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-3))
    return worst
