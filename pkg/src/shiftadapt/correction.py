"""Pseudo labeling with learnable label-shift correction.

The correction rescales model logits elementwise (w * logits + b) before the
softmax, is fitted by minimizing NLL on a small labeled calibration set from
the target domain, and falls back to the bias-free form when fitting produces
oversized biases.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SparseVec, featurize_dataset
from .errors import ConfigError, DatasetError
from .model import ModelParams, forward, softmax


@dataclass
class CorrectionParams:
    w: np.ndarray  # (2,)
    b: np.ndarray  # (2,), identically zero when bias_discarded
    bias_discarded: bool = False
    fit_nll_history: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def identity(cls) -> "CorrectionParams":
        return cls(w=np.ones(2), b=np.zeros(2))

    def to_dict(self) -> dict:
        return {
            "w": [float(v) for v in self.w],
            "b": [float(v) for v in self.b],
            "bias_discarded": self.bias_discarded,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CorrectionParams":
        return cls(
            w=np.asarray(obj["w"], dtype=np.float64),
            b=np.asarray(obj["b"], dtype=np.float64),
            bias_discarded=bool(obj.get("bias_discarded", False)),
        )


@dataclass(frozen=True)
class PseudoEntry:
    index: int
    label: int
    confidence: float


@dataclass
class PseudoLabeledSet:
    entries: list[PseudoEntry]
    threshold_used: float

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_empty(self) -> bool:
        return not self.entries

    def indices(self) -> list[int]:
        return [e.index for e in self.entries]

    def labels(self) -> list[int]:
        return [e.label for e in self.entries]

    def prior(self) -> float:
        if not self.entries:
            raise ValueError("empty pseudo-labeled set has no prior")
        return sum(e.label for e in self.entries) / len(self.entries)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(
                    {"index": e.index, "pseudo_label": e.label, "confidence": e.confidence}
                ))
                fh.write("\n")


@dataclass
class CorrectionFitConfig:
    max_iters: int = 500
    tol: float = 1e-8  # stop when the NLL improvement falls below this
    b_max: float = 10.0  # discard the bias when any |b_j| exceeds this

    def __post_init__(self):
        if self.max_iters < 1 or self.tol <= 0 or self.b_max <= 0:
            raise ConfigError("invalid correction fit configuration")


def apply_correction(cp: CorrectionParams, logits: np.ndarray) -> np.ndarray:
    """softmax(w * logits + b), or softmax(w * logits) when the bias was discarded."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (np.all(np.isfinite(cp.w)) and np.all(np.isfinite(cp.b))):
        raise ValueError("correction parameters must be finite")
    if cp.bias_discarded:
        return softmax(cp.w * logits)
    return softmax(cp.w * logits + cp.b)


def _corrected_mean_nll(logits: np.ndarray, labels: np.ndarray, w, b) -> float:
    u = logits * w + b
    u = u - u.max(axis=1, keepdims=True)
    logp = u - np.log(np.exp(u).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def _corrected_nll_grad(logits, labels, w, b):
    u = logits * w + b
    u = u - u.max(axis=1, keepdims=True)
    p = np.exp(u)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    p /= len(labels)
    return (p * logits).sum(axis=0), p.sum(axis=0)


def _descend(logits, labels, fit_bias: bool, cfg: CorrectionFitConfig):
    """Full-batch gradient descent with Armijo backtracking from the identity."""
    w = np.ones(2)
    b = np.zeros(2)
    nll = _corrected_mean_nll(logits, labels, w, b)
    history = [nll]
    step = 1.0
    for _ in range(cfg.max_iters):
        gw, gb = _corrected_nll_grad(logits, labels, w, b)
        if not fit_bias:
            gb = np.zeros(2)
        gnorm2 = float(gw @ gw + gb @ gb)
        if gnorm2 < 1e-24:
            break
        t = step
        accepted = False
        while t > 1e-20:
            w_new = w - t * gw
            b_new = b - t * gb
            nll_new = _corrected_mean_nll(logits, labels, w_new, b_new)
            if nll_new <= nll - 1e-4 * t * gnorm2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        improvement = nll - nll_new
        w, b, nll = w_new, b_new, nll_new
        history.append(nll)
        step = t * 2.0
        if improvement < cfg.tol:
            break
    return w, b, history


def fit_correction(
    model: ModelParams,
    calib: Dataset,
    fit_cfg: Optional[CorrectionFitConfig] = None,
) -> CorrectionParams:
    """Fit (w, b) on a labeled target calibration set with the model frozen.

    Initialization is the identity correction, so the fitted NLL never exceeds
    the uncorrected NLL. The bias is refitted at zero (bias_discarded) when
    fitting pushes any |b_j| past b_max or fails to improve; if even that
    regresses, the identity correction is returned with a warning.
    """
    cfg = fit_cfg or CorrectionFitConfig()
    if len(calib) == 0:
        raise DatasetError("calibration set must be non-empty")
    if not calib.is_fully_labeled():
        raise DatasetError("calibration set must be fully labeled")
    feats = featurize_dataset(calib, model.hash_dim)
    logits = np.stack([forward(model, f).logits for f in feats])
    labels = np.asarray([ex.label for ex in calib.examples], dtype=np.int64)

    warnings = []
    if len(set(labels.tolist())) == 1:
        warnings.append(f"calibration set contains a single class ({int(labels[0])})")

    w, b, history = _descend(logits, labels, fit_bias=True, cfg=cfg)
    bias_discarded = False
    if np.max(np.abs(b)) > cfg.b_max or history[-1] > history[0]:
        w, b, history = _descend(logits, labels, fit_bias=False, cfg=cfg)
        bias_discarded = True
        b = np.zeros(2)

    # Backtracking from the identity start makes regression impossible; keep
    # an explicit guard so a violation can never escape unnoticed.
    identity_nll = _corrected_mean_nll(logits, labels, np.ones(2), np.zeros(2))
    if history[-1] > identity_nll:
        warnings.append("fit regressed past the identity correction; returning identity")
        return CorrectionParams(
            w=np.ones(2), b=np.zeros(2), fit_nll_history=[identity_nll], warnings=warnings
        )
    return CorrectionParams(
        w=w, b=b, bias_discarded=bias_discarded,
        fit_nll_history=[float(v) for v in history], warnings=warnings,
    )


def _pseudo_entries(cp: CorrectionParams, logits: np.ndarray, tau: float) -> list[PseudoEntry]:
    entries = []
    for i in range(logits.shape[0]):
        probs = apply_correction(cp, logits[i])
        label = int(np.argmax(probs))  # argmax takes the first maximum: ties go to class 0
        conf = float(probs[label])
        if conf >= tau:
            entries.append(PseudoEntry(index=i, label=label, confidence=conf))
    return entries


def pseudo_label(
    model: ModelParams, cp: CorrectionParams, target: Dataset, tau: float
) -> PseudoLabeledSet:
    """Corrected-argmax pseudo labels for every target example with confidence >= tau.

    An empty result is a valid status the adaptation stage must handle.
    """
    if not 0.5 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0.5, 1), got {tau}")
    if len(target) == 0:
        raise DatasetError("target dataset must be non-empty")
    feats = featurize_dataset(target, model.hash_dim)
    logits = np.stack([forward(model, f).logits for f in feats])
    return PseudoLabeledSet(entries=_pseudo_entries(cp, logits, tau), threshold_used=tau)


def predict_labels(
    model: ModelParams,
    feats: Sequence[SparseVec],
    cp: Optional[CorrectionParams] = None,
) -> list[int]:
    """Hard predictions, optionally through the corrected softmax."""
    preds = []
    for f in feats:
        logits = forward(model, f).logits
        probs = apply_correction(cp, logits) if cp is not None else softmax(logits)
        preds.append(int(np.argmax(probs)))
    return preds
