"""Local training for slimmable networks.

Three single-batch update rules are provided:

* superposed_step — one optimizer step whose gradient is a convex
  combination of the full-width cross-entropy and per-sub-width
  distillation losses against the detached full-width logits.
* widthwise_step — every width trained against the ground truth,
  gradients summed, one optimizer step (the classic multi-width baseline).
* sandwich_step — full width against ground truth, then the smallest
  width plus randomly sampled intermediate widths distilled from the
  detached full-width logits, gradients summed unweighted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .slimnet import SlimmableParams, backward, forward, masks_for


def decayed_lr(strong_convexity: float, smoothness: float, t: int) -> float:
    """Step-size schedule 2 / (mu*t + 2L - mu); equals 1/L at t = 1."""
    return 2.0 / (strong_convexity * t + 2.0 * smoothness - strong_convexity)


@dataclass(frozen=True)
class TrainConfig:
    st_weights: tuple[float, ...] = (0.5, 0.5)
    width_ratios: tuple[float, ...] = (0.5, 1.0)
    lr: float = 1e-3
    lr_mode: str = "constant"  # "constant" | "strongly_convex"
    strong_convexity: float = 1.0
    smoothness: float = 1.0
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    algorithm: str = "superposed"  # "superposed" | "widthwise" | "sandwich"

    def validate(self) -> None:
        if len(self.st_weights) != len(self.width_ratios):
            raise ValueError("st_weights and width_ratios must have equal length")
        if any(w <= 0 for w in self.st_weights):
            raise ValueError("st_weights must all be positive")
        if abs(sum(self.st_weights) - 1.0) > 1e-9:
            raise ValueError(f"st_weights must sum to 1, got {sum(self.st_weights)}")
        if list(self.width_ratios) != sorted(self.width_ratios):
            raise ValueError("width_ratios must be ascending")
        if abs(self.width_ratios[-1] - 1.0) > 1e-12:
            raise ValueError("width_ratios must end with 1.0")
        if any(not 0.0 < r <= 1.0 for r in self.width_ratios):
            raise ValueError("width_ratios must lie in (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lr_mode not in ("constant", "strongly_convex"):
            raise ValueError(f"unknown lr_mode {self.lr_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.algorithm not in ("superposed", "widthwise", "sandwich"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def learning_rate(self, t: int) -> float:
        if self.lr_mode == "strongly_convex":
            return decayed_lr(self.strong_convexity, self.smoothness, t)
        return self.lr


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label index out of range")
    return labels


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    labels = _check_labels(logits, labels)
    ls = log_softmax(logits)
    return float(-ls[np.arange(len(labels)), labels].mean())


def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = _check_labels(logits, labels)
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def ipkd_loss(student_logits: np.ndarray, teacher_logits: np.ndarray) -> float:
    """Soft cross-entropy of the student against the teacher's softmax.

    The teacher side is treated as a constant: no gradient flows into it.
    """
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(
            f"student shape {student_logits.shape} != teacher shape {teacher_logits.shape}"
        )
    soft_targets = softmax(teacher_logits)
    return float(-(soft_targets * log_softmax(student_logits)).sum(axis=1).mean())


def ipkd_grad(student_logits: np.ndarray, teacher_logits: np.ndarray) -> np.ndarray:
    """d(ipkd_loss)/d(student_logits); the teacher contributes none."""
    return (softmax(student_logits) - softmax(teacher_logits)) / len(student_logits)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def sgd_update(values: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return values - lr * grad


def adam_update(
    state: AdamState,
    values: np.ndarray,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Bias-corrected moment update; mutates state, returns the new vector."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return values - lr * m_hat / (np.sqrt(v_hat) + eps)


class LocalOptimizer:
    """Per-device optimizer: owns the step counter and Adam moments."""

    def __init__(self, cfg: TrainConfig, n_params: int):
        self.cfg = cfg
        self.t = 0
        self.adam = AdamState(m=np.zeros(n_params), v=np.zeros(n_params))

    def apply(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        lr = self.cfg.learning_rate(self.t)
        if self.cfg.optimizer == "sgd":
            return sgd_update(values, grad, lr)
        return adam_update(
            self.adam, values, grad, lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        )


@dataclass(frozen=True)
class LossReport:
    """Per-step losses: full-width cross-entropy, per-sub-width distillation,
    and the convex combination actually descended."""

    ce_full: float
    kd_losses: tuple[float, ...]
    combined: float


@dataclass(frozen=True, eq=False)
class StepResult:
    params: SlimmableParams
    gradient: np.ndarray
    loss: float
    report: LossReport | None = None


def superposed_step(
    params: SlimmableParams,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    cfg: TrainConfig,
    opt: LocalOptimizer,
) -> StepResult:
    """One convex-combination update over all widths.

    The full-width pass is computed once and reused both for the ground-truth
    loss and, detached, as the distillation teacher for every sub-width.
    """
    masks = masks_for(params.layout, cfg.width_ratios)
    full = masks[-1]
    w = cfg.st_weights

    teacher_logits = forward(params, full, batch_x)
    ce = cross_entropy(teacher_logits, batch_y)
    grad = w[-1] * backward(params, full, batch_x, cross_entropy_grad(teacher_logits, batch_y))

    kd = []
    for i, mask in enumerate(masks[:-1]):
        student_logits = forward(params, mask, batch_x)
        kd.append(ipkd_loss(student_logits, teacher_logits))
        grad += w[i] * backward(params, mask, batch_x, ipkd_grad(student_logits, teacher_logits))

    combined = w[-1] * ce + sum(wi * k for wi, k in zip(w, kd))
    new_values = opt.apply(params.values, grad)
    return StepResult(
        params=params.with_values(new_values),
        gradient=grad,
        loss=combined,
        report=LossReport(ce_full=ce, kd_losses=tuple(kd), combined=combined),
    )


def widthwise_step(
    params: SlimmableParams,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    cfg: TrainConfig,
    opt: LocalOptimizer,
) -> StepResult:
    """Every width trained against the ground truth, widest first; one step."""
    masks = masks_for(params.layout, cfg.width_ratios)
    grad = np.zeros(params.layout.size)
    total = 0.0
    for mask in reversed(masks):
        logits = forward(params, mask, batch_x)
        total += cross_entropy(logits, batch_y)
        grad += backward(params, mask, batch_x, cross_entropy_grad(logits, batch_y))
    new_values = opt.apply(params.values, grad)
    return StepResult(params=params.with_values(new_values), gradient=grad, loss=total)


def sandwich_step(
    params: SlimmableParams,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    cfg: TrainConfig,
    opt: LocalOptimizer,
    n_widths: int | None = None,
    rng: np.random.Generator | None = None,
) -> StepResult:
    """Full width against ground truth first, then distill sampled widths.

    The width sample always contains the smallest ratio; intermediate ratios
    are drawn uniformly without replacement until n_widths widths (counting
    the full and the smallest) have been used.  Losses are summed unweighted.
    """
    masks = masks_for(params.layout, cfg.width_ratios)
    full = masks[-1]
    if n_widths is None:
        n_widths = len(masks)
    n_widths = max(2, min(n_widths, len(masks)))

    teacher_logits = forward(params, full, batch_x)
    ce = cross_entropy(teacher_logits, batch_y)
    grad = backward(params, full, batch_x, cross_entropy_grad(teacher_logits, batch_y))

    sampled = [masks[0]]
    middle = list(masks[1:-1])
    n_extra = n_widths - 2
    if middle and n_extra > 0:
        if n_extra >= len(middle):
            sampled.extend(middle)
        else:
            if rng is None:
                raise ValueError("rng required when sampling a strict subset of widths")
            picks = rng.choice(len(middle), size=n_extra, replace=False)
            sampled.extend(middle[j] for j in sorted(picks))

    total = ce
    for mask in sampled:
        student_logits = forward(params, mask, batch_x)
        total += ipkd_loss(student_logits, teacher_logits)
        grad += backward(params, mask, batch_x, ipkd_grad(student_logits, teacher_logits))

    new_values = opt.apply(params.values, grad)
    return StepResult(params=params.with_values(new_values), gradient=grad, loss=total)


STEP_FUNCTIONS = {
    "superposed": superposed_step,
    "widthwise": widthwise_step,
    "sandwich": sandwich_step,
}
