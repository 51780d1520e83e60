"""Temperature softmax, KL divergence and the class-wise distillation loss family.

Frozen (stop-gradient) logits must come from a snapshot of the parameters or
from plain constants: passing a graph-attached tensor where a frozen branch is
expected raises :class:`~cskd.errors.ContractError`.

Terms whose weight is exactly zero are not evaluated, so the reductions
(e.g. ``lambda_cls = 0`` giving plain cross-entropy) hold bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, DomainError
from .tensor import Tensor

PROB_FLOOR = 1e-12
KINDS = ("ce", "cskd", "cskd_e", "label_smooth", "max_entropy", "kd", "mixup_cskd")
COMPONENTS = ("ce", "kl_cls", "kl_e", "entropy", "kl_kd")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cskd"
    T: float = 4.0
    lambda_cls: float = 1.0
    lambda_e: float = 1.0
    epsilon: float = 0.1
    beta: float = 1.0
    lambda_kd: float = 1.0
    mixup_alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; choose from {', '.join(KINDS)}")
        values = asdict(self)
        del values["kind"]
        for name, v in values.items():
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")
        if self.T <= 0:
            raise ConfigError(f"temperature must be positive, got {self.T}")
        if self.epsilon >= 1:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be positive, got {self.mixup_alpha}")

    @property
    def needs_partner(self) -> bool:
        return self.kind in ("cskd", "cskd_e", "kd", "mixup_cskd")

    def weights(self) -> dict[str, float]:
        """Coefficient of each logged component in the total loss."""
        t2 = self.T * self.T
        w = dict.fromkeys(COMPONENTS, 0.0)
        w["ce"] = 1.0
        if self.kind in ("cskd", "cskd_e", "kd", "mixup_cskd"):
            w["kl_cls"] = self.lambda_cls * t2
        if self.kind == "cskd_e":
            w["kl_e"] = self.lambda_e * t2
        if self.kind == "kd":
            w["kl_kd"] = self.lambda_kd * t2
        if self.kind == "max_entropy":
            w["entropy"] = -self.beta
        return w


@dataclass
class LossValue:
    total: Tensor
    components: dict[str, float] = field(default_factory=dict)


def _require_frozen(t: Tensor, what: str) -> Tensor:
    t = T.as_tensor(t)
    if t.requires_grad:
        raise ContractError(f"{what} must not carry a gradient graph (stop-gradient violated)")
    return t


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")


def softmax_T(logits, temperature: float) -> Tensor:
    """Row-wise softmax of ``logits / temperature``."""
    _check_temperature(temperature)
    logits = T.as_tensor(logits)
    return T.softmax(logits / temperature, axis=-1)


def log_softmax_T(logits, temperature: float) -> Tensor:
    _check_temperature(temperature)
    logits = T.as_tensor(logits)
    return T.log_softmax(logits / temperature, axis=-1)


def kl_div(p, q) -> Tensor:
    """Batch mean of sum_i p_i log(p_i / q_i), with 0 log 0 = 0 and q floored at 1e-12.

    Gradients flow through ``q`` only.
    """
    p, q = T.as_tensor(p), T.as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"kl_div: shapes {p.shape} and {q.shape} differ")
    if (p.data < 0).any() or (q.data < 0).any():
        raise DomainError("kl_div: distributions must be non-negative")
    pd = p.data
    with np.errstate(divide="ignore"):
        p_log_p = np.where(pd > 0, pd * np.log(np.where(pd > 0, pd, 1.0)), 0.0)
    batch = pd.shape[0] if pd.ndim > 1 else 1
    cross = T.tsum(Tensor(pd) * T.log(T.clamp_min(q, PROB_FLOOR)))
    return (Tensor(p_log_p.sum()) - cross) / float(batch)


def _hard_targets(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"hard labels must be a vector, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y.astype(np.int64)] = 1.0
    return out


def _targets(y, logits: Tensor) -> np.ndarray:
    y = np.asarray(y)
    n, c = logits.shape
    if y.ndim == 2:
        if y.shape != (n, c):
            raise DimensionError(f"soft targets {y.shape} do not match logits {logits.shape}")
        if (y < 0).any() or not np.allclose(y.sum(axis=1), 1.0, atol=1e-9):
            raise DomainError("soft targets must be non-negative rows summing to 1")
        return y.astype(np.float64)
    if y.shape != (n,):
        raise DimensionError(f"{y.shape[0] if y.ndim else 0} labels for {n} logit rows")
    return _hard_targets(y, c)


def cross_entropy(logits, y) -> Tensor:
    """Mean of -sum_c y_c log softmax(logits)_c for hard labels or soft target rows."""
    logits = T.as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be B x C, got {logits.shape}")
    targets = _targets(y, logits)
    return -T.tsum(Tensor(targets) * T.log_softmax(logits, axis=-1)) / float(logits.shape[0])


def entropy(logits) -> Tensor:
    """Mean row entropy of softmax(logits)."""
    logits = T.as_tensor(logits)
    return -T.tsum(T.softmax(logits, axis=-1) * T.log_softmax(logits, axis=-1)) / float(logits.shape[0])


def _distill(frozen_logits: Tensor, logits: Tensor, temperature: float) -> Tensor:
    """KL(softmax_T(frozen) || softmax_T(trainable))."""
    if frozen_logits.shape != logits.shape:
        raise DimensionError(f"frozen logits {frozen_logits.shape} do not match {logits.shape}")
    return kl_div(softmax_T(frozen_logits, temperature), softmax_T(logits, temperature))


def _assemble(cfg: LossConfig, terms: dict[str, Tensor]) -> LossValue:
    weights = cfg.weights()
    total = terms["ce"]
    components = dict.fromkeys(COMPONENTS, 0.0)
    components["ce"] = float(total.data)
    for name in COMPONENTS[1:]:
        if name in terms:
            total = total + terms[name] * weights[name]
            components[name] = float(terms[name].data)
    return LossValue(total, components)


def cskd_loss(logits_x, logits_xp_frozen, y, cfg: LossConfig) -> LossValue:
    """Cross-entropy plus lambda_cls * T^2 * KL(frozen partner || sample).

    ``y`` may be hard labels or soft rows (the Mixup variant).
    """
    logits_x = T.as_tensor(logits_x)
    frozen = _require_frozen(logits_xp_frozen, "partner logits")
    terms = {"ce": cross_entropy(logits_x, y)}
    if cfg.lambda_cls != 0:
        terms["kl_cls"] = _distill(frozen, logits_x, cfg.T)
    return _assemble(cfg, terms)


def cskd_e_loss(
    logits_x_frozen,
    logits_xp_aug_frozen,
    logits_x_aug,
    y,
    cfg: LossConfig,
) -> LossValue:
    """CS-KD on the augmented pair plus a clean-vs-augmented consistency term.

    total = CE(x_aug) + lambda_cls T^2 KL(frozen x'_aug || x_aug)
            + lambda_e T^2 KL(frozen x || x_aug)
    """
    logits_x_aug = T.as_tensor(logits_x_aug)
    clean = _require_frozen(logits_x_frozen, "clean-sample logits")
    partner = _require_frozen(logits_xp_aug_frozen, "partner logits")
    terms = {"ce": cross_entropy(logits_x_aug, y)}
    if cfg.lambda_cls != 0:
        terms["kl_cls"] = _distill(partner, logits_x_aug, cfg.T)
    if cfg.lambda_e != 0:
        terms["kl_e"] = _distill(clean, logits_x_aug, cfg.T)
    return _assemble(cfg, terms)


def label_smoothing_loss(logits, y, epsilon: float) -> Tensor:
    """Cross-entropy against ``(1 - epsilon) * onehot + epsilon / C``."""
    if not 0 <= epsilon < 1:
        raise DomainError(f"epsilon must lie in [0, 1), got {epsilon}")
    logits = T.as_tensor(logits)
    if epsilon == 0:
        return cross_entropy(logits, y)
    c = logits.shape[1]
    target = (1 - epsilon) * _hard_targets(y, c) + epsilon / c
    return cross_entropy(logits, target)


def max_entropy_loss(logits, y, beta: float) -> Tensor:
    """Cross-entropy minus ``beta`` times the mean predictive entropy."""
    if beta < 0:
        raise DomainError(f"beta must be non-negative, got {beta}")
    logits = T.as_tensor(logits)
    ce = cross_entropy(logits, y)
    if beta == 0:
        return ce
    return ce - entropy(logits) * beta


def kd_combined_loss(
    student_logits,
    teacher_logits_frozen,
    partner_logits_frozen,
    y,
    cfg: LossConfig,
) -> LossValue:
    """CS-KD plus lambda_kd * T^2 * KL(teacher || student); lambda_cls = 0 gives plain KD."""
    student_logits = T.as_tensor(student_logits)
    teacher = _require_frozen(teacher_logits_frozen, "teacher logits")
    terms = {"ce": cross_entropy(student_logits, y)}
    if cfg.lambda_cls != 0:
        partner = _require_frozen(partner_logits_frozen, "partner logits")
        terms["kl_cls"] = _distill(partner, student_logits, cfg.T)
    if cfg.lambda_kd != 0:
        terms["kl_kd"] = _distill(teacher, student_logits, cfg.T)
    return _assemble(cfg, terms)


def simple_loss(logits, y, cfg: LossConfig) -> LossValue:
    """Losses that need only the trainable logits: ce, label_smooth, max_entropy."""
    logits = T.as_tensor(logits)
    if cfg.kind == "ce":
        return _assemble(cfg, {"ce": cross_entropy(logits, y)})
    if cfg.kind == "label_smooth":
        return _assemble(cfg, {"ce": label_smoothing_loss(logits, y, cfg.epsilon)})
    if cfg.kind == "max_entropy":
        terms = {"ce": cross_entropy(logits, y)}
        if cfg.beta != 0:
            terms["entropy"] = entropy(logits)
        return _assemble(cfg, terms)
    raise ConfigError(f"loss kind {cfg.kind!r} needs partner or teacher logits")


def weighted_total(components: dict[str, float], cfg: LossConfig) -> float:
    """Recompute the total from logged components (for consistency checks)."""
    weights = cfg.weights()
    return sum(weights[k] * components.get(k, 0.0) for k in COMPONENTS)


def loss_config_from_dict(d: Optional[dict]) -> LossConfig:
    d = dict(d or {})
    known = set(LossConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
    return LossConfig(**d)
