"""Training loop (pair, snapshot, loss, backward, SGD), evaluation and sweeps.

All randomness in a run derives from ``cfg.seed``: parameter init uses the
seed directly, and independent child streams (spawned from one
``SeedSequence``) drive shuffling, partner sampling, augmentation and Mixup.
Keeping the streams apart means a loss that does not consume, say, Mixup
draws leaves the shuffle order untouched.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics as M
from .config import DataSpec, TrainConfig
from .data import Dataset, augment, hash_split, load_csv, load_idx, mixup_batch, one_hot, paired_batch, synth_gaussians
from .errors import ConfigError, DomainError, NumericError
from .losses import COMPONENTS, LossValue, cskd_e_loss, cskd_loss, kd_combined_loss, simple_loss
from .models import (
    ArchSpec,
    ModelParams,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    snapshot,
    spec_from_dict,
)
from .optim import lr_at, sgd_step
from .tensor import backward, softmax

logger = logging.getLogger(__name__)

EVAL_CHUNK = 1024


@dataclass
class RunManifest:
    config: dict
    seed: int
    rows: list[dict]
    final: dict
    calibration: M.CalibrationReport
    wall_time: float = 0.0
    params: Optional[ModelParams] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        # wall time is deliberately left out: manifests must be byte-reproducible
        return {
            "config": self.config,
            "seed": self.seed,
            "epochs": self.rows,
            "final": {"metrics": self.final, "calibration": self.calibration.to_dict()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


@dataclass
class EvalResult:
    metrics: dict
    calibration: M.CalibrationReport
    predictions: M.Predictions
    logprobs: np.ndarray


# -- data and model resolution ----------------------------------------------------------------


def load_datasets(spec: DataSpec) -> tuple[Dataset, Dataset]:
    if spec.kind == "synth":
        ds = synth_gaussians(spec.classes, spec.per_class, spec.dim, spec.spread, spec.seed, n_samples=spec.n_samples)
        return hash_split(ds, spec.test_fraction)
    if spec.kind == "csv":
        train, test = load_csv(spec.train_path), load_csv(spec.test_path)
    else:
        train = load_idx(spec.train_images, spec.train_labels)
        test = load_idx(spec.test_images, spec.test_labels)
    c = max(train.n_classes, test.n_classes)
    return Dataset(train.inputs, train.labels, c), Dataset(test.inputs, test.labels, c)


def resolve_arch(model: dict, ds: Dataset) -> ArchSpec:
    """Fill input geometry and class count from the data; reject contradictions."""
    d = dict(model)
    arch = d.get("arch")
    inferred = {"n_classes": ds.n_classes}
    if arch == "mlp":
        inferred["input_dim"] = int(np.prod(ds.inputs.shape[1:]))
    elif arch == "convnet":
        if not ds.is_spatial:
            raise ConfigError(f"convnet needs image data, got inputs of shape {ds.inputs.shape}")
        inferred.update(in_channels=ds.inputs.shape[1], height=ds.inputs.shape[2], width=ds.inputs.shape[3])
    for key, value in inferred.items():
        if key in d and d[key] != value:
            raise ConfigError(f"model.{key}={d[key]} contradicts the data ({value})")
        d[key] = value
    try:
        return spec_from_dict(d)
    except Exception as exc:
        raise ConfigError(f"bad model spec: {exc}") from None


# -- prediction and metrics ---------------------------------------------------------------------


def predict(params: ModelParams, ds: Dataset) -> M.Predictions:
    frozen = params if params.frozen else snapshot(params)
    probs, feats = [], []
    for start in range(0, len(ds), EVAL_CHUNK):
        out = forward(frozen, ds.inputs[start : start + EVAL_CHUNK])
        probs.append(softmax(out.logits).data)
        feats.append(out.penultimate.data)
    return M.Predictions(np.concatenate(probs), ds.labels, np.concatenate(feats))


def default_topk(n_classes: int) -> tuple[int, ...]:
    return (1, 5) if n_classes >= 5 else (1,)


def compute_metrics(
    preds: M.Predictions, n_bins: int = 20, topk: Optional[Sequence[int]] = None
) -> tuple[dict, M.CalibrationReport]:
    topk = default_topk(preds.n_classes) if topk is None else tuple(topk)
    out = {f"top{k}_error": M.topk_error(preds, k) for k in topk}
    report = M.ece(preds, n_bins)
    out["ece"] = report.ece
    if len(preds) >= 2:
        out["recall_at_1"] = M.recall_at_k(preds, 1)
    return out, report


def write_outputs(out_dir, metrics: dict, report, preds: M.Predictions, logprobs, split: str = "test") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M.write_metrics_csv(out / "metrics.csv", [(k, split, v) for k, v in metrics.items()])
    M.write_reliability_csv(out / "reliability_bins.csv", report)
    M.write_logprob_csv(out / "logprob_misclassified.csv", logprobs)
    M.write_features_csv(out / "features.csv", preds.features, preds.labels)


# -- training -----------------------------------------------------------------------------------


class _Streams:
    def __init__(self, seed: int):
        shuffle, pair, aug, mix = np.random.SeedSequence(seed).spawn(4)
        self.shuffle = np.random.default_rng(shuffle)
        self.pair = np.random.default_rng(pair)
        self.aug = np.random.default_rng(aug)
        self.mix = np.random.default_rng(mix)


def _batch_loss(
    params: ModelParams,
    cfg: TrainConfig,
    ds: Dataset,
    idx: np.ndarray,
    rng: _Streams,
    teacher: Optional[ModelParams],
) -> LossValue:
    lc = cfg.loss
    x, y = ds.inputs[idx], ds.labels[idx]
    use_aug = ds.is_spatial and cfg.augment.enabled

    def aug(a):
        return augment(a, cfg.augment, rng.aug) if use_aug else a

    if not lc.needs_partner:
        return simple_loss(forward(params, aug(x)).logits, y, lc)

    xp = paired_batch(ds, idx, rng.pair).x_prime
    frozen = snapshot(params)
    x_in, xp_in = aug(x), aug(xp)

    if lc.kind == "cskd":
        return cskd_loss(forward(params, x_in).logits, forward(frozen, xp_in).logits, y, lc)
    if lc.kind == "cskd_e":
        return cskd_e_loss(
            forward(frozen, x).logits, forward(frozen, xp_in).logits, forward(params, x_in).logits, y, lc
        )
    if lc.kind == "kd":
        return kd_combined_loss(
            forward(params, x_in).logits, forward(teacher, x_in).logits, forward(frozen, xp_in).logits, y, lc
        )
    # mixup_cskd: one (lambda, permutation) shared by the sample and partner branches
    lam = float(rng.mix.beta(lc.mixup_alpha, lc.mixup_alpha))
    perm = rng.mix.permutation(idx.size)
    y1 = one_hot(y, ds.n_classes)
    x_mix, y_mix = mixup_batch(x_in, y1, x_in[perm], y1[perm], lam)
    xp_mix, _ = mixup_batch(xp_in, y1, xp_in[perm], y1[perm], lam)
    return cskd_loss(forward(params, x_mix).logits, forward(frozen, xp_mix).logits, y_mix, lc)


def run_training(
    cfg: TrainConfig,
    train_ds: Dataset,
    test_ds: Optional[Dataset] = None,
    arch: Optional[ArchSpec] = None,
    teacher: Optional[ModelParams] = None,
) -> RunManifest:
    """Train from scratch on ``train_ds``; evaluate on ``test_ds`` when given."""
    t0 = time.perf_counter()
    arch = arch or resolve_arch(cfg.model, train_ds)
    if test_ds is not None and test_ds.n_classes > arch.n_classes:
        raise ConfigError(f"test data has {test_ds.n_classes} classes, model has {arch.n_classes}")
    if cfg.loss.kind == "kd":
        if teacher is None:
            teacher = load_checkpoint(cfg.teacher_checkpoint)
        if teacher.spec.n_classes != arch.n_classes:
            raise ConfigError(f"teacher predicts {teacher.spec.n_classes} classes, student {arch.n_classes}")

    params = init_params(arch, cfg.seed)
    names = list(params.tensors)
    velocity = [np.zeros_like(params[n].data) for n in names]
    rng = _Streams(cfg.seed)
    opt = cfg.optimizer
    n = len(train_ds)
    rows: list[dict] = []
    step = 0
    metrics: dict = {}
    report = None

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, opt.lr0, cfg.lr_drops)
        order = rng.shuffle.permutation(n)
        sums = dict.fromkeys(("total",) + COMPONENTS, 0.0)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            params.zero_grad()
            lv = _batch_loss(params, cfg, train_ds, idx, rng, teacher)
            total = float(lv.total.data)
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss {total} at step {step} (epoch {epoch})")
            backward(lv.total)
            try:
                sgd_step(
                    [params[k].data for k in names],
                    [params[k].grad for k in names],
                    velocity,
                    lr,
                    opt.momentum,
                    opt.weight_decay,
                )
            except NumericError as exc:
                raise NumericError(f"{exc} at step {step} (epoch {epoch})") from None
            sums["total"] += total * idx.size
            for k in COMPONENTS:
                sums[k] += lv.components[k] * idx.size
            step += 1

        row = {"epoch": epoch, "lr": lr, "train": {k: v / n for k, v in sums.items()}, "test": None}
        last = epoch == cfg.epochs - 1
        if test_ds is not None and (last or (epoch + 1) % cfg.eval_every == 0):
            metrics, report = compute_metrics(predict(params, test_ds), cfg.ece_bins)
            row["test"] = metrics
        rows.append(row)
        logger.info("epoch %d lr %.4g loss %.6f %s", epoch, lr, row["train"]["total"], row["test"] or "")

    if report is None:
        metrics, report = compute_metrics(predict(params, train_ds), cfg.ece_bins)
    return RunManifest(
        config=cfg.to_dict(include_output=False),
        seed=cfg.seed,
        rows=rows,
        final=metrics,
        calibration=report,
        wall_time=time.perf_counter() - t0,
        params=params,
    )


def train(cfg: TrainConfig) -> RunManifest:
    """Run one experiment; write all artifacts to ``cfg.output_dir`` when set."""
    train_ds, test_ds = load_datasets(cfg.data)
    manifest = run_training(cfg, train_ds, test_ds)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(manifest.to_json())
        (out / "timing.json").write_text(json.dumps({"wall_time_s": manifest.wall_time}) + "\n")
        save_checkpoint(manifest.params, out / "checkpoint.bin")
        preds = predict(manifest.params, test_ds)
        write_outputs(out, manifest.final, manifest.calibration, preds, M.misclassified_logprobs(preds))
    return manifest


def evaluate(
    checkpoint,
    dataset: Dataset,
    n_bins: int = 20,
    topk: Optional[Sequence[int]] = None,
    out_dir=None,
) -> EvalResult:
    """Metrics, reliability bins, log-prob export and features for a saved model."""
    params = checkpoint if isinstance(checkpoint, ModelParams) else load_checkpoint(checkpoint)
    if dataset.labels.size and dataset.labels.max() >= params.spec.n_classes:
        raise ConfigError(
            f"dataset has labels up to {int(dataset.labels.max())}, model predicts {params.spec.n_classes} classes"
        )
    topk = default_topk(params.spec.n_classes) if topk is None else tuple(topk)
    for k in topk:
        if not 1 <= k <= params.spec.n_classes:
            raise DomainError(f"top-{k} error is undefined for {params.spec.n_classes} classes")
    preds = predict(params, dataset)
    metrics, report = compute_metrics(preds, n_bins, topk)
    logprobs = M.misclassified_logprobs(preds)
    if out_dir is not None:
        write_outputs(out_dir, metrics, report, preds, logprobs)
    return EvalResult(metrics, report, preds, logprobs)


def sweep(
    base: TrainConfig,
    temperatures: Sequence[float],
    lambdas: Sequence[float],
) -> list[dict]:
    """One run per (T, lambda_cls) cell, sequential, all with the base seed."""
    if not temperatures or not lambdas:
        raise ConfigError("sweep grid must be non-empty")
    table = []
    for t in temperatures:
        for lam in lambdas:
            out = None
            if base.output_dir:
                out = str(Path(base.output_dir) / f"T{t:g}_lcls{lam:g}")
            cfg = replace(base, loss=replace(base.loss, T=float(t), lambda_cls=float(lam)), output_dir=out)
            manifest = train(cfg)
            table.append({"T": float(t), "lambda_cls": float(lam), **manifest.final})
    if base.output_dir:
        write_sweep_csv(Path(base.output_dir) / "sweep.csv", table)
    return table


def write_sweep_csv(path, table: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(table[0])
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for row in table:
            w.writerow([repr(float(row[k])) for k in keys])
