"""scikit-learn estimator wrapping the training loop.

>>> from cskd.estimator import CSKDClassifier
>>> clf = CSKDClassifier(hidden_layer_sizes=(64, 32), learning_rate=0.01).fit(X, y)  # doctest: +SKIP
>>> clf.predict_proba(X_test)  # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import OptimConfig, TrainConfig
from .data import AugPolicy, Dataset
from .losses import LossConfig
from .models import forward, snapshot
from .tensor import softmax
from .training import EVAL_CHUNK, run_training


class CSKDClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Neural classifier trained with cross-entropy or one of its regularized variants.

    ``loss`` picks the objective (``"cskd"`` by default; see
    :data:`cskd.losses.KINDS`). ``transform`` returns penultimate-layer
    features, so the estimator also works as a feature extractor inside a
    :class:`~sklearn.pipeline.Pipeline`.

    Fitted attributes: ``classes_``, ``n_features_in_``, ``params_`` (the
    trained :class:`~cskd.models.ModelParams`) and ``history_`` (per-epoch
    training losses).
    """

    def __init__(
        self,
        loss="cskd",
        temperature=4.0,
        lambda_cls=1.0,
        lambda_e=1.0,
        epsilon=0.1,
        beta=1.0,
        lambda_kd=1.0,
        mixup_alpha=1.0,
        arch="mlp",
        hidden_layer_sizes=(256, 128),
        epochs=30,
        batch_size=32,
        learning_rate=0.1,
        momentum=0.9,
        weight_decay=1e-4,
        lr_drops=(15, 22),
        flip_p=0.5,
        pad=4,
        teacher=None,
        random_state=0,
    ):
        self.loss = loss
        self.temperature = temperature
        self.lambda_cls = lambda_cls
        self.lambda_e = lambda_e
        self.epsilon = epsilon
        self.beta = beta
        self.lambda_kd = lambda_kd
        self.mixup_alpha = mixup_alpha
        self.arch = arch
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_drops = lr_drops
        self.flip_p = flip_p
        self.pad = pad
        self.teacher = teacher
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        model = {"arch": self.arch}
        if self.arch == "mlp":
            model["hidden"] = list(self.hidden_layer_sizes)
        return TrainConfig(
            model=model,
            loss=LossConfig(
                kind=self.loss,
                T=self.temperature,
                lambda_cls=self.lambda_cls,
                lambda_e=self.lambda_e,
                epsilon=self.epsilon,
                beta=self.beta,
                lambda_kd=self.lambda_kd,
                mixup_alpha=self.mixup_alpha,
            ),
            optimizer=OptimConfig(self.learning_rate, self.momentum, self.weight_decay),
            lr_drops=tuple(self.lr_drops),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=0 if self.random_state is None else int(self.random_state),
            augment=AugPolicy(self.flip_p, self.pad),
            teacher_checkpoint="<in-memory>" if self.teacher is not None else None,
        )

    def _validate(self, X):
        return check_array(X, allow_nd=True, dtype=np.float64)

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if self.classes_.size < 2:
            raise ValueError(f"need at least two classes, got {self.classes_.size}")
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        ds = Dataset(X, self._encoder.transform(y), self.classes_.size)
        manifest = run_training(self._train_config(), ds, teacher=self.teacher)
        self.params_ = manifest.params
        self.history_ = [row["train"] for row in manifest.rows]
        return self

    def _forward(self, X):
        check_is_fitted(self, "params_")
        X = self._validate(X)
        frozen = snapshot(self.params_)
        logits, feats = [], []
        for start in range(0, X.shape[0], EVAL_CHUNK):
            out = forward(frozen, X[start : start + EVAL_CHUNK])
            logits.append(out.logits.data)
            feats.append(out.penultimate.data)
        return np.concatenate(logits), np.concatenate(feats)

    def decision_function(self, X):
        return self._forward(X)[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X)).data

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X):
        """Penultimate-layer features."""
        return self._forward(X)[1]
