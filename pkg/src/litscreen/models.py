"""Binary classifiers trained by mini-batch SGD on sparse feature vectors.

Both models share one functional core: a pure loss function of a parameter
dict and an analytic gradient of that same function, so the training loop,
the full-batch gradient used by tests, and finite-difference checking all
differentiate the identical computation.  The loss is mean binary
cross-entropy computed from logits (numerically stable for any logit) plus
``0.5 * l2 * ||weights||^2``; bias terms carry no penalty.

Training is deterministic: a fixed seed fixes the parameter initialization
and the per-epoch shuffle, and repeated runs produce bitwise-identical
parameters.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .features import FeatureVector, stack_feature_vectors

__all__ = [
    "TrainingError",
    "LogisticClassifier",
    "MlpClassifier",
    "grad_check",
    "save_model",
    "load_model",
]

MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite model state."""


def as_feature_matrix(X, dtype=np.float64) -> sp.csr_matrix:
    """Coerce input features to a CSR matrix, one row per example."""
    if sp.issparse(X):
        return X.tocsr().astype(dtype, copy=False)
    if isinstance(X, FeatureVector):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], FeatureVector):
        return stack_feature_vectors(X, X[0].dim)
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected 2-d features, got shape {arr.shape}")
    return sp.csr_matrix(arr)


def check_labels(y, n: int) -> np.ndarray:
    yarr = np.asarray(y)
    if yarr.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {yarr.shape}")
    if yarr.dtype != bool and not np.isin(yarr, (0, 1)).all():
        raise ValueError("labels must be binary (0/1 or bool)")
    return yarr.astype(np.float64)


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, computed without forming probabilities."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _activation(name: str):
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(np.float64))
    if name == "tanh":
        return (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2)
    raise ValueError(f"unknown activation {name!r} (expected 'relu' or 'tanh')")


class _SgdBase(BaseEstimator, ClassifierMixin):
    """Shared SGD loop, prediction plumbing, and gradient-check hooks."""

    def _check_common_params(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.epochs) < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")

    def _require_fitted(self) -> None:
        if not hasattr(self, "n_features_in_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet"
            )

    def _prepare(self, X, y):
        X = as_feature_matrix(X)
        n = X.shape[0]
        if n == 0:
            raise ValueError("cannot fit on an empty sample")
        yarr = check_labels(y, n)
        return X, yarr

    def _check_dim(self, X: sp.csr_matrix) -> None:
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"feature dim {X.shape[1]} != fitted dim {self.n_features_in_}"
            )

    def fit(self, X, y):
        self._check_params()
        X, yarr = self._prepare(X, y)
        rng = np.random.default_rng(self.seed)
        state = self._init_state(X.shape[1], rng)
        n = X.shape[0]
        batch = int(self.batch_size)
        # divergence is detected by explicit finiteness checks, so transient
        # overflow in a doomed update should not warn
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(int(self.epochs)):
                perm = rng.permutation(n)
                Xp = X[perm]
                yp = yarr[perm]
                for b, start in enumerate(range(0, n, batch)):
                    Xb = Xp[start : start + batch]
                    yb = yp[start : start + batch]
                    ok = self._batch_update(state, Xb, yb)
                    if not ok:
                        raise TrainingError(
                            f"non-finite loss at epoch {epoch}, batch {b}; "
                            f"lower the learning rate"
                        )
                if not all(np.isfinite(a).all() for a in state.values()):
                    raise TrainingError(f"non-finite parameters after epoch {epoch}")
        self._store_state(state, X.shape[1])
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Probability of the positive class, one value per example."""
        self._require_fitted()
        X = as_feature_matrix(X)
        self._check_dim(X)
        return expit(self._logits(self._param_state(), X))

    def decision_function(self, X) -> np.ndarray:
        self._require_fitted()
        X = as_feature_matrix(X)
        self._check_dim(X)
        return self._logits(self._param_state(), X)

    def predict(self, X) -> np.ndarray:
        """1 where the positive-class probability is >= ``threshold``."""
        return (self.predict_proba(X) >= self.threshold).astype(np.int64)

    def loss(self, X, y) -> float:
        """Full-batch training objective at the fitted parameters."""
        self._require_fitted()
        X, yarr = self._prepare(X, y)
        self._check_dim(X)
        return self._loss_fn(self._param_state(), X, yarr)

    # Subclass contract: parameter dicts map names to float arrays; the pair
    # (_loss_fn, _grad_fn) differentiates the same expression exactly.


class LogisticClassifier(_SgdBase):
    """Logistic regression trained by mini-batch SGD.

    Parameters start at zero, so an unfitted direction scores exactly 0.5.
    """

    def __init__(
        self,
        learning_rate: float = 0.5,
        epochs: int = 10,
        batch_size: int = 64,
        l2: float = 0.0,
        seed: int = 0,
        threshold: float = 0.5,
    ) -> None:
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed
        self.threshold = threshold

    def _check_params(self) -> None:
        self._check_common_params()

    def _init_state(self, dim: int, rng: np.random.Generator) -> dict:
        return {"w": np.zeros(dim), "b": np.zeros(1)}

    def _store_state(self, state: dict, dim: int) -> None:
        self.weights_ = state["w"]
        self.bias_ = float(state["b"][0])
        self.n_features_in_ = dim

    def _param_state(self) -> dict:
        self._require_fitted()
        return {"w": self.weights_.copy(), "b": np.array([self.bias_])}

    def _logits(self, params: dict, X: sp.csr_matrix) -> np.ndarray:
        return X @ params["w"] + params["b"][0]

    def _loss_fn(self, params: dict, X, y) -> float:
        z = self._logits(params, X)
        penalty = 0.5 * self.l2 * float(params["w"] @ params["w"])
        return bce_from_logits(z, y) + penalty

    def _grad_fn(self, params: dict, X, y) -> dict:
        z = self._logits(params, X)
        g = (expit(z) - y) / y.size
        gw = X.T @ g
        if self.l2:
            gw = gw + self.l2 * params["w"]
        return {"w": gw, "b": np.array([g.sum()])}

    def _batch_update(self, state: dict, Xb, yb) -> bool:
        z = Xb @ state["w"] + state["b"][0]
        if not np.all(np.isfinite(z)):
            return False
        g = (expit(z) - yb) / yb.size
        lr = self.learning_rate
        if self.l2:
            state["w"] *= 1.0 - lr * self.l2
        state["w"] -= lr * (Xb.T @ g)
        state["b"][0] -= lr * g.sum()
        return True


class MlpClassifier(_SgdBase):
    """One-hidden-layer network trained by mini-batch SGD.

    ``embed`` exposes the hidden activations; applying the stored output
    layer to them reproduces ``predict_proba`` exactly, which is what lets
    an ensemble combiner consume these models' internal representation.
    The hidden-layer gradient is accumulated only on rows touched by the
    batch's nonzero columns, keeping updates sparse-friendly.
    """

    _INIT_SCALE = 0.05

    def __init__(
        self,
        hidden_dim: int = 32,
        activation: str = "relu",
        learning_rate: float = 0.1,
        epochs: int = 10,
        batch_size: int = 64,
        l2: float = 0.0,
        seed: int = 0,
        threshold: float = 0.5,
    ) -> None:
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed
        self.threshold = threshold

    def _check_params(self) -> None:
        self._check_common_params()
        if int(self.hidden_dim) < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        _activation(self.activation)

    def _init_state(self, dim: int, rng: np.random.Generator) -> dict:
        h = int(self.hidden_dim)
        return {
            "W1": rng.normal(0.0, self._INIT_SCALE, size=(dim, h)),
            "b1": np.zeros(h),
            "w2": rng.normal(0.0, self._INIT_SCALE, size=h),
            "b2": np.zeros(1),
        }

    def _store_state(self, state: dict, dim: int) -> None:
        self.hidden_weights_ = state["W1"]
        self.hidden_bias_ = state["b1"]
        self.output_weights_ = state["w2"]
        self.output_bias_ = float(state["b2"][0])
        self.n_features_in_ = dim

    def _param_state(self) -> dict:
        self._require_fitted()
        return {
            "W1": self.hidden_weights_.copy(),
            "b1": self.hidden_bias_.copy(),
            "w2": self.output_weights_.copy(),
            "b2": np.array([self.output_bias_]),
        }

    def _hidden(self, params: dict, X: sp.csr_matrix) -> np.ndarray:
        act, _ = _activation(self.activation)
        return act(X @ params["W1"] + params["b1"])

    def _logits(self, params: dict, X: sp.csr_matrix) -> np.ndarray:
        return self._hidden(params, X) @ params["w2"] + params["b2"][0]

    def _loss_fn(self, params: dict, X, y) -> float:
        z = self._logits(params, X)
        penalty = 0.5 * self.l2 * (
            float((params["W1"] ** 2).sum()) + float(params["w2"] @ params["w2"])
        )
        return bce_from_logits(z, y) + penalty

    def _backprop(self, params: dict, Xb: sp.csr_matrix, yb: np.ndarray):
        """Exact batch gradients; the hidden-weight part is returned as
        (row ids, per-row gradient) to avoid materializing a dim x hidden
        matrix on every mini-batch."""
        act, act_grad = _activation(self.activation)
        Z1 = Xb @ params["W1"] + params["b1"]
        A1 = act(Z1)
        z2 = A1 @ params["w2"] + params["b2"][0]
        dz2 = (expit(z2) - yb) / yb.size
        gw2 = A1.T @ dz2
        gb2 = dz2.sum()
        dZ1 = np.outer(dz2, params["w2"]) * act_grad(Z1)
        gb1 = dZ1.sum(axis=0)
        coo = Xb.tocoo()
        rows, inv = np.unique(coo.col, return_inverse=True)
        G = np.zeros((rows.size, params["W1"].shape[1]))
        np.add.at(G, inv, coo.data[:, None] * dZ1[coo.row])
        return z2, rows, G, gb1, gw2, gb2

    def _grad_fn(self, params: dict, X, y) -> dict:
        _, rows, G, gb1, gw2, gb2 = self._backprop(params, X, y)
        gW1 = np.zeros_like(params["W1"])
        gW1[rows] = G
        if self.l2:
            gW1 += self.l2 * params["W1"]
            gw2 = gw2 + self.l2 * params["w2"]
        return {"W1": gW1, "b1": gb1, "w2": gw2, "b2": np.array([gb2])}

    def _batch_update(self, state: dict, Xb, yb) -> bool:
        z2, rows, G, gb1, gw2, gb2 = self._backprop(state, Xb, yb)
        if not np.all(np.isfinite(z2)):
            return False
        lr = self.learning_rate
        if self.l2:
            state["W1"] *= 1.0 - lr * self.l2
            state["w2"] *= 1.0 - lr * self.l2
        state["W1"][rows] -= lr * G
        state["b1"] -= lr * gb1
        state["w2"] -= lr * gw2
        state["b2"][0] -= lr * gb2
        return True

    def embed(self, X) -> np.ndarray:
        """Hidden-layer activations, shape (n_examples, hidden_dim)."""
        self._require_fitted()
        X = as_feature_matrix(X)
        self._check_dim(X)
        return self._hidden(self._param_state(), X)


def grad_check(
    model,
    X,
    y,
    eps: float = 1e-5,
    max_entries_per_array: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every parameter entry (or a seeded subsample of
    ``max_entries_per_array`` per array when larger) and compares
    ``(loss(p+eps) - loss(p-eps)) / 2 eps`` with the analytic gradient,
    relative to ``max(|analytic|, |numeric|, 1e-8)``.
    """
    X = as_feature_matrix(X)
    yarr = check_labels(y, X.shape[0])
    params = model._param_state()
    analytic = model._grad_fn(params, X, yarr)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        grad = analytic[name].reshape(-1)
        if flat.size <= max_entries_per_array:
            entries = np.arange(flat.size)
        else:
            entries = rng.choice(flat.size, size=max_entries_per_array, replace=False)
        for j in entries:
            original = flat[j]
            flat[j] = original + eps
            up = model._loss_fn(params, X, yarr)
            flat[j] = original - eps
            down = model._loss_fn(params, X, yarr)
            flat[j] = original
            numeric = (up - down) / (2.0 * eps)
            scale = max(abs(grad[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[j] - numeric) / scale)
    return worst


_MODEL_KINDS = {"logistic": LogisticClassifier, "mlp": MlpClassifier}


def _model_kind(model) -> str:
    for kind, cls in _MODEL_KINDS.items():
        if type(model) is cls:
            return kind
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def save_model(model, path) -> None:
    """Write a fitted model to ``path`` (.npz archive with a JSON manifest)."""
    model._require_fitted()
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": _model_kind(model),
        "params": model.get_params(),
        "n_features_in": int(model.n_features_in_),
    }
    manifest = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as handle:
        np.savez(handle, manifest=manifest, **model._param_state())


def load_model(path):
    """Reconstruct a model saved by :func:`save_model`."""
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["manifest"]).decode("utf-8"))
        if meta.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(
                f"unsupported model format {meta.get('format_version')!r}"
            )
        cls = _MODEL_KINDS.get(meta.get("kind"))
        if cls is None:
            raise ValueError(f"unknown model kind {meta.get('kind')!r}")
        model = cls(**meta["params"])
        state = {k: archive[k].copy() for k in archive.files if k != "manifest"}
    model._check_params()
    model._store_state(state, meta["n_features_in"])
    model.classes_ = np.array([0, 1])
    return model
