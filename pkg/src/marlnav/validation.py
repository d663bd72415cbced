"""Input-validation helpers and a tiny estimator-API base class.

The learnable components (goal decoder, transition model, policy learner)
follow sklearn conventions — ``fit``/``predict``, ``get_params``/
``set_params``, fitted attributes with trailing underscores — without
depending on sklearn itself.
"""

from __future__ import annotations

import inspect

import numpy as np


class NotFittedError(ValueError):
    pass


def check_array(x, name: str = "X", ndim: int = 2, dtype=np.float64,
                n_features: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-d, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if n_features is not None and arr.shape[-1] != n_features:
        raise ValueError(f"{name} has {arr.shape[-1]} features, expected {n_features}")
    return arr


def check_fitted(estimator, attr: str) -> None:
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first")


class BaseEstimator:
    """get_params/set_params over the constructor signature, sklearn-style."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"
