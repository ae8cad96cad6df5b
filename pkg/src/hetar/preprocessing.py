"""Column standardization with statistics kept for reuse at prediction time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .estimator import Dataset


def _stats(A: NDArray, scale: bool) -> tuple[NDArray, NDArray]:
    if not scale or A.shape[1] == 0:
        return np.zeros(A.shape[1]), np.ones(A.shape[1])
    mean = A.mean(axis=0)
    sd = A.std(axis=0, ddof=1)
    # leave constant columns unscaled; Dataset rejects them for Z anyway
    sd = np.where(sd > 0, sd, 1.0)
    return mean, sd


@dataclass
class Standardization:
    """Per-column ``(v - mean) / sd`` for X and Z plus a response offset.

    The sample standard deviation uses the n - 1 denominator.
    """

    x_mean: NDArray[np.float64]
    x_scale: NDArray[np.float64]
    z_mean: NDArray[np.float64]
    z_scale: NDArray[np.float64]
    y_offset: float = 0.0

    @classmethod
    def identity(cls, p: int, q: int) -> "Standardization":
        return cls(np.zeros(p), np.ones(p), np.zeros(q), np.ones(q), 0.0)

    @classmethod
    def fit(
        cls,
        X: ArrayLike,
        Z: ArrayLike,
        y: ArrayLike | None = None,
        standardize: bool = True,
        center_response: bool = True,
    ) -> "Standardization":
        X = np.asarray(X, dtype=np.float64)
        Z = np.asarray(Z, dtype=np.float64)
        xm, xs = _stats(X, standardize)
        zm, zs = _stats(Z, standardize)
        off = float(np.mean(y)) if (center_response and y is not None) else 0.0
        return cls(xm, xs, zm, zs, off)

    def transform_x(self, X: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def transform_z(self, Z: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(Z, dtype=np.float64) - self.z_mean) / self.z_scale

    def transform_y(self, y: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(y, dtype=np.float64) - self.y_offset

    def inverse_x(self, X: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(X, dtype=np.float64) * self.x_scale + self.x_mean

    def inverse_z(self, Z: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(Z, dtype=np.float64) * self.z_scale + self.z_mean

    def inverse_y(self, y: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(y, dtype=np.float64) + self.y_offset

    def apply(self, d: Dataset) -> Dataset:
        return Dataset(
            self.transform_y(d.y),
            self.transform_x(d.X),
            self.transform_z(d.Z),
            d.x_names,
            d.z_names,
        )

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "z_mean": self.z_mean.tolist(),
            "z_scale": self.z_scale.tolist(),
            "y_offset": float(self.y_offset),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Standardization":
        return cls(
            np.asarray(data["x_mean"], dtype=np.float64),
            np.asarray(data["x_scale"], dtype=np.float64),
            np.asarray(data["z_mean"], dtype=np.float64),
            np.asarray(data["z_scale"], dtype=np.float64),
            float(data["y_offset"]),
        )


def standardize_dataset(
    d: Dataset, standardize: bool = True, center_response: bool = True
) -> tuple[Dataset, Standardization]:
    st = Standardization.fit(d.X, d.Z, d.y, standardize, center_response)
    return st.apply(d), st
