"""Column encoders between raw trace values and the continuous model space.

Integers and text categories are dequantized: a uniform draw in [0, 1) is added
to the integer (or to the category's frequency rank) before standardization,
so a continuous density can be fitted to discrete data. ``floor`` undoes it.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyColumn, UnknownCategory
from .seeding import derive_seed
from .trace import DataType, TraceDataset

MIN_SCALE = 1e-12


@dataclass(frozen=True)
class ColumnEncoder:
    dtype: DataType
    center: float
    scale: float
    vocabulary: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"encoder scale must be positive, got {self.scale}")
        if (self.vocabulary is not None) != (self.dtype is DataType.TEXT):
            raise ValueError("vocabulary is required for text columns and only for them")
        if self.vocabulary is not None:
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise ValueError("vocabulary entries must be unique")
            object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
            object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.vocabulary)})

    def index(self, value: str) -> int:
        try:
            return self._index[value]
        except KeyError:
            raise UnknownCategory(f"text value {value!r} not in vocabulary") from None

    def to_json(self) -> dict:
        return {
            "dtype": self.dtype.value,
            "center": float(self.center),
            "scale": float(self.scale),
            "vocabulary": None if self.vocabulary is None else list(self.vocabulary),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ColumnEncoder":
        vocab = obj.get("vocabulary")
        return cls(
            dtype=DataType(obj["dtype"]),
            center=float(obj["center"]),
            scale=float(obj["scale"]),
            vocabulary=None if vocab is None else tuple(vocab),
        )


def _frequency_vocabulary(values: Sequence[str]) -> tuple[str, ...]:
    counts = Counter(values)
    return tuple(sorted(counts, key=lambda v: (-counts[v], v)))


def _center_scale(arr: np.ndarray) -> tuple[float, float]:
    center = float(arr.mean())
    sd = float(arr.std())
    return center, (sd if sd >= MIN_SCALE else 1.0)


def fit_encoder(values: Sequence, dtype: DataType, seed: int) -> ColumnEncoder:
    """Fit a column encoder.

    Numeric columns are standardized by mean and population standard
    deviation. Text columns are ranked by descending frequency (ties broken
    lexicographically) and standardized over the dequantized rank sequence,
    using ``default_rng(seed).random(len(values))`` as the noise.
    """
    if len(values) == 0:
        raise EmptyColumn("cannot fit an encoder on an empty column")
    if dtype is DataType.TEXT:
        vocab = _frequency_vocabulary(values)
        rank = {v: i for i, v in enumerate(vocab)}
        noise = np.random.default_rng(seed).random(len(values))
        arr = np.array([rank[v] for v in values], dtype=np.float64) + noise
        center, scale = _center_scale(arr)
        return ColumnEncoder(dtype, center, scale, vocab)
    arr = np.array([float(v) for v in values], dtype=np.float64)
    center, scale = _center_scale(arr)
    return ColumnEncoder(dtype, center, scale)


def encode(encoder: ColumnEncoder, value, noise: float = 0.0) -> float:
    if encoder.dtype is DataType.FLOAT:
        return (float(value) - encoder.center) / encoder.scale
    if encoder.dtype is DataType.INTEGER:
        return (float(value) + noise - encoder.center) / encoder.scale
    return (encoder.index(value) + noise - encoder.center) / encoder.scale


def _floor(y: float, center: float) -> int:
    # absorbs the rounding error of the standardize/unstandardize round trip
    tol = 1e-14 * (abs(y) + abs(center) + 1.0)
    return int(math.floor(y + tol))


def decode(encoder: ColumnEncoder, x: float):
    y = float(x) * encoder.scale + encoder.center
    if encoder.dtype is DataType.FLOAT:
        return y
    if not math.isfinite(y):
        y = math.copysign(1e300, y) if not math.isnan(y) else 0.0
    if encoder.dtype is DataType.INTEGER:
        return _floor(y, encoder.center)
    k = min(max(_floor(y, encoder.center), 0), len(encoder.vocabulary) - 1)
    return encoder.vocabulary[k]


def encode_column(encoder: ColumnEncoder, values: Sequence, noise: np.ndarray) -> np.ndarray:
    if encoder.dtype is DataType.TEXT:
        base = np.array([encoder.index(v) for v in values], dtype=np.float64) + noise
    elif encoder.dtype is DataType.INTEGER:
        base = np.array([float(v) for v in values], dtype=np.float64) + noise
    else:
        base = np.array(values, dtype=np.float64)
    return (base - encoder.center) / encoder.scale


def transfer(source: ColumnEncoder, target: ColumnEncoder, x: np.ndarray) -> np.ndarray:
    """Re-express encoded values of ``source`` in the space of ``target``.

    Numeric columns move through the dequantized raw value, so the position
    inside an integer cell survives. Text columns move through the category
    (plus the fractional offset); a category unknown to ``target`` lands one
    cell past the end of its vocabulary, where the target model has no mass.
    """
    x = np.asarray(x, dtype=np.float64)
    y = x * source.scale + source.center
    if source.dtype is not DataType.TEXT or target.dtype is not DataType.TEXT:
        return (y - target.center) / target.scale
    k = np.clip(np.floor(y), 0, len(source.vocabulary) - 1).astype(int)
    frac = np.clip(y - np.floor(y), 0.0, 1.0 - 1e-12)
    frac = np.where((y < 0) | (y >= len(source.vocabulary)), 0.5, frac)
    lookup = np.array(
        [target._index.get(v, len(target.vocabulary)) for v in source.vocabulary],
        dtype=np.float64,
    )
    return (lookup[k] + frac - target.center) / target.scale


def encode_matrix(
    dataset: TraceDataset,
    seed: int,
    encoders: Sequence[ColumnEncoder] | None = None,
) -> tuple[np.ndarray, list[ColumnEncoder]]:
    """Encode every column of ``dataset``; fit encoders unless given.

    Column ``j`` draws its dequantization noise from
    ``default_rng(derive_seed(seed, "column", j))``. A text encoder fitted here
    sees the same noise, so the encoded text column is exactly standardized.
    """
    n_cols = len(dataset.schema.elements)
    if encoders is not None and len(encoders) != n_cols:
        raise ValueError(f"{len(encoders)} encoders for {n_cols} columns")
    fitted = []
    matrix = np.empty((len(dataset.rows), n_cols), dtype=np.float64)
    for j, el in enumerate(dataset.schema.elements):
        col_seed = derive_seed(seed, "column", j)
        values = dataset.column(j)
        enc = encoders[j] if encoders is not None else fit_encoder(values, el.dtype, col_seed)
        noise = np.random.default_rng(col_seed).random(len(values))
        matrix[:, j] = encode_column(enc, values, noise)
        fitted.append(enc)
    return matrix, fitted
