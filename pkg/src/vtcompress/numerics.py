"""Dense-array kernels shared by every compression stage.

All kernels accept float32 data and accumulate in float64; results are cast
back to float32 so repeated runs produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AdapterShapeError, InvalidPoolingError, ZeroVectorError

__all__ = [
    "TokenGrid",
    "AdapterSpec",
    "cosine_similarity",
    "adaptive_avg_pool",
    "pool_batch",
    "frame_summary",
    "apply_adapter",
]


@dataclass
class TokenGrid:
    """One frame of visual tokens laid out row-major as (height, width, dim)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(
                f"token grid must be 3-d (height, width, dim), got shape {self.data.shape}"
            )
        if min(self.data.shape) < 1:
            raise ValueError(f"token grid dimensions must be positive, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("token grid contains non-finite entries")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def token_count(self) -> int:
        return self.height * self.width


@dataclass
class AdapterSpec:
    """Affine map applied to every token before cross-modal scoring.

    ``identity`` passes tokens through unchanged and requires the token dim
    to equal the query dim at use time. ``linear`` maps each token x to
    weight @ x + bias, where weight is (query_dim, token_dim).
    """

    kind: str = "identity"
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("identity", "linear"):
            raise AdapterShapeError(f"unknown adapter kind {self.kind!r}")
        if self.kind == "identity":
            if self.weight is not None or self.bias is not None:
                raise AdapterShapeError("identity adapter takes no weight or bias")
            return
        if self.weight is None:
            raise AdapterShapeError("linear adapter requires a weight matrix")
        self.weight = np.asarray(self.weight, dtype=np.float32)
        if self.weight.ndim != 2:
            raise AdapterShapeError(f"adapter weight must be 2-d, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.weight.shape[0],):
                raise AdapterShapeError(
                    f"adapter bias shape {self.bias.shape} does not match weight "
                    f"output dim {self.weight.shape[0]}"
                )

    def output_dim(self, input_dim: int) -> int:
        """Token dimension this adapter produces for a given input dimension."""
        if self.kind == "identity":
            return input_dim
        if self.weight.shape[1] != input_dim:
            raise AdapterShapeError(
                f"adapter expects tokens of dim {self.weight.shape[1]}, got {input_dim}"
            )
        return self.weight.shape[0]

    @classmethod
    def identity(cls) -> "AdapterSpec":
        return cls(kind="identity")

    @classmethod
    def linear(cls, weight, bias=None) -> "AdapterSpec":
        return cls(kind="linear", weight=weight, bias=bias)


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two feature vectors, in [-1, 1].

    Raises ZeroVectorError for zero-norm inputs; callers must never treat a
    degenerate vector as "similarity 0".
    """
    a = np.asarray(u, dtype=np.float64).ravel()
    b = np.asarray(v, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a.dot(b) / (na * nb), -1.0, 1.0))


def _pool_edges(size: int, out: int) -> tuple[np.ndarray, np.ndarray]:
    # Bin p covers input cells [floor(p*size/out), ceil((p+1)*size/out) - 1].
    p = np.arange(out, dtype=np.int64)
    start = (p * size) // out
    end = -((-(p + 1) * size) // out)
    return start, end


def pool_batch(stack: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Adaptive average pooling over a (frames, h, w, dim) float32 stack.

    Shares the bin rule and arithmetic with ``adaptive_avg_pool``, so pooling
    a batch is bitwise-identical to pooling each frame on its own.
    """
    n, h, w, dim = stack.shape
    if out_h < 1 or out_w < 1 or out_h > h or out_w > w:
        raise InvalidPoolingError(f"cannot pool a {h}x{w} grid to {out_h}x{out_w}")
    if out_h == h and out_w == w:
        return stack.copy()

    # Integral image in float64: float32 inputs sum exactly, so every bin
    # mean stays inside the [min, max] of the cells it covers.
    data = stack.astype(np.float64)
    integral = np.zeros((n, h + 1, w + 1, dim), dtype=np.float64)
    integral[:, 1:, 1:] = data.cumsum(axis=1).cumsum(axis=2)

    r0, r1 = _pool_edges(h, out_h)
    c0, c1 = _pool_edges(w, out_w)
    sums = (
        integral[:, r1[:, None], c1[None, :]]
        - integral[:, r0[:, None], c1[None, :]]
        - integral[:, r1[:, None], c0[None, :]]
        + integral[:, r0[:, None], c0[None, :]]
    )
    counts = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return (sums / counts[None, :, :, None]).astype(np.float32)


def adaptive_avg_pool(grid: TokenGrid, out_h: int, out_w: int) -> TokenGrid:
    """Average-pool a token grid down to (out_h, out_w), preserving dim.

    Each output bin is the mean of the input cells it covers under the
    floor/ceil bin rule; bins may overlap when sizes do not divide evenly.
    """
    return TokenGrid(pool_batch(grid.data[None], out_h, out_w)[0])


def frame_summary(grid: TokenGrid) -> np.ndarray:
    """Mean over all spatial tokens, L2-normalized to unit length."""
    mean = grid.data.mean(axis=(0, 1), dtype=np.float64)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ZeroVectorError("frame summary of an all-zero grid is undefined")
    return (mean / norm).astype(np.float32)


def apply_adapter(adapter: AdapterSpec, grid: TokenGrid) -> TokenGrid:
    """Apply the adapter to every token of a grid; shape (h, w) is preserved."""
    if adapter.kind == "identity":
        return grid
    out_dim = adapter.output_dim(grid.dim)
    mapped = grid.data.astype(np.float64) @ adapter.weight.T.astype(np.float64)
    if adapter.bias is not None:
        mapped += adapter.bias.astype(np.float64)
    assert mapped.shape == (grid.height, grid.width, out_dim)
    return TokenGrid(mapped.astype(np.float32))
