"""Frame-level sinusoidal position encoding keyed to absolute timestep.

Every token of a frame at time t receives the same offset vector, marking
frame boundaries after compression has discarded the uniform frame stride.
Disabled by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidConfigError
from .tokens import CompressedTokenSequence

__all__ = ["FramePositionConfig", "encoding_vector", "apply_position_encoding"]


@dataclass
class FramePositionConfig:
    enabled: bool = False
    dim: Optional[int] = None
    base: float = 10000.0

    def validate(self):
        if self.base <= 1.0:
            raise InvalidConfigError(f"position-encoding base must exceed 1, got {self.base}")
        if self.enabled:
            if self.dim is None or self.dim < 2:
                raise InvalidConfigError(
                    f"position encoding requires dim >= 2 when enabled, got {self.dim}"
                )


def encoding_vector(t: float, dim: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal encoding of timestep t: entry 2i = sin(t / base^(2i/dim)),
    entry 2i+1 = cos of the same angle. An odd final dim keeps its sin term."""
    if dim < 2:
        raise InvalidConfigError(f"encoding dim must be >= 2, got {dim}")
    even = np.arange(0, dim, 2, dtype=np.float64)
    angles = t / np.power(float(base), even / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)[: dim // 2]
    return out.astype(np.float32)


def apply_position_encoding(
    seq: CompressedTokenSequence, cfg: FramePositionConfig
) -> CompressedTokenSequence:
    """Add the frame's timestep encoding to every one of its tokens.

    With the encoding disabled the input sequence is returned unchanged.
    """
    cfg.validate()
    if not cfg.enabled:
        return seq
    if cfg.dim != seq.dim:
        raise InvalidConfigError(
            f"position-encoding dim {cfg.dim} does not match token dim {seq.dim}"
        )
    vectors = seq.vectors.astype(np.float64)
    # Tokens sharing a timestep share one offset; encode each distinct value once.
    unique_ts, inverse = np.unique(seq.timesteps, return_inverse=True)
    offsets = np.stack([encoding_vector(float(t), cfg.dim, cfg.base) for t in unique_ts])
    vectors += offsets.astype(np.float64)[inverse]
    return CompressedTokenSequence(
        frame_indices=seq.frame_indices.copy(),
        timesteps=seq.timesteps.copy(),
        grid_rows=seq.grid_rows.copy(),
        grid_cols=seq.grid_cols.copy(),
        levels=seq.levels.copy(),
        vectors=vectors.astype(np.float32),
    )
