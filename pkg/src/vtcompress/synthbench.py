"""Synthetic feature videos and desk-scale reduction / needle-retention studies.

Videos are built from scenes with orthonormal base directions. Static scenes
add per-token Gaussian noise to a fixed textured base grid; dynamic scenes
overlay a normalized random walk on a contiguous sub-rectangle, modeling a
moving object over a static background. Everything is deterministic for a
fixed seed.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfigError, InvalidNeedleError
from .numerics import TokenGrid
from .pipeline import CompressionConfig, compress
from .query_select import QueryEmbedding
from .temporal import FrameFeatureSequence
from .tokens import LEVEL_CODE, CompressionStats

__all__ = [
    "SynthSpec",
    "NeedleSpec",
    "gen_video",
    "make_needle_grid",
    "make_aligned_query",
    "insert_needle",
    "run_needle_grid",
    "reduction_report",
    "anchor_ablation",
    "make_mixed_corpus",
]

# Generator texture and motion constants, tuned on the default mixed corpus
# so temporal keep rate and spatial reduction land near the reference means.
TEXTURE_SCALE = 0.5
ACTIVE_AREA_FRACTION = 0.66
ADJACENT_COS_RANGE = (0.35, 0.7)
NEEDLE_SCENE_LEN = 64
CORPUS_SCENE_LEN = 128


@dataclass
class SynthSpec:
    """Recipe for one synthetic feature video."""

    n_frames: int
    n_scenes: int
    intra_scene_noise: float = 0.02
    drift_scenes_fraction: float = 0.3
    dim: int = 32
    grid: tuple[int, int] = (12, 12)
    seed: int = 0

    def validate(self):
        if self.n_frames < 1:
            raise InvalidConfigError(f"n_frames must be positive, got {self.n_frames}")
        if not (1 <= self.n_scenes <= self.n_frames):
            raise InvalidConfigError(
                f"n_scenes must be in [1, n_frames], got {self.n_scenes} for {self.n_frames} frames"
            )
        if self.intra_scene_noise < 0:
            raise InvalidConfigError(f"noise must be >= 0, got {self.intra_scene_noise}")
        if not (0.0 <= self.drift_scenes_fraction <= 1.0):
            raise InvalidConfigError(
                f"drift fraction must be in [0, 1], got {self.drift_scenes_fraction}"
            )
        if self.dim < 1 or min(self.grid) < 1:
            raise InvalidConfigError(f"dim and grid must be positive, got {self.dim}, {self.grid}")


@dataclass
class NeedleSpec:
    """Grid of needle-retention experiments over frame counts and depths."""

    haystack: SynthSpec
    depths: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    frame_counts: list[int] = field(default_factory=lambda: [200, 400, 800, 1400, 2000, 3600])
    query_alignment: float = 1.0
    query_tokens: int = 24

    def validate(self):
        self.haystack.validate()
        if sorted(self.depths) != list(self.depths):
            raise InvalidConfigError("depths must be sorted ascending")
        if any(not (0.0 <= d <= 1.0) for d in self.depths):
            raise InvalidConfigError(f"depths must lie in [0, 1], got {self.depths}")
        if any(c < 1 for c in self.frame_counts):
            raise InvalidConfigError(f"frame counts must be positive, got {self.frame_counts}")
        if not (0.0 <= self.query_alignment <= 1.0):
            raise InvalidConfigError(f"alignment must be in [0, 1], got {self.query_alignment}")


def _scene_bases(rng: np.random.Generator, n_scenes: int, dim: int) -> np.ndarray:
    """Unit base direction per scene; orthonormal whenever n_scenes <= dim."""
    raw = rng.standard_normal((dim, max(n_scenes, 1)))
    if n_scenes <= dim:
        q, r = np.linalg.qr(raw[:, :n_scenes])
        q *= np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
        return q.T
    bases = raw.T[:n_scenes]
    return bases / np.linalg.norm(bases, axis=1, keepdims=True)


def _scene_lengths(rng: np.random.Generator, n_frames: int, n_scenes: int) -> np.ndarray:
    weights = rng.dirichlet(np.full(n_scenes, 6.0))
    lengths = np.maximum(1, np.floor(weights * n_frames).astype(np.int64))
    # Adjust the largest scenes until lengths sum to n_frames exactly.
    while lengths.sum() > n_frames:
        i = int(np.argmax(lengths))
        lengths[i] -= 1
    while lengths.sum() < n_frames:
        i = int(np.argmin(lengths))
        lengths[i] += 1
    return lengths


def _snapped_span(rng: np.random.Generator, size: int, snap: int) -> int:
    # Stochastic rounding to snap multiples keeps the expected span on target
    # even when the snap quantum is coarse relative to the grid.
    target = size * np.sqrt(ACTIVE_AREA_FRACTION) / snap
    low = int(np.floor(target))
    units = low + (1 if rng.random() < target - low else 0)
    return min(size, max(snap, units * snap))


def _active_rect(rng: np.random.Generator, h: int, w: int) -> tuple[int, int, int, int]:
    # Object edges snap to quarter-grid boundaries; on the default 12-wide
    # grid those coincide with pooling-bin boundaries, keeping pooled tokens
    # purely "object" or purely "background".
    snap_h = max(1, round(h / 4))
    snap_w = max(1, round(w / 4))
    rh = _snapped_span(rng, h, snap_h)
    rw = _snapped_span(rng, w, snap_w)
    top = int(rng.integers(0, (h - rh) // snap_h + 1)) * snap_h
    left = int(rng.integers(0, (w - rw) // snap_w + 1)) * snap_w
    return top, left, rh, rw


def _normalized_walk(rng: np.random.Generator, steps: int, dim: int, step_scale: float) -> np.ndarray:
    """Random walk re-normalized to the unit sphere after every step."""
    out = np.empty((steps, dim))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    out[0] = v
    for i in range(1, steps):
        v = v + step_scale * rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        out[i] = v
    return out


def gen_video(spec: SynthSpec) -> FrameFeatureSequence:
    """Generate a deterministic scene-structured feature video."""
    spec.validate()
    h, w = spec.grid
    root = np.random.SeedSequence(spec.seed)
    seeds = root.spawn(spec.n_scenes + 1)
    struct_rng = np.random.default_rng(seeds[0])

    bases = _scene_bases(struct_rng, spec.n_scenes, spec.dim)
    lengths = _scene_lengths(struct_rng, spec.n_frames, spec.n_scenes)
    is_drift = struct_rng.random(spec.n_scenes) < spec.drift_scenes_fraction
    alphas = struct_rng.uniform(*ADJACENT_COS_RANGE, size=spec.n_scenes)

    frames = np.empty((spec.n_frames, h, w, spec.dim), dtype=np.float32)
    cursor = 0
    for s in range(spec.n_scenes):
        rng = np.random.default_rng(seeds[s + 1])
        length = int(lengths[s])
        texture = rng.standard_normal((h, w, spec.dim)) / np.sqrt(spec.dim)
        base = bases[s][None, None, :] + TEXTURE_SCALE * texture
        base /= np.linalg.norm(base, axis=2, keepdims=True)
        scene = np.broadcast_to(base, (length, h, w, spec.dim)).copy()
        if is_drift[s]:
            top, left, rh, rw = _active_rect(rng, h, w)
            # Per-step noise scale that yields the drawn adjacent-frame cosine.
            step = np.sqrt((1.0 / alphas[s] ** 2 - 1.0) / spec.dim)
            walk = _normalized_walk(rng, length, spec.dim, step)
            scene[:, top : top + rh, left : left + rw, :] = walk[:, None, None, :]
        if spec.intra_scene_noise > 0:
            scene += spec.intra_scene_noise * rng.standard_normal(scene.shape)
        frames[cursor : cursor + length] = scene.astype(np.float32)
        cursor += length
    return FrameFeatureSequence(frames, np.arange(spec.n_frames, dtype=np.float64))


def _haystack_bases(spec: SynthSpec) -> np.ndarray:
    root = np.random.SeedSequence(spec.seed)
    seeds = root.spawn(spec.n_scenes + 1)
    return _scene_bases(np.random.default_rng(seeds[0]), spec.n_scenes, spec.dim)


def make_needle_grid(spec: SynthSpec, grid_shape: tuple[int, int] | None = None) -> TokenGrid:
    """A needle frame whose single direction is orthogonalized against every
    scene base of the haystack spec (as far as the dimension allows)."""
    h, w = grid_shape if grid_shape is not None else spec.grid
    bases = _haystack_bases(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x6E65]))
    v = rng.standard_normal(spec.dim)
    for b in bases[: spec.dim - 1]:
        v -= v.dot(b) * b
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        raise InvalidNeedleError("haystack bases span the space; no orthogonal needle exists")
    v /= norm
    grid = np.broadcast_to(v.astype(np.float32), (h, w, spec.dim)).copy()
    return TokenGrid(grid)


def make_aligned_query(
    needle: TokenGrid, alignment: float, n_tokens: int, seed: int
) -> QueryEmbedding:
    """Query rows mixing the needle direction with random noise directions."""
    direction = needle.data.reshape(-1, needle.dim).mean(axis=0).astype(np.float64)
    direction /= np.linalg.norm(direction)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x71]))
    noise = rng.standard_normal((n_tokens, needle.dim))
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    rows = alignment * direction[None, :] + (1.0 - alignment) * noise
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return QueryEmbedding(rows.astype(np.float32))


def insert_needle(
    seq: FrameFeatureSequence, needle: TokenGrid, depth: float
) -> tuple[FrameFeatureSequence, int]:
    """Insert the needle at round(depth * n_frames); timesteps are renumbered
    to consecutive seconds so they stay strictly increasing."""
    if not (0.0 <= depth <= 1.0):
        raise InvalidConfigError(f"depth must be in [0, 1], got {depth}")
    if needle.data.shape != seq.frames.shape[1:]:
        raise InvalidNeedleError(
            f"needle shape {needle.data.shape} does not match frames {seq.frames.shape[1:]}"
        )
    index = int(round(depth * seq.n_frames))
    frames = np.insert(seq.frames, index, needle.data, axis=0)
    timesteps = np.arange(seq.n_frames + 1, dtype=np.float64)
    return FrameFeatureSequence(frames, timesteps), index


def _cell_seed(base: int, count: int, depth: float) -> int:
    mix = np.random.SeedSequence([base, count, int(round(depth * 1000))])
    return int(mix.generate_state(1, np.uint64)[0] % (2**63))


def run_needle_grid(spec: NeedleSpec, cfg: CompressionConfig) -> list[dict]:
    """Compress one haystack per (frame count, depth) cell and report whether
    the needle frame survived, at what resolution, and how many of its tokens."""
    spec.validate()
    results = []
    for count in spec.frame_counts:
        for depth in spec.depths:
            cell = replace(
                spec.haystack,
                n_frames=count,
                n_scenes=max(1, count // NEEDLE_SCENE_LEN),
                seed=_cell_seed(spec.haystack.seed, count, depth),
            )
            haystack = gen_video(cell)
            needle = make_needle_grid(cell)
            video, index = insert_needle(haystack, needle, depth)
            query = make_aligned_query(needle, spec.query_alignment, spec.query_tokens, cell.seed)
            compressed, stats = compress(video, query, cfg)
            mask = compressed.frame_indices == index
            kept = int(mask.sum())
            full = bool((compressed.levels[mask] == LEVEL_CODE["full"]).any()) if kept else False
            results.append(
                {
                    "frame_count": count,
                    "depth": depth,
                    "needle_index": index,
                    "needle_full_res": full,
                    "needle_tokens_kept_fraction": kept / (video.grid_h * video.grid_w),
                    "any_token_survives": kept > 0,
                    "n_full_res": stats.n_full_res,
                    "tokens_final": stats.tokens_final,
                }
            )
    return results


def make_mixed_corpus(
    n_videos: int,
    seed: int,
    n_frames_range: tuple[int, int] = (768, 1280),
    dim: int = 32,
    grid: tuple[int, int] = (12, 12),
) -> list[SynthSpec]:
    """Calibrated corpus mixing static and dynamic scenes across videos.

    Video lengths keep every run over budget after pooling, so the spatial
    stage always executes; the drift-fraction range centers the corpus means
    near the reference keep and reduction rates.
    """
    if n_videos < 1:
        raise InvalidConfigError(f"corpus size must be positive, got {n_videos}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    specs = []
    for _ in range(n_videos):
        n_frames = int(rng.integers(n_frames_range[0], n_frames_range[1] + 1))
        specs.append(
            SynthSpec(
                n_frames=n_frames,
                n_scenes=max(1, n_frames // CORPUS_SCENE_LEN),
                intra_scene_noise=0.02,
                drift_scenes_fraction=float(rng.uniform(0.28, 0.44)),
                dim=dim,
                grid=grid,
                seed=int(rng.integers(0, 2**63)),
            )
        )
    return specs


def _report_query(dim: int, seed: int) -> QueryEmbedding:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E]))
    rows = rng.standard_normal((8, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return QueryEmbedding(rows.astype(np.float32))


def reduction_report(
    corpus: list[SynthSpec], cfg: CompressionConfig
) -> tuple[list[CompressionStats], dict]:
    """Compress every corpus video and aggregate the per-stage reduction rates."""
    if not corpus:
        raise InvalidConfigError("corpus must contain at least one video spec")
    per_video = []
    for spec in corpus:
        video = gen_video(spec)
        query = _report_query(spec.dim, spec.seed)
        _, stats = compress(video, query, cfg)
        per_video.append(stats)
    keep_rates = [s.temporal_keep_rate for s in per_video]
    stc_rates = [s.spatial_reduction_rate for s in per_video]
    total_rates = [s.total_reduction_rate for s in per_video]
    keep_hist, edges = np.histogram(keep_rates, bins=10, range=(0.0, 1.0))
    stc_hist, _ = np.histogram(stc_rates, bins=10, range=(0.0, 1.0))
    aggregate = {
        "n_videos": len(per_video),
        "mean_frames_kept": statistics.fmean(keep_rates),
        "mean_tokens_reduced": statistics.fmean(stc_rates),
        "mean_total_reduction": statistics.fmean(total_rates),
        "frames_kept_histogram": keep_hist.tolist(),
        "tokens_reduced_histogram": stc_hist.tolist(),
        "histogram_bin_edges": edges.tolist(),
    }
    return per_video, aggregate


def anchor_ablation(corpus: list[SynthSpec], cfg: CompressionConfig) -> dict[str, float]:
    """Mean spatial reduction rate of each anchor strategy on one corpus."""
    from .spatial import AnchorStrategy

    out = {}
    for strategy in AnchorStrategy:
        trial_cfg = replace(cfg, anchor=strategy)
        _, aggregate = reduction_report(corpus, trial_cfg)
        out[strategy.value] = aggregate["mean_tokens_reduced"]
    return out
