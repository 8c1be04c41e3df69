"""Point cloud -> token sequence: FPS centers, kNN patches, shared-MLP embedding.

Ordering is fully canonical so the whole encoder is invariant to input point
order: FPS starts from the lexicographically smallest point and breaks
min-distance ties lexicographically, kNN breaks distance ties by index, and
the patch embedding max-pools over the k neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidConfig, InvalidInput, NumericalError, ShapeError

COLOR_CONSTANT = 0.4  # substituted per channel when a cloud has no colors


def farthest_point_sampling(points: np.ndarray, s: int) -> np.ndarray:
    """Indices of s greedy farthest-point centers.

    The first center is the lexicographically smallest point; each next center
    maximizes the distance to the chosen set, ties broken lexicographically by
    coordinates. For s > N the emission order repeats cyclically.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise InvalidInput(f"expected non-empty (N, 3) points, got {points.shape}")
    if s < 1:
        raise InvalidInput(f"need at least one center, got s={s}")
    n = points.shape[0]

    lex = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    base = min(s, n)
    chosen = np.empty(base, dtype=np.int64)
    chosen[0] = lex[0]
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)
    # Rank points lexicographically once; ties in max-distance pick the
    # smallest rank, which the argmax below honors via a rank-ordered view.
    rank_order = lex
    dist_ranked = dist[rank_order]
    for i in range(1, base):
        far = rank_order[int(np.argmax(dist_ranked))]
        chosen[i] = far
        d_new = np.linalg.norm(points - points[far], axis=1)
        np.minimum(dist, d_new, out=dist)
        dist_ranked = dist[rank_order]
    if s <= n:
        return chosen
    reps = -(-s // n)
    return np.tile(chosen, reps)[:s]


@dataclass
class PatchSet:
    centers: np.ndarray           # (S, 3)
    neighbor_indices: np.ndarray  # (S, k)
    relative_points: np.ndarray   # (S, k, 3) = neighbor - center
    patch_colors: np.ndarray      # (S, k, 3)


def knn_group(points: np.ndarray, colors: np.ndarray | None,
              center_indices: np.ndarray, k: int) -> PatchSet:
    """Group the k nearest neighbors (L2, ties by index) around each center."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    if k > n:
        raise InvalidConfig(f"k={k} exceeds cloud size {n}")
    centers = points[center_indices]
    d2 = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(-1)  # (S, N)
    # Stable sort realizes the (distance, index) tie-break exactly.
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rel = points[neighbors] - centers[:, None, :]
    if colors is None:
        pcol = np.full((len(centers), k, 3), COLOR_CONSTANT)
    else:
        colors = np.asarray(colors, dtype=np.float64)
        pcol = colors[neighbors]
    return PatchSet(
        centers=centers,
        neighbor_indices=neighbors,
        relative_points=rel,
        patch_colors=pcol,
    )


@dataclass
class MiniPointNetParams:
    """Shared per-point MLP 6 -> hidden -> C, max pool over k, affine C -> C."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def token_dim(self) -> int:
        return self.w3.shape[1]


def init_mini_pointnet(token_dim: int, rng: np.random.Generator,
                       hidden: int = 64) -> MiniPointNetParams:
    return MiniPointNetParams(
        w1=ad.parameter((6, hidden), rng),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=ad.parameter((hidden, token_dim), rng),
        b2=Tensor(np.zeros(token_dim), requires_grad=True),
        w3=ad.parameter((token_dim, token_dim), rng),
        b3=Tensor(np.zeros(token_dim), requires_grad=True),
    )


@dataclass
class TokenSequence:
    tokens: Tensor        # (S, C) or (B, S, C)
    centers: np.ndarray   # matching (S, 3) / (B, S, 3); kept for serialization


def mini_pointnet_embed(features, params: MiniPointNetParams) -> Tensor:
    """Embed patch features (..., S, k, 6) into tokens (..., S, C).

    Per-point shared affine -> SiLU -> affine -> SiLU, max pool over the k
    points, then one affine C -> C. Pooling makes the token invariant to any
    within-patch reordering.
    """
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if feats.shape[-1] != params.w1.shape[0]:
        raise ShapeError(
            f"patch features last dim {feats.shape[-1]} != {params.w1.shape[0]}"
        )
    h = ad.silu(ad.affine(feats, params.w1, params.b1))
    h = ad.silu(ad.affine(h, params.w2, params.b2))
    pooled = ad.amax(h, axis=-2)
    out = ad.affine(pooled, params.w3, params.b3)
    if not np.all(np.isfinite(out.data)):
        raise NumericalError("non-finite token produced by mini_pointnet_embed")
    return out


def patch_features(patches: PatchSet) -> np.ndarray:
    """(S, k, 6) array: relative xyz concatenated with RGB."""
    return np.concatenate([patches.relative_points, patches.patch_colors], axis=-1)


def tokenize(points: np.ndarray, colors: np.ndarray | None, s_tokens: int,
             k_neighbors: int, params: MiniPointNetParams) -> TokenSequence:
    """Full tokenizer: FPS -> kNN -> embedding, for one cloud."""
    centers_idx = farthest_point_sampling(points, s_tokens)
    patches = knn_group(points, colors, centers_idx, k_neighbors)
    tokens = mini_pointnet_embed(patch_features(patches), params)
    return TokenSequence(tokens=tokens, centers=patches.centers)
