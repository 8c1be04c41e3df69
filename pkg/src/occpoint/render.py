"""Software z-buffer rendering and depth back-projection.

`rasterize` draws a normalized mesh through a pinhole camera, keeping the
nearest surface per pixel. Depth is the Euclidean distance from the camera
along the pixel's view ray (not the z coordinate), so `backproject` recovers
object-space points as camera + depth * ray without any extra bookkeeping.
Uncovered pixels hold +inf depth, which doubles as the transparent-background
flag. Interpolation is perspective-correct: world positions and colors are
blended with screen barycentrics weighted by 1/z, which places every
back-projected point exactly on a triangle plane (up to float rounding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import CameraPose
from .errors import EmptyCloud, InvalidConfig
from .meshio import TriangleMesh

BACKGROUND_GRAY = 0.5


@dataclass
class DepthImage:
    values: np.ndarray  # (H, W) float64, +inf where no surface

    @property
    def covered(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass
class PartialPointCloud:
    points: np.ndarray  # (N, 3)
    colors: np.ndarray | None = None  # (N, 3) in [0, 1]
    view_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] < 1:
            raise EmptyCloud("point cloud has no points")


def rasterize(mesh: TriangleMesh, pose: CameraPose) -> tuple[DepthImage, np.ndarray]:
    """Render (DepthImage, (H, W, 3) color image) of the mesh from one pose.

    Vertex colors are interpolated when present; otherwise faces render as a
    constant mid-gray. Background pixels get the gray constant too, but are
    identified by the +inf depth, never by color.
    """
    w, h = pose.resolution
    if w < 1 or h < 1:
        raise InvalidConfig(f"zero-resolution image {pose.resolution}")

    depth = np.full((h, w), np.inf, dtype=np.float64)
    color = np.full((h, w, 3), BACKGROUND_GRAY, dtype=np.float64)

    verts = mesh.vertices
    pix, zc = pose.project(verts)
    if mesh.vertex_colors is not None:
        vcol = mesh.vertex_colors
    else:
        vcol = np.full((verts.shape[0], 3), BACKGROUND_GRAY)

    cam = pose.position
    for face in mesh.faces:
        z = zc[face]
        if np.any(z <= 1e-9):
            continue  # behind or at the pinhole; normalized meshes never hit this
        p = pix[face]  # (3, 2) screen corners
        # Signed doubled area of the projected triangle; degenerate -> skip.
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
        if abs(area) < 1e-12:
            continue

        x0 = max(int(np.floor(p[:, 0].min() - 0.5)), 0)
        x1 = min(int(np.ceil(p[:, 0].max() + 0.5)), w - 1)
        y0 = max(int(np.floor(p[:, 1].min() - 0.5)), 0)
        y1 = min(int(np.ceil(p[:, 1].max() + 0.5)), h - 1)
        if x0 > x1 or y0 > y1:
            continue

        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)

        # Screen-space barycentrics from edge functions.
        def edge(ax, ay, bx, by):
            return (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)

        w0 = edge(p[1, 0], p[1, 1], p[2, 0], p[2, 1])
        w1 = edge(p[2, 0], p[2, 1], p[0, 0], p[0, 1])
        w2 = edge(p[0, 0], p[0, 1], p[1, 0], p[1, 1])
        lam = np.stack([w0, w1, w2], axis=-1) / area
        inside = np.all(lam >= 0.0, axis=-1)
        if not np.any(inside):
            continue

        lam = lam[inside]  # (M, 3)
        # Perspective-correct weights: screen barycentrics over vertex depth.
        pw = lam / z[None, :]
        pw = pw / pw.sum(axis=1, keepdims=True)

        world = pw @ mesh.vertices[face]  # exact ray/plane intersection points
        dist = np.linalg.norm(world - cam, axis=1)
        col = np.clip(pw @ vcol[face], 0.0, 1.0)

        yy, xx = np.nonzero(inside)
        yy = yy + y0
        xx = xx + x0
        better = dist < depth[yy, xx]
        depth[yy[better], xx[better]] = dist[better]
        color[yy[better], xx[better]] = col[better]

    return DepthImage(values=depth), color


def backproject(depth: DepthImage, color: np.ndarray, pose: CameraPose) -> PartialPointCloud:
    """One object-space point per covered pixel: camera + depth * pixel ray."""
    h, w = depth.values.shape
    if color.shape[:2] != (h, w):
        raise InvalidConfig(
            f"depth {depth.values.shape} and color {color.shape[:2]} resolutions differ"
        )
    mask = depth.covered
    if not np.any(mask):
        raise EmptyCloud("depth image is all background")
    rays = pose.pixel_rays()[mask]
    d = depth.values[mask][:, None]
    points = pose.position + d * rays
    return PartialPointCloud(points=points, colors=color[mask].copy(), view_id=pose.view_id)


def sample_points(cloud: PartialPointCloud, n: int = 2048, rng_seed: int = 0) -> PartialPointCloud:
    """Resample to exactly n points, deterministically under rng_seed.

    Uniform without replacement when the cloud is large enough; with
    replacement otherwise.
    """
    if n <= 0:
        raise InvalidConfig(f"sample size must be positive, got {n}")
    total = cloud.points.shape[0]
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    replace = total < n
    idx = rng.choice(total, size=n, replace=replace)
    return PartialPointCloud(
        points=cloud.points[idx],
        colors=None if cloud.colors is None else cloud.colors[idx],
        view_id=cloud.view_id,
    )
