"""Parametric toy meshes: eight shape families for desk-scale experiments.

Each generator returns a closed triangle mesh with outward-facing winding.
`toy_object_set` builds the 16-object / 8-class corpus (two aspect variants
per class) used by the desk-scale training run, with class-coded vertex
colors plus a height gradient so color carries geometric signal.
"""

from __future__ import annotations

import math

import numpy as np

from .meshio import TriangleMesh

CLASS_NAMES = (
    "cube", "sphere", "cylinder", "cone", "torus", "pyramid", "prism", "dumbbell",
)

_CLASS_COLORS = {
    "cube": (0.85, 0.25, 0.20),
    "sphere": (0.20, 0.55, 0.85),
    "cylinder": (0.25, 0.75, 0.30),
    "cone": (0.90, 0.70, 0.15),
    "torus": (0.60, 0.30, 0.80),
    "pyramid": (0.15, 0.75, 0.70),
    "prism": (0.90, 0.45, 0.60),
    "dumbbell": (0.55, 0.55, 0.25),
}


def make_cube(half: float = 1.0) -> TriangleMesh:
    s = half
    v = np.array([
        [-s, -s, -s], [s, -s, -s], [s, s, -s], [-s, s, -s],
        [-s, -s, s], [s, -s, s], [s, s, s], [-s, s, s],
    ], dtype=np.float64)
    # Quads per side, outward winding, fan-triangulated.
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (3, 0, 4, 7),  # -x
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append([a, b, c])
        faces.append([a, c, d])
    return TriangleMesh(vertices=v, faces=np.array(faces))


def make_icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriangleMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    return TriangleMesh(vertices=v, faces=np.array(faces))


def _ring(n: int, radius: float, z: float, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2.0 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(ang), radius * np.sin(ang), np.full(n, z)], axis=1)


def make_cylinder(segments: int = 24, radius: float = 0.6, height: float = 2.0) -> TriangleMesh:
    n = segments
    top = _ring(n, radius, height / 2)
    bot = _ring(n, radius, -height / 2)
    verts = np.vstack([top, bot, [[0, 0, height / 2]], [[0, 0, -height / 2]]])
    ct, cb = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, n + i, n + j], [i, n + j, j]]       # side, outward
        faces += [[ct, i, j]]                             # top cap
        faces += [[cb, n + j, n + i]]                     # bottom cap
    return TriangleMesh(vertices=verts, faces=np.array(faces))


def make_cone(segments: int = 24, radius: float = 0.9, height: float = 2.0) -> TriangleMesh:
    n = segments
    base = _ring(n, radius, -height / 2)
    verts = np.vstack([base, [[0, 0, height / 2]], [[0, 0, -height / 2]]])
    apex, cb = n, n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[apex, i, j], [cb, j, i]]
    return TriangleMesh(vertices=verts, faces=np.array(faces))


def make_torus(major_segments: int = 20, minor_segments: int = 12,
               major_radius: float = 0.7, minor_radius: float = 0.3) -> TriangleMesh:
    verts = []
    for i in range(major_segments):
        u = 2.0 * np.pi * i / major_segments
        cu, su = np.cos(u), np.sin(u)
        for j in range(minor_segments):
            v = 2.0 * np.pi * j / minor_segments
            r = major_radius + minor_radius * np.cos(v)
            verts.append([r * cu, r * su, minor_radius * np.sin(v)])
    faces = []
    for i in range(major_segments):
        i2 = (i + 1) % major_segments
        for j in range(minor_segments):
            j2 = (j + 1) % minor_segments
            a = i * minor_segments + j
            b = i2 * minor_segments + j
            c = i2 * minor_segments + j2
            d = i * minor_segments + j2
            faces += [[a, b, c], [a, c, d]]
    return TriangleMesh(vertices=np.array(verts), faces=np.array(faces))


def make_pyramid(half_base: float = 0.9, height: float = 1.6) -> TriangleMesh:
    s = half_base
    v = np.array([
        [-s, -s, 0], [s, -s, 0], [s, s, 0], [-s, s, 0], [0, 0, height],
    ], dtype=np.float64)
    faces = np.array([
        [0, 2, 1], [0, 3, 2],            # base, facing -z
        [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4],
    ])
    return TriangleMesh(vertices=v, faces=faces)


def make_prism(half_height: float = 1.0, radius: float = 0.8) -> TriangleMesh:
    top = _ring(3, radius, half_height, phase=np.pi / 2)
    bot = _ring(3, radius, -half_height, phase=np.pi / 2)
    verts = np.vstack([top, bot])
    faces = [[0, 2, 1], [3, 4, 5]]
    for i in range(3):
        j = (i + 1) % 3
        faces += [[i, 3 + i, 3 + j], [i, 3 + j, j]]
    return TriangleMesh(vertices=verts, faces=np.array(faces))


def _merge(meshes: list[TriangleMesh]) -> TriangleMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.vertices.shape[0]
    return TriangleMesh(vertices=np.vstack(verts), faces=np.vstack(faces))


def make_dumbbell(ball_radius: float = 0.45, spacing: float = 1.1,
                  bar_radius: float = 0.15) -> TriangleMesh:
    top = make_icosphere(1, ball_radius)
    bot = make_icosphere(1, ball_radius)
    top = TriangleMesh(top.vertices + [0, 0, spacing / 2 + ball_radius / 2], top.faces)
    bot = TriangleMesh(bot.vertices - [0, 0, spacing / 2 + ball_radius / 2], bot.faces)
    bar = make_cylinder(10, bar_radius, spacing + ball_radius)
    return _merge([top, bot, bar])


_MAKERS = {
    "cube": make_cube,
    "sphere": make_icosphere,
    "cylinder": make_cylinder,
    "cone": make_cone,
    "torus": make_torus,
    "pyramid": make_pyramid,
    "prism": make_prism,
    "dumbbell": make_dumbbell,
}


def make_class_mesh(class_name: str, variant: int = 0, seed: int = 0) -> TriangleMesh:
    """One colored object of the named class; variants stretch the shape anisotropically."""
    mesh = _MAKERS[class_name]()
    class_id = CLASS_NAMES.index(class_name)
    rng = np.random.Generator(np.random.PCG64([seed, class_id, variant]))
    stretch = rng.uniform(0.6, 1.5, size=3)
    verts = mesh.vertices * stretch

    base = np.array(_CLASS_COLORS[class_name])
    # Even variants are darker, odd variants brighter, plus a small seeded
    # tint: the two objects of a class are told apart by palette whenever
    # colors survive augmentation.
    lightness = 0.72 if variant % 2 == 0 else 1.28
    tint = rng.uniform(-0.06, 0.06, size=3)
    z = verts[:, 2]
    span = max(z.max() - z.min(), 1e-9)
    grad = ((z - z.min()) / span)[:, None] * 0.25
    colors = np.clip(base * lightness + tint + grad, 0.0, 1.0)
    return TriangleMesh(vertices=verts, faces=mesh.faces, vertex_colors=colors)


def toy_object_set(seed: int = 0) -> list[tuple[str, str, TriangleMesh]]:
    """(object_id, class_name, mesh) for the 16-object desk corpus."""
    out = []
    for class_name in CLASS_NAMES:
        for variant in range(2):
            mesh = make_class_mesh(class_name, variant, seed)
            out.append((f"{class_name}_{variant:02d}", class_name, mesh))
    return out
