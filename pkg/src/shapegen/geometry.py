"""Triangle meshes, camera poses, normal-map rasterization, and Lambert shading.

Conventions used throughout:
  - Object space is right-handed with +y up; the object's front faces +z.
  - `pose_to_rotation` maps object-space points into camera space,
    p_cam = R @ p_obj, with camera x = image right, y = image up and
    z pointing out of the screen toward the viewer.
  - The projection is orthographic; `CameraPose.distance` is kept for
    completeness but does not affect the rendered image.
  - Normal maps store camera-space unit normals per pixel; background pixels
    are exactly the zero vector.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

DEFAULT_FILL_FRACTION = 0.75
_DEGENERATE_AREA = 1e-12


@dataclass
class CameraPose:
    """Euler-angle viewpoint: azimuth/elevation/theta in degrees."""

    azimuth: float
    elevation: float
    theta: float = 0.0
    distance: float = 2.5

    def __post_init__(self):
        if not -180.0 <= self.azimuth <= 180.0:
            raise ValueError(f"azimuth {self.azimuth} outside [-180, 180]")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        if self.distance <= 0:
            raise ValueError(f"distance must be positive, got {self.distance}")

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "theta": self.theta,
            "distance": self.distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(**d)


@dataclass
class Mesh:
    """Indexed triangle mesh. Vertices (V, 3) float64, faces (F, 3) int."""

    vertices: np.ndarray
    faces: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def validate(self) -> None:
        """Raise ValueError when an invariant is violated."""
        if self.faces.size == 0:
            return
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        a, b, c = (self.faces[:, i] for i in range(3))
        if np.any(a == b) or np.any(b == c) or np.any(a == c):
            raise ValueError("face with repeated vertex")
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        areas = np.linalg.norm(cross, axis=1)
        if np.any(areas <= _DEGENERATE_AREA):
            raise ValueError("degenerate face with ~zero area")

    def transformed(self, rotation: np.ndarray) -> "Mesh":
        """New mesh with vertices rotated by the given 3x3 matrix."""
        return Mesh(self.vertices @ np.asarray(rotation).T, self.faces.copy(), self.model_id)


def _rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def _rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def _rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def pose_to_rotation(pose: CameraPose) -> np.ndarray:
    """Rotation taking object coordinates to camera coordinates.

    Composition is roll(theta) . pitch(elevation) . yaw(azimuth): positive
    azimuth turns the object's front toward image right, positive elevation
    views the object from above, theta rolls about the optical axis.
    """
    return _rot_z(pose.theta) @ _rot_x(pose.elevation) @ _rot_y(pose.azimuth)


def is_rotation_matrix(R: np.ndarray, atol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        return False
    if not np.allclose(R.T @ R, np.eye(3), atol=atol, rtol=0):
        return False
    return abs(np.linalg.det(R) - 1.0) <= atol


def camera_grid(
    azimuth_range: tuple[float, float],
    elevation_range: tuple[float, float],
    azimuth_step: float,
    elevation_step: float,
) -> list[CameraPose]:
    """Inclusive Cartesian grid of poses with theta fixed at 0."""
    if azimuth_step <= 0 or elevation_step <= 0:
        raise ValueError("steps must be positive")

    def axis(lo, hi, step):
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + i * step for i in range(n)]

    azimuths = axis(*azimuth_range, azimuth_step)
    elevations = axis(*elevation_range, elevation_step)
    return [CameraPose(az, el, 0.0) for az in azimuths for el in elevations]


def _project_vertices(vertices, rotation, resolution, fill_fraction):
    """Camera-space verts -> (pixel x, pixel y, depth). None when degenerate."""
    cam = vertices @ rotation.T
    mins = cam[:, :2].min(axis=0)
    maxs = cam[:, :2].max(axis=0)
    span = float(max(maxs[0] - mins[0], maxs[1] - mins[1]))
    if span < 1e-12:
        return None, None
    scale = fill_fraction * resolution / span
    center = (mins + maxs) / 2.0
    px = (cam[:, 0] - center[0]) * scale + resolution / 2.0
    py = resolution / 2.0 - (cam[:, 1] - center[1]) * scale
    pz = cam[:, 2] * scale
    return cam, np.stack([px, py, pz], axis=1)


def rasterize_normal_map(
    mesh: Mesh,
    pose: CameraPose,
    resolution: int,
    fill_fraction: float = DEFAULT_FILL_FRACTION,
) -> np.ndarray:
    """Render per-face flat normals into a (res, res, 3) float32 map.

    Orthographic projection, depth buffering, back-face culling. The object
    is scaled and centered so its projected bounding box spans
    `fill_fraction` of the frame. A mesh with no visible geometry yields an
    all-background (zero) map.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    out = np.zeros((resolution, resolution, 3), dtype=np.float32)
    if len(mesh.faces) == 0 or len(mesh.vertices) == 0:
        return out

    rotation = pose_to_rotation(pose)
    cam, proj = _project_vertices(mesh.vertices, rotation, resolution, fill_fraction)
    if cam is None:
        return out

    tri_cam = cam[mesh.faces]
    normals = np.cross(tri_cam[:, 1] - tri_cam[:, 0], tri_cam[:, 2] - tri_cam[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > _DEGENERATE_AREA
    normals = normals[ok] / norms[ok, None]
    tri_px = proj[mesh.faces[ok]]

    front = normals[:, 2] > 0.0
    normals = normals[front]
    tri_px = tri_px[front]

    zbuf = np.full((resolution, resolution), -np.inf)
    for t in range(len(tri_px)):
        ax, ay, az = tri_px[t, 0]
        bx, by, bz = tri_px[t, 1]
        cx, cy, cz = tri_px[t, 2]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area2) < _DEGENERATE_AREA:
            continue
        x0 = max(0, int(math.floor(min(ax, bx, cx) - 0.5)))
        x1 = min(resolution - 1, int(math.ceil(max(ax, bx, cx) - 0.5)))
        y0 = max(0, int(math.floor(min(ay, by, cy) - 0.5)))
        y1 = min(resolution - 1, int(math.ceil(max(ay, by, cy) - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = (cx - bx) * (gy - by) - (cy - by) * (gx - bx)
        w1 = (ax - cx) * (gy - cy) - (ay - cy) * (gx - cx)
        w2 = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)
        if area2 > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        if not inside.any():
            continue
        depth = (w0 * az + w1 * bz + w2 * cz) / area2
        sub = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        closer = inside & (depth > sub)
        sub[closer] = depth[closer]
        out[y0 : y1 + 1, x0 : x1 + 1][closer] = normals[t].astype(np.float32)
    return out


def foreground_mask(normal_map: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels carrying a (nonzero) normal."""
    return np.any(normal_map != 0.0, axis=-1)


def shade_image(
    mesh: Mesh,
    pose: CameraPose,
    albedo: tuple[float, float, float],
    light_dir: np.ndarray,
    background: tuple[float, float, float],
    resolution: int,
    ambient: float = 0.2,
    fill_fraction: float = DEFAULT_FILL_FRACTION,
) -> np.ndarray:
    """Lambert-shaded render, (res, res, 3) float32 with values in [-1, 1].

    Per-pixel intensity is albedo * max(0, n . light) + ambient, clamped to
    [0, 1] and mapped linearly onto [-1, 1]. Background pixels take the
    background color.
    """
    light = np.asarray(light_dir, dtype=np.float64)
    if abs(np.linalg.norm(light) - 1.0) > 1e-6:
        raise ValueError("light_dir must be unit length")
    nmap = rasterize_normal_map(mesh, pose, resolution, fill_fraction)
    mask = foreground_mask(nmap)
    lambert = np.clip(nmap.astype(np.float64) @ light, 0.0, None)
    rgb = np.empty((resolution, resolution, 3), dtype=np.float64)
    for ch in range(3):
        rgb[:, :, ch] = np.where(mask, albedo[ch] * lambert + ambient, background[ch])
    rgb = np.clip(rgb, 0.0, 1.0)
    return (2.0 * rgb - 1.0).astype(np.float32)


# --------------------------------------------------------------------------
# primitive generators (stand-ins for CAD/scanned models)

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [3, 7, 6], [3, 6, 2],  # +y
        [0, 4, 7], [0, 7, 3],  # -x
        [1, 2, 6], [1, 6, 5],  # +x
    ],
    dtype=np.int64,
)


def _box_mesh(size, center=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    sx, sy, sz = (s / 2.0 for s in size)
    cx, cy, cz = center
    verts = np.array(
        [
            [cx - sx, cy - sy, cz - sz],
            [cx + sx, cy - sy, cz - sz],
            [cx + sx, cy + sy, cz - sz],
            [cx - sx, cy + sy, cz - sz],
            [cx - sx, cy - sy, cz + sz],
            [cx + sx, cy - sy, cz + sz],
            [cx + sx, cy + sy, cz + sz],
            [cx - sx, cy + sy, cz + sz],
        ],
        dtype=np.float64,
    )
    return verts, _BOX_FACES.copy()


def _icosphere(radius: float, subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for (a, b, c) in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius
    return v, np.asarray(faces, dtype=np.int64)


def _cylinder(radius: float, height: float, segments: int) -> tuple[np.ndarray, np.ndarray]:
    angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    bottom = np.stack([radius * np.cos(angles), np.full(segments, -height / 2), radius * np.sin(angles)], axis=1)
    top = bottom.copy()
    top[:, 1] = height / 2
    verts = np.vstack([bottom, top, [[0, -height / 2, 0]], [[0, height / 2, 0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, i + segments, j), (j, i + segments, j + segments)]  # side
        faces += [(cb, i, j), (ct, j + segments, i + segments)]           # caps
    return verts, np.asarray(faces, dtype=np.int64)


def make_primitive(kind: str, params: dict | None = None, seed: int = 0) -> Mesh:
    """Build a watertight primitive mesh deterministically from `seed`.

    Kinds: box (size), sphere (radius, subdivisions), cylinder (radius,
    height, segments), composite (2-4 randomly scaled and offset boxes,
    a rough stand-in for furniture-like silhouettes).
    """
    params = dict(params or {})
    if kind == "box":
        verts, faces = _box_mesh(params.pop("size", (1.0, 1.0, 1.0)))
    elif kind == "sphere":
        verts, faces = _icosphere(params.pop("radius", 1.0), params.pop("subdivisions", 2))
    elif kind == "cylinder":
        verts, faces = _cylinder(
            params.pop("radius", 0.5), params.pop("height", 1.2), params.pop("segments", 24)
        )
    elif kind == "composite":
        spread = params.pop("spread", 0.45)
        rng = np.random.default_rng(seed)
        num = int(params.pop("num_boxes", rng.integers(2, 5)))
        all_v, all_f = [], []
        offset = 0
        for i in range(num):
            size = rng.uniform(0.3, 1.0, size=3)
            center = (0.0, 0.0, 0.0) if i == 0 else tuple(rng.uniform(-spread, spread, size=3))
            v, f = _box_mesh(tuple(size), center)
            all_v.append(v)
            all_f.append(f + offset)
            offset += len(v)
        verts = np.vstack(all_v)
        faces = np.vstack(all_f)
    else:
        raise ValueError(f"unknown primitive kind: {kind!r}")
    if params:
        raise ValueError(f"unknown parameters for {kind}: {sorted(params)}")
    mesh = Mesh(verts, faces, model_id=f"{kind}_{seed}")
    mesh.validate()
    return mesh


# --------------------------------------------------------------------------
# Wavefront-style ASCII mesh IO (v/f records only)

def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path, model_id: str | None = None) -> Mesh:
    verts, faces = [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{line_no}: malformed vertex record")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) < 3:
                    raise ValueError(f"{path}:{line_no}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if model_id is None:
        model_id = os.path.splitext(os.path.basename(str(path)))[0]
    mesh = Mesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64), model_id)
    mesh.validate()
    return mesh
