"""Synthetic dataset construction, storage, augmentation, and batch sampling.

A dataset is a directory of PNG files plus a JSON-lines manifest. Shaded
renders play the role of real photographs ("real_pool"), normal maps rendered
from a disjoint set of models form the shape condition pool ("shape_pool");
the disjointness is what makes the training data unpaired. An optional "test"
split holds labeled shaded renders from further held-out models for the
pose-estimation protocol.

Normal maps are stored as 16-bit RGB PNGs with channel = round((c+1)/2*65535).
The all-midpoint triple (32768, 32768, 32768) is reserved for the exact zero
(background) vector; valid unit normals can never quantize onto it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .geometry import (
    CameraPose,
    Mesh,
    foreground_mask,
    make_primitive,
    rasterize_normal_map,
    shade_image,
)
from .seeding import substream

try:  # decode errors are reported via exceptions; silence cv2's stderr chatter
    cv2.utils.logging.setLogLevel(cv2.utils.logging.LOG_LEVEL_SILENT)
except AttributeError:
    pass

MANIFEST_FORMAT = "shapegen-manifest-v1"
_MID = 32768  # encoded value of component 0.0; reserved for background

SPLITS = ("real_pool", "shape_pool", "test")
MODALITIES = ("image", "normal_map")


class DatasetError(RuntimeError):
    pass


@dataclass
class AugmentParams:
    """Random shift/scale jitter applied to normal maps during sampling."""

    max_shift_fraction: float = 0.10
    scale_range: tuple[float, float] = (0.8, 1.1)

    def __post_init__(self):
        if not 0.0 <= self.max_shift_fraction < 0.5:
            raise ValueError("max_shift_fraction must be in [0, 0.5)")
        lo, hi = self.scale_range
        if lo <= 0 or hi < lo:
            raise ValueError("scale_range must be positive and ordered")

    def to_dict(self) -> dict:
        return {"max_shift_fraction": self.max_shift_fraction, "scale_range": list(self.scale_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams":
        d = dict(d)
        if "scale_range" in d:
            d["scale_range"] = tuple(d["scale_range"])
        return cls(**d)


@dataclass
class SampleRecord:
    file_path: str
    modality: str
    object_class: str
    model_id: str
    pose: CameraPose
    split: str

    def to_dict(self) -> dict:
        return {
            "file_path": self.file_path,
            "modality": self.modality,
            "object_class": self.object_class,
            "model_id": self.model_id,
            "pose": self.pose.to_dict(),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        if d["modality"] not in MODALITIES:
            raise DatasetError(f"unknown modality {d['modality']!r}")
        if d["split"] not in SPLITS:
            raise DatasetError(f"unknown split {d['split']!r}")
        return cls(
            file_path=d["file_path"],
            modality=d["modality"],
            object_class=d["object_class"],
            model_id=d["model_id"],
            pose=CameraPose.from_dict(d["pose"]),
            split=d["split"],
        )


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    class_name: str
    resolution: int
    seed: int
    root: str = ""  # directory holding the referenced files; not serialized

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def model_ids(self, split: str) -> set[str]:
        return {r.model_id for r in self.records if r.split == split}

    def check_pools_disjoint(self) -> None:
        common = self.model_ids("real_pool") & self.model_ids("shape_pool")
        if common:
            raise DatasetError(f"real/shape pools share models: {sorted(common)}")

    def save(self, path) -> None:
        header = {
            "format": MANIFEST_FORMAT,
            "class_name": self.class_name,
            "resolution": self.resolution,
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise DatasetError(f"empty manifest: {path}")
        header = json.loads(lines[0])
        if header.get("format") != MANIFEST_FORMAT:
            raise DatasetError(f"not a manifest (format={header.get('format')!r})")
        records = [SampleRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        manifest = cls(
            records=records,
            class_name=header["class_name"],
            resolution=int(header["resolution"]),
            seed=int(header["seed"]),
            root=os.path.dirname(os.path.abspath(str(path))),
        )
        manifest.check_pools_disjoint()
        return manifest

    def validate_files(self) -> None:
        """Check every referenced file exists and decodes to the declared size."""
        for rec in self.records:
            path = os.path.join(self.root, rec.file_path)
            if not os.path.exists(path):
                raise DatasetError(f"missing file: {rec.file_path}")
            if rec.modality == "normal_map":
                arr = read_normal_map(path)
            else:
                arr = read_image(path)
            if arr.shape[:2] != (self.resolution, self.resolution):
                raise DatasetError(f"{rec.file_path}: wrong resolution {arr.shape[:2]}")


# --------------------------------------------------------------------------
# PNG codecs


def encode_normal_map(normal_map: np.ndarray) -> bytes:
    """Encode a normal map as a 16-bit RGB PNG (lossless up to quantization)."""
    nm = np.asarray(normal_map, dtype=np.float64)
    if nm.ndim != 3 or nm.shape[2] != 3:
        raise ValueError("normal map must be (H, W, 3)")
    q = np.rint((nm + 1.0) / 2.0 * 65535.0)
    q = np.clip(q, 0, 65535).astype(np.uint16)
    ok, buf = cv2.imencode(".png", q[:, :, ::-1])
    if not ok:
        raise DatasetError("PNG encoding failed")
    return buf.tobytes()


def decode_normal_map(data: bytes) -> np.ndarray:
    """Inverse of `encode_normal_map`; restores background zeros exactly."""
    arr = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DatasetError("malformed normal-map PNG")
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint16:
        raise DatasetError(f"not a 16-bit RGB normal map (dtype={getattr(arr, 'dtype', None)})")
    q = arr[:, :, ::-1].astype(np.float64)
    nm = q / 65535.0 * 2.0 - 1.0
    background = np.all(arr == _MID, axis=2)
    nm[background] = 0.0
    return nm.astype(np.float32)


def write_normal_map(path, normal_map: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_normal_map(normal_map))


def read_normal_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_normal_map(fh.read())


def write_image(path, image: np.ndarray) -> None:
    """Store a [-1, 1] float image as an 8-bit RGB PNG."""
    img = np.asarray(image, dtype=np.float64)
    q = np.clip(np.rint((img + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), q[:, :, ::-1]):
        raise DatasetError(f"failed to write {path}")


def read_image(path) -> np.ndarray:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DatasetError(f"malformed image PNG: {path}")
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise DatasetError(f"not an 8-bit RGB image: {path}")
    return (arr[:, :, ::-1].astype(np.float32) / 255.0 * 2.0 - 1.0).astype(np.float32)


# --------------------------------------------------------------------------
# augmentation


def random_shift_scale(normal_map: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Shift and rescale the object with nearest-neighbor resampling.

    Nearest-neighbor keeps every output pixel an exact copy of an input
    pixel, so unit normals stay unit and background stays exactly zero.
    """
    h, w = normal_map.shape[:2]
    tx = rng.uniform(-params.max_shift_fraction, params.max_shift_fraction) * w
    ty = rng.uniform(-params.max_shift_fraction, params.max_shift_fraction) * h
    s = rng.uniform(params.scale_range[0], params.scale_range[1])

    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    src_x = np.rint((xs - cx - tx) / s + cx).astype(np.int64)
    src_y = np.rint((ys - cy - ty) / s + cy).astype(np.int64)
    valid_x = (src_x >= 0) & (src_x < w)
    valid_y = (src_y >= 0) & (src_y < h)

    out = np.zeros_like(normal_map)
    vy = np.nonzero(valid_y)[0]
    vx = np.nonzero(valid_x)[0]
    if len(vy) and len(vx):
        out[np.ix_(vy, vx)] = normal_map[np.ix_(src_y[vy], src_x[vx])]
    return out


# --------------------------------------------------------------------------
# dataset builder

_DEFAULT_KINDS = ("box", "sphere", "cylinder", "composite")


def _sample_pose_in_range(poses: list[CameraPose], rng: np.random.Generator) -> CameraPose:
    az = [p.azimuth for p in poses]
    el = [p.elevation for p in poses]
    return CameraPose(rng.uniform(min(az), max(az)), rng.uniform(min(el), max(el)), 0.0)


def _render_real_sample(mesh: Mesh, pose: CameraPose, resolution, fill_fraction, rng):
    albedo = tuple(rng.uniform(0.25, 1.0, size=3))
    background = tuple(rng.uniform(0.0, 1.0, size=3))
    light = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.5, 1.0)])
    light /= np.linalg.norm(light)
    return shade_image(mesh, pose, albedo, light, background, resolution, fill_fraction=fill_fraction)


def build_synthetic_dataset(
    num_models: int,
    poses: list[CameraPose],
    resolution: int,
    seed: int,
    out_dir,
    *,
    kinds: tuple[str, ...] = _DEFAULT_KINDS,
    class_name: str = "primitives",
    fill_fraction: float = 0.75,
    num_real_images: int | None = None,
    num_test_models: int = 0,
    images_per_test_model: int = 20,
    validate: bool = True,
) -> DatasetManifest:
    """Generate meshes, render both pools, write files and the manifest.

    Half of `num_models` renders shaded images ("real" stand-ins) at random
    continuous poses inside the grid's range; the other half renders normal
    maps over the full pose grid. The two halves never share a model, which
    is what makes downstream training unpaired. Test models (if any) are
    additional held-out meshes rendered as labeled shaded images.
    """
    if num_models < 2:
        raise ValueError("need at least 2 models to form disjoint pools")
    if not poses:
        raise ValueError("pose list is empty")
    out_dir = str(out_dir)
    rng = substream(seed, "dataset")
    try:
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(os.path.join(out_dir, "real"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "shape"), exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory: {exc}") from exc

    total = num_models + num_test_models
    meshes = []
    for i in range(total):
        kind = kinds[i % len(kinds)]
        mesh = make_primitive(kind, seed=int(rng.integers(0, 2**31 - 1)))
        mesh.model_id = f"{kind}_{i:03d}"
        meshes.append(mesh)
    n_shape = num_models // 2
    shape_meshes = meshes[:n_shape]
    real_meshes = meshes[n_shape:num_models]
    test_meshes = meshes[num_models:]

    records: list[SampleRecord] = []

    for mesh in shape_meshes:
        for j, pose in enumerate(poses):
            nmap = rasterize_normal_map(mesh, pose, resolution, fill_fraction)
            rel = f"shape/{mesh.model_id}_p{j:04d}.png"
            write_normal_map(os.path.join(out_dir, rel), nmap)
            records.append(
                SampleRecord(rel, "normal_map", mesh.model_id.rsplit("_", 1)[0], mesh.model_id, pose, "shape_pool")
            )

    if num_real_images is None:
        num_real_images = len(real_meshes) * len(poses)
    for j in range(num_real_images):
        mesh = real_meshes[j % len(real_meshes)]
        pose = _sample_pose_in_range(poses, rng)
        img = _render_real_sample(mesh, pose, resolution, fill_fraction, rng)
        rel = f"real/{mesh.model_id}_r{j:04d}.png"
        write_image(os.path.join(out_dir, rel), img)
        records.append(
            SampleRecord(rel, "image", mesh.model_id.rsplit("_", 1)[0], mesh.model_id, pose, "real_pool")
        )

    if test_meshes:
        os.makedirs(os.path.join(out_dir, "test"), exist_ok=True)
    for mesh in test_meshes:
        for j in range(images_per_test_model):
            pose = _sample_pose_in_range(poses, rng)
            img = _render_real_sample(mesh, pose, resolution, fill_fraction, rng)
            rel = f"test/{mesh.model_id}_t{j:04d}.png"
            write_image(os.path.join(out_dir, rel), img)
            records.append(
                SampleRecord(rel, "image", mesh.model_id.rsplit("_", 1)[0], mesh.model_id, pose, "test")
            )

    manifest = DatasetManifest(records, class_name, resolution, seed, root=out_dir)
    manifest.check_pools_disjoint()
    manifest.save(os.path.join(out_dir, "manifest.jsonl"))
    if validate:
        manifest.validate_files()
    return manifest


# --------------------------------------------------------------------------
# batch sampling


class BatchSampler:
    """Unpaired (image, normal map, z) batches with per-draw augmentation.

    Decoded files are cached in memory; the sampler owns its RNG so training
    runs replay exactly from a saved generator state.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        batch_size: int,
        sigma2: float,
        appearance_dim: int,
        augment: AugmentParams,
        rng: np.random.Generator,
    ):
        self.manifest = manifest
        self.batch_size = batch_size
        self.sigma2 = sigma2
        self.appearance_dim = appearance_dim
        self.augment = augment
        self.rng = rng
        self._real = manifest.split_records("real_pool")
        self._shape = manifest.split_records("shape_pool")
        if not self._real or not self._shape:
            raise DatasetError("both real and shape pools must be non-empty")
        self._cache: dict[str, np.ndarray] = {}

    def _load(self, rec: SampleRecord) -> np.ndarray:
        arr = self._cache.get(rec.file_path)
        if arr is None:
            path = os.path.join(self.manifest.root, rec.file_path)
            arr = read_normal_map(path) if rec.modality == "normal_map" else read_image(path)
            self._cache[rec.file_path] = arr
        return arr

    def next(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[SampleRecord], list[SampleRecord]]:
        img_idx = self.rng.integers(0, len(self._real), size=self.batch_size)
        map_idx = self.rng.integers(0, len(self._shape), size=self.batch_size)
        img_recs = [self._real[i] for i in img_idx]
        map_recs = [self._shape[i] for i in map_idx]
        images = np.stack([self._load(r) for r in img_recs])
        maps = np.stack(
            [random_shift_scale(self._load(r), self.augment, self.rng) for r in map_recs]
        )
        z = self.rng.normal(0.0, np.sqrt(self.sigma2), size=(self.batch_size, self.appearance_dim))
        return images, maps, z.astype(np.float32), img_recs, map_recs


def sample_batch(
    manifest: DatasetManifest,
    batch_size: int,
    sigma2: float,
    appearance_dim: int,
    augment: AugmentParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One unpaired batch: images and normal maps drawn independently."""
    sampler = BatchSampler(manifest, batch_size, sigma2, appearance_dim, augment, rng)
    images, maps, z, _, _ = sampler.next()
    return images, maps, z
