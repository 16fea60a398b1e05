"""Configuration dataclasses and the strict run-config file schema.

Defaults follow the training recipe the package implements: Adam with
alpha=0.001, beta1=0.5, beta2=0.9, batch size 16, five critic updates per
generator update, appearance prior variance 0.5, and cycle weights
(image, normal, z) = (1.0, 1.0, 10.0) with gradient-penalty weight 10.
Network block tables are configuration, not constants, so tests can run
tiny variants of the exact same architecture.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .dataset import AugmentParams


class ConfigError(ValueError):
    pass


def _strict_kwargs(cls, data: dict, context: str) -> dict:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")
    return data


@dataclass
class LossWeights:
    """Cycle-term and gradient-penalty weights of the joint objective."""

    image: float = 1.0
    normal: float = 1.0
    z: float = 10.0
    gradient_penalty: float = 10.0

    def __post_init__(self):
        for name in ("image", "normal", "z", "gradient_penalty"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"weight {name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**_strict_kwargs(cls, d, "weights"))


@dataclass
class BlockSpec:
    """One network block: C channels, stride S, kernel K."""

    channels: int
    stride: int = 1
    kernel: int = 3
    block_kind: str = "conv"

    def __post_init__(self):
        if self.channels <= 0 or self.stride <= 0 or self.kernel <= 0:
            raise ConfigError("channels, stride and kernel must be positive")
        if self.block_kind not in ("conv", "deconv", "resnet", "dense"):
            raise ConfigError(f"unknown block_kind {self.block_kind!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BlockSpec":
        return cls(**_strict_kwargs(cls, d, "block"))


SHARED_TRUNK_BLOCKS = 6


@dataclass
class NetworkTable:
    """Per-block layout of generators and critics."""

    encoder: list[BlockSpec]
    resnet_blocks: int
    decoder: list[BlockSpec]
    final_kernel: int
    critic: list[BlockSpec]
    z_head: list[BlockSpec]
    dz_hidden: int

    def __post_init__(self):
        if len(self.encoder) != SHARED_TRUNK_BLOCKS:
            raise ConfigError(f"encoder must have exactly {SHARED_TRUNK_BLOCKS} conv blocks")
        for b in self.encoder:
            if b.block_kind != "conv":
                raise ConfigError("encoder blocks must be block_kind=conv")
        for b in self.decoder:
            if b.block_kind != "deconv":
                raise ConfigError("decoder blocks must be block_kind=deconv")
        if self.resnet_blocks < 0:
            raise ConfigError("resnet_blocks must be >= 0")

    def bottleneck(self, resolution: int) -> int:
        size = resolution
        for b in self.encoder:
            size = (size + 2 * (b.kernel // 2) - b.kernel) // b.stride + 1
        return size

    def validate_for(self, resolution: int) -> None:
        size = self.bottleneck(resolution)
        if size < 1:
            raise ConfigError("encoder collapses the spatial extent")
        up = size
        for b in self.decoder:
            up *= b.stride
        if up != resolution:
            raise ConfigError(
                f"decoder restores {up}px from a {size}px bottleneck, expected {resolution}px"
            )
        if resolution >= 32 and size != 16:
            raise ConfigError("generator bottleneck must be 16x16 for resolutions >= 32")

    @classmethod
    def default(cls, resolution: int) -> "NetworkTable":
        if resolution == 64:
            return cls(
                encoder=[
                    BlockSpec(64, 1, 7), BlockSpec(64, 1, 3), BlockSpec(128, 2, 3),
                    BlockSpec(128, 1, 3), BlockSpec(256, 2, 3), BlockSpec(256, 1, 3),
                ],
                resnet_blocks=4,
                decoder=[BlockSpec(128, 2, 3, "deconv"), BlockSpec(64, 2, 3, "deconv")],
                final_kernel=7,
                critic=[BlockSpec(64, 2, 4), BlockSpec(128, 2, 4), BlockSpec(256, 2, 4), BlockSpec(512, 2, 4)],
                z_head=[BlockSpec(256, 2, 3), BlockSpec(256, 2, 3)],
                dz_hidden=128,
            )
        if resolution == 32:
            return cls(
                encoder=[
                    BlockSpec(8, 1, 5), BlockSpec(8, 1, 3), BlockSpec(16, 2, 3),
                    BlockSpec(16, 1, 3), BlockSpec(32, 1, 3), BlockSpec(32, 1, 3),
                ],
                resnet_blocks=2,
                decoder=[BlockSpec(16, 2, 3, "deconv")],
                final_kernel=5,
                critic=[BlockSpec(16, 2, 4), BlockSpec(32, 2, 4), BlockSpec(64, 2, 4)],
                z_head=[BlockSpec(32, 2, 3), BlockSpec(32, 2, 3)],
                dz_hidden=64,
            )
        raise ConfigError(f"no default network table for resolution {resolution}; supply one")

    @classmethod
    def tiny(cls, channels: int = 2) -> "NetworkTable":
        """Minimal table for gradient-check tests on 4x4 inputs."""
        return cls(
            encoder=[BlockSpec(channels, 1, 3) for _ in range(SHARED_TRUNK_BLOCKS)],
            resnet_blocks=1,
            decoder=[],
            final_kernel=3,
            critic=[BlockSpec(channels, 1, 3)],
            z_head=[],
            dz_hidden=4,
        )

    def to_dict(self) -> dict:
        return {
            "encoder": [b.to_dict() for b in self.encoder],
            "resnet_blocks": self.resnet_blocks,
            "decoder": [b.to_dict() for b in self.decoder],
            "final_kernel": self.final_kernel,
            "critic": [b.to_dict() for b in self.critic],
            "z_head": [b.to_dict() for b in self.z_head],
            "dz_hidden": self.dz_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkTable":
        d = dict(_strict_kwargs(cls, d, "network"))
        for key in ("encoder", "decoder", "critic", "z_head"):
            if key in d:
                d[key] = [BlockSpec.from_dict(b) for b in d[key]]
        return cls(**d)


@dataclass
class TrainingConfig:
    """Every training hyperparameter, serializable into checkpoints."""

    alpha: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 16
    critic_steps_per_gen: int = 5
    sigma2: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    appearance_dim: int = 64
    resolution: int = 64
    total_gen_steps: int = 2000
    seed: int = 0
    disable_image_cycle: bool = False
    disable_appearance_discriminator: bool = False
    normalize_cycle: bool = True
    checkpoint_interval: int = 500
    augment: AugmentParams = field(default_factory=AugmentParams)
    network: NetworkTable | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.critic_steps_per_gen < 1:
            raise ConfigError("critic_steps_per_gen must be >= 1")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.appearance_dim < 1 or self.resolution < 4:
            raise ConfigError("appearance_dim and resolution must be positive")
        if self.total_gen_steps < 0:
            raise ConfigError("total_gen_steps must be >= 0")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")

    def table(self) -> NetworkTable:
        table = self.network or NetworkTable.default(self.resolution)
        table.validate_for(self.resolution)
        return table

    def effective_weights(self) -> LossWeights:
        """Loss weights with ablation flags folded in."""
        w = self.weights
        if self.disable_image_cycle:
            w = LossWeights(0.0, w.normal, w.z, w.gradient_penalty)
        return w

    def to_dict(self) -> dict:
        d = {
            f.name: getattr(self, f.name)
            for f in dataclasses.fields(self)
            if f.name not in ("weights", "augment", "network")
        }
        d["weights"] = self.weights.to_dict()
        d["augment"] = self.augment.to_dict()
        d["network"] = self.network.to_dict() if self.network else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(_strict_kwargs(cls, d, "training"))
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        if "augment" in d:
            d["augment"] = AugmentParams.from_dict(d["augment"])
        if d.get("network") is not None:
            d["network"] = NetworkTable.from_dict(d["network"])
        return cls(**d)


@dataclass
class DatasetBuildConfig:
    """Parameters of `build_synthetic_dataset` plus the camera grid."""

    num_models: int = 10
    resolution: int = 64
    class_name: str = "primitives"
    kinds: tuple[str, ...] = ("box", "sphere", "cylinder", "composite")
    azimuth_range: tuple[float, float] = (-90.0, 90.0)
    elevation_range: tuple[float, float] = (0.0, 15.0)
    azimuth_step: float = 5.0
    elevation_step: float = 5.0
    fill_fraction: float = 0.75
    num_real_images: int | None = None
    num_test_models: int = 0
    images_per_test_model: int = 20

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kinds"] = list(self.kinds)
        d["azimuth_range"] = list(self.azimuth_range)
        d["elevation_range"] = list(self.elevation_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetBuildConfig":
        d = dict(_strict_kwargs(cls, d, "dataset"))
        for key in ("kinds", "azimuth_range", "elevation_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class PoseEvalConfig:
    """Pose-regressor training and cross-validation settings."""

    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    folds: int = 5
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PoseEvalConfig":
        return cls(**_strict_kwargs(cls, d, "pose_eval"))


@dataclass
class RunConfig:
    """Top-level config file: one document drives every CLI command."""

    seed: int = 0
    dataset: DatasetBuildConfig = field(default_factory=DatasetBuildConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    pose_eval: PoseEvalConfig = field(default_factory=PoseEvalConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": self.dataset.to_dict(),
            "training": self.training.to_dict(),
            "pose_eval": self.pose_eval.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(_strict_kwargs(cls, d, "run config"))
        if "dataset" in d:
            d["dataset"] = DatasetBuildConfig.from_dict(d["dataset"] or {})
        if "training" in d:
            d["training"] = TrainingConfig.from_dict(d["training"] or {})
        if "pose_eval" in d:
            d["pose_eval"] = PoseEvalConfig.from_dict(d["pose_eval"] or {})
        return cls(**d)


def load_run_config(path) -> RunConfig:
    """Parse a YAML run config, rejecting unknown keys."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)


def save_run_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
