"""Architecture hyperparameters and the named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 4
    hidden: int = 128
    ffn_inner: int = 512
    max_text_len: int = 64
    channels: int = 3
    image_height: int = 64
    image_width: int = 64
    patch_size: int = 16
    text_vocab_size: int = 1000
    image_vocab_size: int = 512
    alpha: float = 32.0
    rel1d_buckets: int = 32
    rel1d_max_distance: int = 128
    rel2d_buckets: int = 64
    rel2d_max_distance: int = 1000
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02
    tie_mlm_weights: bool = False

    def __post_init__(self):
        positive = ("layers", "heads", "hidden", "ffn_inner", "max_text_len", "channels",
                    "image_height", "image_width", "patch_size", "text_vocab_size",
                    "image_vocab_size", "rel1d_buckets", "rel1d_max_distance",
                    "rel2d_buckets", "rel2d_max_distance")
        for name in positive:
            if getattr(self, name) <= 0 and not (name == "layers" and self.layers == 0):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ConfigError(
                f"patch size {self.patch_size} does not divide image "
                f"{self.image_height}x{self.image_width}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.rel1d_buckets % 2 or self.rel2d_buckets % 2:
            raise ConfigError("relative-position bucket counts must be even")
        if self.max_text_len < 2:
            raise ConfigError("max_text_len must leave room for [CLS] and [SEP]")

    @property
    def num_patches(self) -> int:
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def seq_len(self) -> int:
        return self.max_text_len + self.num_patches

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> ModelConfig:
        return replace(self, **changes)


def desk() -> ModelConfig:
    return ModelConfig()


def base() -> ModelConfig:
    return ModelConfig(layers=12, heads=12, hidden=768, ffn_inner=3072, max_text_len=512,
                       image_height=224, image_width=224, patch_size=16,
                       text_vocab_size=50265, image_vocab_size=8000)


def large() -> ModelConfig:
    return base().with_(layers=24, heads=16, hidden=1024, ffn_inner=4096)


def gradcheck() -> ModelConfig:
    return ModelConfig(layers=2, heads=2, hidden=8, ffn_inner=16, max_text_len=6,
                       channels=3, image_height=8, image_width=8, patch_size=4,
                       text_vocab_size=11, image_vocab_size=8, init_std=0.2)


PRESETS = {"desk": desk, "base": base, "large": large, "gradcheck": gradcheck}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
