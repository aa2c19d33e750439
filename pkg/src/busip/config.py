"""Run configuration, serialized as a single JSON document."""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError
from .losses import LossWeights


@dataclass
class RunConfig:
    # model
    image_size: int = 64
    prefilter_sigma: float = 0.7  # pixels; 0 disables the input prefilter
    input_norm: str | None = "rms"  # per-chip unit-RMS scaling, or None
    J: int = 3
    L: int = 4
    order: int = 2
    grid_size: int | None = None
    patch_stride: int = 8
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    num_parts: int = 5
    tau: float = 1.0
    pki_depth: int = 1
    # objective
    loss: LossWeights = field(default_factory=LossWeights)
    # optimizer
    lr: float = 3e-4
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 32
    # reproducibility
    seed: int = 0
    parallel: bool = False
    # data
    data_root: str | None = None
    split_file: str | None = None
    train_subset: str | None = "train"
    test_subset: str | None = "test"
    # ablation switches
    use_lsp: bool = True
    use_spr: bool = True
    use_pki: bool = True
    losses: dict = field(default_factory=lambda: {"ipc": True, "mpb": True, "gdc": True, "pso": True})
    # reporting
    eval_every_epoch: bool = False
    out_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        unknown = set(self.losses) - {"ipc", "mpb", "gdc", "pso"}
        if unknown:
            raise ConfigurationError(f"unknown loss switches: {sorted(unknown)}")
        self.losses = {k: bool(self.losses.get(k, True)) for k in ("ipc", "mpb", "gdc", "pso")}
        if self.image_size % self.patch_stride:
            raise ConfigurationError(
                f"image_size {self.image_size} not divisible by patch_stride {self.patch_stride}")
        if self.input_norm not in (None, "rms"):
            raise ConfigurationError(f"input_norm must be 'rms' or null, got {self.input_norm!r}")
        if self.prefilter_sigma < 0:
            raise ConfigurationError("prefilter_sigma must be nonnegative")
        if self.use_pki and not self.use_spr:
            raise ConfigurationError("use_pki requires use_spr (aggregation consumes part tokens)")
        if self.embed_dim % self.heads or self.embed_dim % 4:
            raise ConfigurationError("embed_dim must be divisible by heads and by 4")

    @property
    def num_tokens(self):
        return (self.image_size // self.patch_stride) ** 2

    def loss_switches(self):
        """Effective per-component switches; part losses need the part module."""
        on = dict(self.losses) if self.use_spr else dict.fromkeys(self.losses, False)
        on["cls"] = True
        return on

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, source):
        """Parse a JSON string or read a JSON file path."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)
