from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

GATING_STRATEGIES = ("mean", "cls", "domain")
DIVERGENCES = ("js", "mmd", "none")
MTL_KINDS = ("mlp", "shared_bottom", "mmoe")
TEXT_ENCODERS = ("mean_pool", "toy_transformer", "frozen_table")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Dimensions and hyperparameters of the foundation model.

    Vocabulary sizes include the two reserved rows (0 = empty/absent,
    1 = out-of-vocabulary) of every table.
    """

    embed_dim: int = 16
    hidden_dim: int = 16
    num_domains: int = 3
    aspect_count: int = 3
    L_q_max: int = 8
    L_i_max: int = 12
    behavior_max: int = 10
    vocab_size: int = 512
    user_vocab: int = 1024
    query_vocab: int = 1024
    item_vocab: int = 1024
    sparse_vocab: int = 256
    expert_count: int = 4
    gating_strategy: str = "domain"
    divergence: str = "js"
    lambda_reg: float = 1.0
    mtl_kind: str = "mmoe"
    domain_adaptive: bool = True
    text_encoder: str = "mean_pool"
    text_layers: int = 1
    frozen_table_path: str | None = None
    trunk_width: int = 64
    head_width: int = 32
    mmd_bandwidth: float | None = None
    init_scale: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("embed_dim", "hidden_dim", "num_domains", "L_q_max", "L_i_max", "behavior_max",
                     "expert_count", "trunk_width", "head_width", "text_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.aspect_count != 3:
            raise ConfigError("aspect_count is fixed at 3")
        for name in ("vocab_size", "user_vocab", "query_vocab", "item_vocab", "sparse_vocab"):
            if int(getattr(self, name)) < 3:
                raise ConfigError(f"{name} must be >= 3 (two reserved rows)")
        if self.gating_strategy not in GATING_STRATEGIES:
            raise ConfigError(f"gating_strategy must be one of {GATING_STRATEGIES}")
        if self.divergence not in DIVERGENCES:
            raise ConfigError(f"divergence must be one of {DIVERGENCES}")
        if self.mtl_kind not in MTL_KINDS:
            raise ConfigError(f"mtl_kind must be one of {MTL_KINDS}")
        if self.text_encoder not in TEXT_ENCODERS:
            raise ConfigError(f"text_encoder must be one of {TEXT_ENCODERS}")
        if self.text_encoder == "frozen_table" and not self.frozen_table_path:
            raise ConfigError("frozen_table text encoder needs frozen_table_path")
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be >= 0")
        if self.mmd_bandwidth is not None and self.mmd_bandwidth <= 0:
            raise ConfigError("mmd_bandwidth must be > 0")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)
