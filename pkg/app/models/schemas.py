import math
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional
from . import config
from ..core.errors import ConfigError

ModelKind = Literal["distmult", "tucker"]
Method = Literal["standard", "oversample", "reweight", "focal", "kg_mixup"]
CandidateMode = Literal["strict_fallback", "strict", "lenient"]


class FlatConfigModel(BaseModel):
    """
    Base for records stored as flat `key = value` text (config files, the
    checkpoint config echo, run manifests).
    """
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    @model_validator(mode="before")
    @classmethod
    def _none_strings(cls, data: Any) -> Any:
        if isinstance(data, dict):
            return {k: (None if isinstance(v, str) and v.strip().lower() in ("", "none") else v)
                    for k, v in data.items()}
        return data

    def to_flat_text(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if isinstance(value, float):
                value = repr(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_flat_text(cls, text: str, source: str = "<config>", overrides: Optional[Dict[str, Any]] = None):
        """Parses `key = value` lines; '#' starts a comment line. Overrides win over file values."""
        values: Dict[str, Any] = dict(cls.parse_flat_text(text, source))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.validated(values, source)

    @classmethod
    def parse_flat_text(cls, text: str, source: str = "<config>") -> Dict[str, str]:
        values: Dict[str, str] = {}
        for line_number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{line_number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in cls.model_fields:
                raise ConfigError(f"{source}:{line_number}: unknown key '{key}'")
            values[key] = value
        return values

    @classmethod
    def validated(cls, values: Dict[str, Any], source: str = "<config>"):
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigError(f"{source}: {e}") from e


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    label_smoothing: float = Field(default=0.0, ge=0.0, lt=1.0)
    focal_gamma: float = Field(default=0.0, ge=0.0, description="0 disables the focal factor")


class TrainConfig(FlatConfigModel):
    model_kind: ModelKind = "distmult"
    entity_dim: int = Field(default=200, ge=1)
    relation_dim: int = Field(default=200, ge=1)
    epochs: int = Field(default=50, ge=1)
    pretrain_epochs: Optional[int] = Field(default=None, ge=0,
                                           description="kg_mixup only; None means 25% of epochs")
    batch_size: int = Field(default=128, ge=1)
    negatives: int = Field(default=100, ge=1, description="N negatives per positive")
    lr: float = Field(default=1e-3, gt=0.0)
    lr_decay: float = Field(default=1.0, gt=0.0, le=1.0)
    label_smoothing: float = Field(default=0.0, ge=0.0, lt=1.0)
    dropout_input: float = Field(default=0.0, ge=0.0, lt=1.0)
    dropout_hidden1: float = Field(default=0.0, ge=0.0, lt=1.0)
    dropout_hidden2: float = Field(default=0.0, ge=0.0, lt=1.0)
    method: Method = "standard"
    degree_threshold: float = Field(default=5.0, ge=0.0, description="eta")
    synth_per_triple: int = Field(default=5, ge=0, description="k")
    synth_loss_weight: float = Field(default=1.0, ge=0.0, description="beta")
    mix_alpha: float = Field(default=1.0, gt=0.0, description="alpha of Beta(alpha, alpha)")
    candidate_mode: CandidateMode = "strict_fallback"
    focal_gamma: float = Field(default=2.0, ge=0.0)
    reweight_cap: float = Field(default=10.0, ge=1.0)
    init_std: float = Field(default=0.1, gt=0.0)
    swa_enabled: bool = False
    swa_start_fraction: float = Field(default=0.75, gt=0.0, le=1.0)
    swa_lr: float = Field(default=5e-4, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self) -> "TrainConfig":
        if self.model_kind == "distmult" and self.entity_dim != self.relation_dim:
            raise ValueError("distmult requires entity_dim == relation_dim")
        if self.method == "kg_mixup" and self.synth_per_triple < 1:
            raise ValueError("kg_mixup requires synth_per_triple >= 1")
        if self.pretrain_epochs is not None and self.pretrain_epochs > self.epochs:
            raise ValueError("pretrain_epochs cannot exceed epochs")
        return self

    @property
    def effective_pretrain_epochs(self) -> int:
        """Standard-training epochs run before mixing starts (kg_mixup only)."""
        if self.method != "kg_mixup":
            return 0
        if self.pretrain_epochs is None:
            return int(math.ceil(0.25 * self.epochs))
        return self.pretrain_epochs

    @property
    def swa_start_epoch(self) -> int:
        """0-based index of the first epoch run at swa_lr and averaged."""
        return max(int(math.ceil(self.swa_start_fraction * self.epochs)) - 1, 0)

    def loss_config(self) -> LossConfig:
        gamma = self.focal_gamma if self.method == "focal" else 0.0
        return LossConfig(label_smoothing=self.label_smoothing, focal_gamma=gamma)


class BenchSpec(FlatConfigModel):
    n_entities: int = Field(default=300, ge=2)
    n_relations: int = Field(default=12, ge=1)
    n_triples: int = Field(default=3000, ge=1)
    skew: float = Field(default=1.2, gt=0.0, description="power-law exponent of tail-relation popularity")
    seed: int = 0
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    valid_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    test_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    compose_fraction: float = Field(default=0.25, ge=0.0, lt=1.0,
                                    description="share of relations generated as compositions")
    noise: float = Field(default=0.1, ge=0.0, lt=1.0, description="share of noise edges in composed relations")

    @model_validator(mode="after")
    def _check_consistency(self) -> "BenchSpec":
        total = self.train_fraction + self.valid_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1 (got {total})")
        if self.n_triples < self.n_entities:
            raise ValueError("n_triples must be >= n_entities")
        return self

    def split_counts(self) -> Dict[str, int]:
        n_valid = int(round(self.valid_fraction * self.n_triples))
        n_test = int(round(self.test_fraction * self.n_triples))
        return {"train": self.n_triples - n_valid - n_test, "valid": n_valid, "test": n_test}


class BinSpec(BaseModel):
    edges: List[float] = Field(default_factory=lambda: list(config.DEGREE_BIN_EDGES))
    labels: Optional[List[str]] = None

    @field_validator("edges")
    @classmethod
    def _sorted(cls, edges: List[float]) -> List[float]:
        if len(edges) < 2:
            raise ValueError("at least two bin edges are required")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"bin edges must be strictly increasing: {edges}")
        return edges

    @model_validator(mode="after")
    def _labels(self) -> "BinSpec":
        if self.labels is not None and len(self.labels) != len(self.edges) - 1:
            raise ValueError("need exactly one label per bin")
        return self

    def label(self, i: int) -> str:
        if self.labels is not None:
            return self.labels[i]
        lo, hi = self.edges[i], self.edges[i + 1]
        return f"[{_fmt_edge(lo)}, {_fmt_edge(hi)})"


def _fmt_edge(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return str(int(x)) if float(x).is_integer() else str(x)


def degree_bins() -> BinSpec:
    return BinSpec(edges=list(config.DEGREE_BIN_EDGES), labels=list(config.DEGREE_BIN_LABELS))
