"""
Run configuration: one YAML file per experiment, overridden by CLI flags.

Hashes over the configuration are embedded in every artifact so that inputs of
mixed provenance can be refused.
"""
import hashlib
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional

import orjson
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError
from .models import Generator, SubAlgorithm

logger = logging.getLogger(__name__)

UNARY_OPERATORS = ("neg", "sin", "cos", "tan", "exp", "ln", "sqrt", "arctan", "arcsin", "pow")
BINARY_OPERATORS = ("add", "sub", "mul", "div")
OPERATORS = BINARY_OPERATORS + UNARY_OPERATORS


def _default_operator_weights() -> Dict[str, float]:
    return {
        "add": 4.0, "sub": 2.0, "mul": 4.0, "div": 1.0, "neg": 0.5, "pow": 2.0,
        "sin": 1.0, "cos": 1.0, "tan": 0.5, "exp": 1.0, "ln": 1.0,
        "sqrt": 0.5, "arctan": 0.25, "arcsin": 0.25,
    }


class SamplerParams(BaseModel):
    """Random expression sampler parameters"""

    max_ops: int = Field(default=5, ge=1)
    operator_weights: Dict[str, float] = Field(default_factory=_default_operator_weights)
    leaf_weights: Dict[str, float] = Field(default_factory=lambda: {"x": 3.0, "int": 1.0})
    int_low: int = -5
    int_high: int = 5
    pow_exponents: List[int] = Field(default_factory=lambda: [-2, -1, 2, 3])

    @field_validator("operator_weights")
    @classmethod
    def check_operators(cls, weights: Dict[str, float]) -> Dict[str, float]:
        unknown = sorted(set(weights) - set(OPERATORS))
        if unknown:
            raise ValueError(f"unknown operators {unknown}")
        if any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
            raise ValueError("operator weights must be non-negative with a positive total")
        return weights

    @field_validator("leaf_weights")
    @classmethod
    def check_leaves(cls, weights: Dict[str, float]) -> Dict[str, float]:
        if set(weights) - {"x", "int"}:
            raise ValueError("leaf weights accept only 'x' and 'int'")
        if any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
            raise ValueError("leaf weights must be non-negative with a positive total")
        return weights

    @model_validator(mode="after")
    def check_int_range(self) -> "SamplerParams":
        if self.int_low > self.int_high:
            raise ValueError("int_low exceeds int_high")
        if self.int_low == 0 == self.int_high:
            raise ValueError("integer range contains only zero")
        if 0 in self.pow_exponents or 1 in self.pow_exponents or not self.pow_exponents:
            raise ValueError("pow_exponents must be non-empty and exclude 0 and 1")
        return self


class CorpusConfig(BaseModel):
    train_per_generator: int = Field(default=1500, gt=0)
    test_per_generator: int = Field(default=300, gt=0)
    generators: List[Generator] = Field(default_factory=lambda: [Generator.FWD, Generator.BWD, Generator.IBP, Generator.SUB])
    node_cap: int = Field(default=200, gt=0)
    sub_inner_max_ops: int = Field(default=4, ge=1)
    verify_trials: int = Field(default=20, ge=1)
    # A generator gives up after quota * max_task_factor draws
    max_task_factor: int = Field(default=20, ge=1)
    task_batch: int = Field(default=64, gt=0)
    min_disagreement: float = Field(default=0.30, ge=0.0, le=1.0)

    @field_validator("generators")
    @classmethod
    def check_generators(cls, generators: List[Generator]) -> List[Generator]:
        if not generators:
            raise ValueError("at least one generator is required")
        if Generator.SUITE in generators:
            raise ValueError("SUITE is not a generator")
        if len(set(generators)) != len(generators):
            raise ValueError("duplicate generator")
        if Generator.SUB in generators and not {Generator.FWD, Generator.BWD} & set(generators):
            raise ValueError("SUB needs FWD or BWD output as its pool")
        return generators


class ModelConfig(BaseModel):
    """Hyperparameters shared by the LSTM and TreeLSTM variants"""

    embedding_dim: int = Field(default=32, gt=0)
    hidden1: int = Field(default=64, gt=0)
    hidden2: int = Field(default=32, gt=0)
    dense: int = Field(default=16, gt=0)
    dropout: float = Field(default=0.4, ge=0.0, lt=1.0)
    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=32, gt=0)
    epochs: int = Field(default=30, gt=0)
    pos_weight_max: float = Field(default=10.0, ge=1.0)


class PathsConfig(BaseModel):
    out_dir: Path = Path("artifacts")

    @property
    def train(self) -> Path:
        return self.out_dir / "train.jsonl"

    @property
    def test(self) -> Path:
        return self.out_dir / "test.jsonl"

    @property
    def manifest(self) -> Path:
        return self.out_dir / "manifest.json"

    @property
    def vocabulary(self) -> Path:
        return self.out_dir / "vocab.txt"

    def checkpoint(self, kind: str) -> Path:
        return self.out_dir / f"{kind}.ckpt.json"

    def loss_curve(self, kind: str) -> Path:
        return self.out_dir / f"loss_{kind}.tsv"

    @property
    def report(self) -> Path:
        return self.out_dir / "report.jsonl"

    @property
    def bars(self) -> Path:
        return self.out_dir / "bars.tsv"


def _sha256(payload) -> str:
    return hashlib.sha256(orjson.dumps(payload, option=orjson.OPT_SORT_KEYS)).hexdigest()


class RunConfig(BaseModel):
    """Complete experiment configuration"""

    seed: int = Field(default=0, ge=0, lt=2**64)
    workers: Optional[int] = Field(default=None, ge=1)
    step_budget: int = Field(default=10_000, gt=0)
    baseline_order: List[str] = Field(
        default_factory=lambda: ["RuleTable", "DerivDivides", "PartialFractions", "Hermite", "Parts"]
    )
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    sampler: SamplerParams = Field(default_factory=SamplerParams)
    model: ModelConfig = Field(default_factory=ModelConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @field_validator("baseline_order")
    @classmethod
    def check_baseline_order(cls, order: List[str]) -> List[str]:
        for label in order:
            SubAlgorithm.from_label(label)
        if sorted(order) != sorted(SubAlgorithm.labels()):
            raise ValueError("baseline_order must list every sub-algorithm exactly once")
        return order

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            return cls.model_validate(data or {})
        except ValidationError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def load(cls, path: Optional[Path]) -> "RunConfig":
        """Read a YAML config file; None yields the defaults"""
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
        logger.debug("Loaded config from %s", path)
        return cls.from_dict(data)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        out_dir: Optional[Path] = None,
    ) -> "RunConfig":
        """Apply CLI flag overrides; flags win over the file"""
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
        if workers is not None:
            data["workers"] = workers
        if out_dir is not None:
            data["paths"]["out_dir"] = out_dir
        return self.from_dict(data)

    def resolved_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def echo(self) -> dict:
        """JSON-ready config without the fields that never affect outputs"""
        return self.model_dump(mode="json", exclude={"workers", "paths"})

    def corpus_hash(self) -> str:
        return _sha256(
            self.model_dump(mode="json", include={"seed", "step_budget", "corpus", "sampler"})
        )

    def model_hash(self) -> str:
        return _sha256(self.model.model_dump(mode="json"))

    def config_hash(self) -> str:
        return _sha256(self.echo())
