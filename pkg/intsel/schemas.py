from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class OutcomeRecord(BaseModel):
    """Schema for one sub-algorithm outcome inside a corpus line"""
    status: Literal["Success", "Failure", "BudgetExceeded"]
    steps_used: int
    size: Optional[int] = None
    output_prefix: Optional[str] = None


class CorpusRecord(BaseModel):
    """Schema for one line of train.jsonl / test.jsonl"""
    id: str
    generator: str
    integrand_prefix: str
    integrand_infix: str
    antiderivative_prefix: Optional[str] = None
    outcomes: Dict[str, OutcomeRecord]
    labels: List[int]
    optimal_size: int
    corpus_hash: str


class GeneratorStats(BaseModel):
    """Per-generator bookkeeping of a corpus build"""
    tasks: int = 0
    accepted: int = 0
    skipped: int = 0
    dropped: int = 0
    collisions: int = 0
    # rejected BWD draws that were resampled within the same task
    resamples: int = 0


class CorpusManifest(BaseModel):
    """Schema for manifest.json written next to the corpus splits"""
    format_version: int = 1
    seed: int
    corpus_hash: str
    config_hash: str
    config: dict
    generators: List[str]
    train_per_generator: int
    test_per_generator: int
    train_count: int
    test_count: int
    generator_stats: Dict[str, GeneratorStats]
    dedup_collisions: int
    drop_count: int
    label_histogram: Dict[str, int]
    optimal_count_histogram: Dict[str, int]
    success_rate: Dict[str, float]
    multi_label_rate: float
    disagreement_rate: float
    operator_histogram: Dict[str, int]
    vocabulary_size: int = 0
    vocabulary_hash: str = ""


class GeneratorCounts(BaseModel):
    """Margin counts restricted to one generator"""
    total: int = 0
    exact_optimal: int = 0
    within_5pct: int = 0
    within_10pct: int = 0
    all_failed: int = 0


class ReportRecord(BaseModel):
    """Schema for one line of report.jsonl"""
    strategy: str
    slice: str
    total: int
    exact_optimal: int
    within_5pct: int
    within_10pct: int
    all_failed: int
    unique_wins: int
    mean_attempts: float
    per_generator: Dict[str, GeneratorCounts]
    corpus_hash: str = ""
    config_hash: str = ""
    model_hash: str = ""

    class Config:
        protected_namespaces = ()


# HTTP surface


class HealthResponse(BaseModel):
    """Schema for health check response"""
    status: str


class AlgorithmsResponse(BaseModel):
    """Schema for the label set listing"""
    algorithms: List[str]


class IntegrateRequest(BaseModel):
    """Schema for single sub-algorithm integration requests"""
    integrand: str = Field(min_length=1)
    algorithm: Literal["RuleTable", "DerivDivides", "Parts", "PartialFractions", "Hermite"]
    budget: Optional[int] = Field(default=None, gt=0)


class OutcomeResponse(BaseModel):
    """Schema for one sub-algorithm outcome"""
    algorithm: str
    status: str
    steps_used: int
    output: Optional[str] = None
    output_prefix: Optional[str] = None
    size: Optional[int] = None


class LabelRequest(BaseModel):
    """Schema for labeling requests"""
    integrand: str = Field(min_length=1)


class LabelResponse(BaseModel):
    """Schema for a labeled integrand"""
    integrand: str
    integrand_prefix: str
    outcomes: List[OutcomeResponse]
    labels: List[int]
    optimal_size: Optional[int] = None
    dropped: bool = False


class SelectRequest(BaseModel):
    """Schema for model-guided selection requests"""
    integrand: str = Field(min_length=1)
    model: Literal["lstm", "treelstm"] = "treelstm"


class SelectResponse(BaseModel):
    """Schema for model-guided selection responses"""
    integrand: str
    model: str
    probabilities: Dict[str, float]
    attempts: List[str]
    chosen: Optional[str] = None
    outcome: Optional[OutcomeResponse] = None


class CheckpointFile(BaseModel):
    """Schema for a trained binary-relevance model"""
    format_version: int
    kind: Literal["lstm", "treelstm"]
    config: dict
    hyperparameters: dict
    corpus_hash: str
    model_hash: str
    vocabulary_hash: str
    vocabulary: List[str]
    labels: List[str]
    classifiers: List[Dict[str, Any]]

    class Config:
        protected_namespaces = ()
