import logging
from functools import lru_cache
from pathlib import Path
from typing import Iterator, List

from fastapi import APIRouter, Depends, HTTPException

from . import schemas
from .exceptions import DataError
from .expr import ExprStore, parse, print_infix, to_prefix
from .models import ALGORITHMS, IntegrationOutcome, SubAlgorithm, optimal_labels
from .nn import BinaryRelevanceModel, ModelKind, load_checkpoint, predict
from .portfolio import DEFAULT_BUDGET, integrate_all, integrate_with
from .selection import fallback_order
from .settings import get_settings

logger = logging.getLogger(__name__)

VAR = "x"

# Different routers per resource, all under the same prefix
integrate_router = APIRouter(prefix="/api/v1", tags=["Integrate"])
select_router = APIRouter(prefix="/api/v1", tags=["Select"])


def get_store() -> Iterator[ExprStore]:
    """One expression store per request"""
    yield ExprStore()


def parse_integrand(text: str, store: ExprStore):
    try:
        return parse(text, store)
    except DataError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


def outcome_response(alg: SubAlgorithm, outcome: IntegrationOutcome) -> schemas.OutcomeResponse:
    return schemas.OutcomeResponse(
        algorithm=alg.label,
        status=outcome.status.value,
        steps_used=outcome.steps_used,
        output=print_infix(outcome.output) if outcome.output is not None else None,
        output_prefix=to_prefix(outcome.output) if outcome.output is not None else None,
        size=outcome.size,
    )


@lru_cache(maxsize=4)
def _cached_model(path: Path, mtime_ns: int, kind: ModelKind) -> BinaryRelevanceModel:
    return load_checkpoint(path, kind=kind).model


def get_model(kind: ModelKind) -> BinaryRelevanceModel:
    path = get_settings().artifacts_dir / f"{kind.value}.ckpt.json"
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"No {kind.value} checkpoint available")
    try:
        return _cached_model(path, path.stat().st_mtime_ns, kind)
    except DataError as exc:
        logger.error("Cannot load %s: %s", path, exc)
        raise HTTPException(status_code=500, detail=f"{kind.value} checkpoint is unusable: {exc}")


@integrate_router.get("/algorithms", response_model=schemas.AlgorithmsResponse)
def list_algorithms():
    """Sub-algorithm labels in fixed label order"""
    return {"algorithms": list(SubAlgorithm.labels())}


@integrate_router.post("/integrate", response_model=schemas.OutcomeResponse)
def integrate(request: schemas.IntegrateRequest, store: ExprStore = Depends(get_store)):
    """Run a single sub-algorithm on an integrand"""
    integrand = parse_integrand(request.integrand, store)
    alg = SubAlgorithm.from_label(request.algorithm)
    outcome = integrate_with(alg, integrand, VAR, request.budget or DEFAULT_BUDGET)
    return outcome_response(alg, outcome)


@integrate_router.post("/label", response_model=schemas.LabelResponse)
def label(request: schemas.LabelRequest, store: ExprStore = Depends(get_store)):
    """Run the whole portfolio and report which sub-algorithms are optimal"""
    integrand = parse_integrand(request.integrand, store)
    outcomes = integrate_all(integrand, VAR)
    labels, best = optimal_labels(outcomes)
    return schemas.LabelResponse(
        integrand=print_infix(integrand),
        integrand_prefix=to_prefix(integrand),
        outcomes=[outcome_response(alg, outcomes[alg]) for alg in ALGORITHMS],
        labels=[int(flag) for flag in labels],
        optimal_size=best,
        dropped=best is None,
    )


@select_router.post("/select", response_model=schemas.SelectResponse)
def select(request: schemas.SelectRequest, store: ExprStore = Depends(get_store)):
    """Try sub-algorithms in the order a trained model ranks them until one succeeds"""
    model = get_model(ModelKind(request.model))
    integrand = parse_integrand(request.integrand, store)
    probabilities = predict(model, integrand)
    attempts: List[str] = []
    chosen = None
    for alg in fallback_order(probabilities):
        attempts.append(alg.label)
        outcome = integrate_with(alg, integrand, VAR)
        if outcome.succeeded:
            chosen = outcome_response(alg, outcome)
            break
    return schemas.SelectResponse(
        integrand=print_infix(integrand),
        model=request.model,
        probabilities={alg.label: float(probabilities[alg]) for alg in ALGORITHMS},
        attempts=attempts,
        chosen=chosen.algorithm if chosen is not None else None,
        outcome=chosen,
    )
