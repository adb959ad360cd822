"""
Reading and writing pipeline artifacts.

Line-delimited files hold one sorted-key JSON object per line so that equal
content always gives equal bytes.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import orjson
from pydantic import BaseModel, ValidationError

from .exceptions import ConfigError, DataError, ParseError
from .expr import ExprStore, from_prefix, print_infix, to_prefix
from .models import (
    ALGORITHMS,
    Generator,
    IntegrandRecord,
    IntegrationOutcome,
    OutcomeStatus,
    SubAlgorithm,
)
from .schemas import CorpusManifest, CorpusRecord, OutcomeRecord

logger = logging.getLogger(__name__)

SchemaT = TypeVar("SchemaT", bound=BaseModel)

JSON_OPTIONS = orjson.OPT_SORT_KEYS


def dumps(model: BaseModel) -> bytes:
    return orjson.dumps(model.model_dump(mode="json"), option=JSON_OPTIONS)


def write_jsonl(path: Path, rows: Iterable[BaseModel]) -> int:
    """Write one JSON object per line; returns the number of lines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("wb") as handle:
        for row in rows:
            handle.write(dumps(row))
            handle.write(b"\n")
            count += 1
    logger.debug("Wrote %d lines to %s", count, path)
    return count


def read_jsonl(path: Path, schema: Type[SchemaT]) -> List[SchemaT]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    rows = []
    with path.open("rb") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                rows.append(schema.model_validate(orjson.loads(line)))
            except (orjson.JSONDecodeError, ValidationError) as exc:
                raise DataError(f"{path}:{number}: invalid {schema.__name__}: {exc}") from exc
    return rows


def write_json(path: Path, model: BaseModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(model.model_dump(mode="json"), option=JSON_OPTIONS | orjson.OPT_INDENT_2))


def read_json(path: Path, schema: Type[SchemaT]) -> SchemaT:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        return schema.model_validate(orjson.loads(path.read_bytes()))
    except (orjson.JSONDecodeError, ValidationError) as exc:
        raise DataError(f"{path}: invalid {schema.__name__}: {exc}") from exc


def ensure_writable(paths: Sequence[Path], overwrite: bool) -> None:
    """Refuse to clobber existing outputs unless overwrite is set"""
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not overwrite:
        raise ConfigError(f"output already exists (pass --overwrite): {', '.join(existing)}")


# ---------------------------------------------------------------------------
# Provenance of tabular outputs


def provenance_line(config_hash: str, corpus_hash: str) -> str:
    """First line of every .tsv artifact"""
    return f"# config_hash={config_hash} corpus_hash={corpus_hash}"


def read_provenance(path: Path) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
    if not first.startswith("# "):
        raise DataError(f"{path} has no provenance header")
    fields = dict(item.partition("=")[::2] for item in first[2:].split())
    if "config_hash" not in fields or "corpus_hash" not in fields:
        raise DataError(f"{path}: malformed provenance header {first!r}")
    return fields


def check_provenance(path: Path, config_hash: str, corpus_hash: str) -> None:
    """Raise DataError unless the file at `path` was written for these hashes"""
    fields = read_provenance(path)
    if fields["config_hash"] != config_hash:
        raise DataError(f"{path} was written with a different configuration")
    if fields["corpus_hash"] != corpus_hash:
        raise DataError(f"{path} was written for a different corpus")


# ---------------------------------------------------------------------------
# Corpus records


def outcome_to_schema(outcome: IntegrationOutcome) -> OutcomeRecord:
    return OutcomeRecord(
        status=outcome.status.value,
        steps_used=outcome.steps_used,
        size=outcome.size,
        output_prefix=to_prefix(outcome.output) if outcome.output is not None else None,
    )


def record_to_schema(record: IntegrandRecord, corpus_hash: str) -> CorpusRecord:
    return CorpusRecord(
        id=record.id,
        generator=record.generator.value,
        integrand_prefix=to_prefix(record.integrand),
        integrand_infix=print_infix(record.integrand),
        antiderivative_prefix=(
            to_prefix(record.antiderivative) if record.antiderivative is not None else None
        ),
        outcomes={alg.label: outcome_to_schema(record.outcomes[alg]) for alg in ALGORITHMS},
        labels=[int(flag) for flag in record.labels],
        optimal_size=record.optimal_size,
        corpus_hash=corpus_hash,
    )


def record_from_schema(row: CorpusRecord, store: ExprStore) -> IntegrandRecord:
    """Rebuild a labeled record inside `store`"""
    try:
        integrand = from_prefix(row.integrand_prefix, store)
        outcomes: Dict[SubAlgorithm, IntegrationOutcome] = {}
        for label, stored in row.outcomes.items():
            output = from_prefix(stored.output_prefix, store) if stored.output_prefix else None
            outcomes[SubAlgorithm.from_label(label)] = IntegrationOutcome(
                OutcomeStatus(stored.status), stored.steps_used, output, stored.size
            )
        antiderivative = (
            from_prefix(row.antiderivative_prefix, store) if row.antiderivative_prefix else None
        )
    except (ParseError, ValueError) as exc:
        raise DataError(f"record {row.id}: {exc}") from exc
    if set(outcomes) != set(ALGORITHMS) or len(row.labels) != len(ALGORITHMS):
        raise DataError(f"record {row.id}: expected an outcome and a label per sub-algorithm")
    record = IntegrandRecord(
        id=row.id,
        integrand=integrand,
        generator=Generator(row.generator),
        outcomes=outcomes,
        labels=tuple(bool(v) for v in row.labels),
        optimal_size=row.optimal_size,
        antiderivative=antiderivative,
    )
    if not record.labels_consistent():
        raise DataError(f"record {row.id}: stored labels disagree with stored outcomes")
    return record


def load_split(
    path: Path, store: ExprStore, corpus_hash: Optional[str] = None
) -> Tuple[List[CorpusRecord], List[IntegrandRecord]]:
    """Read one split; every line must carry `corpus_hash` when given"""
    rows = read_jsonl(path, CorpusRecord)
    if corpus_hash is not None:
        foreign = [r.id for r in rows if r.corpus_hash != corpus_hash]
        if foreign:
            raise DataError(
                f"{path}: {len(foreign)} records come from a different corpus (first: {foreign[0]})"
            )
    return rows, [record_from_schema(r, store) for r in rows]


def load_manifest(path: Path) -> CorpusManifest:
    return read_json(path, CorpusManifest)
