"""
End-to-end steps behind the CLI: generate, train, evaluate.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .artifacts import (
    check_provenance,
    ensure_writable,
    load_manifest,
    load_split,
    provenance_line,
    read_jsonl,
    write_json,
    write_jsonl,
)
from .config import RunConfig
from .datagen import build_corpus, label_suite, normalize_constants
from .encode import TreeEncoding, Vocabulary, build_vocabulary
from .exceptions import DataError
from .expr import ExprStore, from_prefix
from .models import IntegrandRecord
from .nn import BinaryRelevanceModel, Encoding, ModelKind, load_checkpoint, save_checkpoint, train
from .schemas import CorpusManifest, ReportRecord
from .selection import anti_oracle, compare, make_baseline, model_strategy, oracle, write_bars, write_report

logger = logging.getLogger(__name__)

EVAL_KINDS = (ModelKind.TREELSTM, ModelKind.LSTM)


def generate_corpus(config: RunConfig, overwrite: bool = False) -> CorpusManifest:
    """Build the corpus and write train/test splits, vocabulary and manifest"""
    paths = config.paths
    ensure_writable([paths.train, paths.test, paths.manifest, paths.vocabulary], overwrite)
    build = build_corpus(config, config.resolved_workers())
    store = ExprStore()
    vocabulary = build_vocabulary(
        normalize_constants(from_prefix(row.integrand_prefix, store)) for row in build.train
    )
    manifest = build.manifest.model_copy(
        update={"vocabulary_size": len(vocabulary), "vocabulary_hash": vocabulary.hash()}
    )
    write_jsonl(paths.train, build.train)
    write_jsonl(paths.test, build.test)
    vocabulary.save(paths.vocabulary)
    write_json(paths.manifest, manifest)
    logger.info("Wrote %d train and %d test records to %s", manifest.train_count, manifest.test_count, paths.out_dir)
    return manifest


@dataclass
class Corpus:
    manifest: CorpusManifest
    vocabulary: Vocabulary
    train: List[IntegrandRecord]
    test: List[IntegrandRecord]
    store: ExprStore


def load_corpus(config: RunConfig) -> Corpus:
    """Load a generated corpus, refusing one built from a different configuration"""
    paths = config.paths
    manifest = load_manifest(paths.manifest)
    if manifest.corpus_hash != config.corpus_hash():
        raise DataError(f"{paths.manifest} was generated with a different corpus configuration")
    vocabulary = Vocabulary.load(paths.vocabulary)
    if vocabulary.hash() != manifest.vocabulary_hash:
        raise DataError(f"{paths.vocabulary} does not match the manifest's vocabulary hash")
    store = ExprStore()
    _, train_records = load_split(paths.train, store, manifest.corpus_hash)
    _, test_records = load_split(paths.test, store, manifest.corpus_hash)
    return Corpus(manifest, vocabulary, train_records, test_records, store)


def _token_ids(encoding: Encoding):
    return encoding.token_ids if isinstance(encoding, TreeEncoding) else encoding.ids


def count_unknown(vocabulary: Vocabulary, encodings: Sequence[Encoding]) -> int:
    return sum(vocabulary.count_unknown(_token_ids(e)) for e in encodings)


def write_loss_curves(path: Path, curves: Dict[str, List[float]], config_hash: str, corpus_hash: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [provenance_line(config_hash, corpus_hash), "classifier\tepoch\tmean_loss"]
    for label, curve in curves.items():
        lines.extend(f"{label}\t{epoch}\t{loss!r}" for epoch, loss in enumerate(curve, start=1))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def train_models(config: RunConfig, kind: ModelKind, overwrite: bool = False) -> Dict[str, List[float]]:
    """Train all binary classifiers of one kind and write checkpoint and loss curves"""
    kind = ModelKind(kind)
    paths = config.paths
    ensure_writable([paths.checkpoint(kind.value), paths.loss_curve(kind.value)], overwrite)
    corpus = load_corpus(config)
    model = BinaryRelevanceModel.create(kind, corpus.vocabulary, config.model, config.seed)
    encodings = [model.encode(r.integrand) for r in corpus.train]
    unknown = count_unknown(corpus.vocabulary, encodings)
    if unknown:
        raise DataError(f"vocabulary misses {unknown} tokens of the training split")
    labels = np.array([r.labels for r in corpus.train], dtype=np.float64)
    curves = train(model, encodings, labels, config.seed, config.resolved_workers())
    save_checkpoint(model, paths.checkpoint(kind.value), config.echo(), corpus.manifest.corpus_hash, config.model_hash())
    write_loss_curves(paths.loss_curve(kind.value), curves, config.config_hash(), corpus.manifest.corpus_hash)
    return curves


def _model_probabilities(model: BinaryRelevanceModel, records: Sequence[IntegrandRecord], slice_name: str):
    encodings = [model.encode(r.integrand) for r in records]
    unknown = count_unknown(model.vocabulary, encodings)
    if unknown:
        logger.info("%s: %d unknown tokens on the %s slice", model.kind.value, unknown, slice_name)
    if not encodings:
        return {}
    probabilities = model.predict_encodings(encodings)
    return {r.id: probabilities[i] for i, r in enumerate(records)}


def evaluate_models(
    config: RunConfig,
    kinds: Sequence[ModelKind] = EVAL_KINDS,
    suite: bool = False,
    overwrite: bool = False,
    include_anti_oracle: bool = False,
) -> List[ReportRecord]:
    """Compare trained models against the baseline and the oracle; writes report and bar data"""
    paths = config.paths
    ensure_writable([paths.report, paths.bars], overwrite)
    corpus = load_corpus(config)
    models: Dict[str, BinaryRelevanceModel] = {}
    model_hashes: Dict[str, str] = {}
    for kind in kinds:
        kind = ModelKind(kind)
        path = paths.checkpoint(kind.value)
        if not path.is_file():
            logger.warning("No %s checkpoint at %s; skipping it", kind.value, path)
            continue
        checkpoint = load_checkpoint(path, config.model, corpus.vocabulary, kind)
        if checkpoint.corpus_hash != corpus.manifest.corpus_hash:
            raise DataError(f"{path} was trained on a different corpus")
        models[kind.value] = checkpoint.model
        model_hashes[kind.value] = checkpoint.model_hash

    slices = [("test", corpus.test)]
    if suite:
        slices.append(("suite", label_suite(config, corpus.store)))
    records: List[ReportRecord] = []
    for slice_name, slice_records in slices:
        strategies = {"oracle": oracle, "baseline": make_baseline(config.baseline_order)}
        if include_anti_oracle:
            strategies["anti_oracle"] = anti_oracle
        for name, model in models.items():
            strategies[name] = model_strategy(name, _model_probabilities(model, slice_records, slice_name))
        for report in compare(strategies, slice_records, slice_name):
            records.append(
                report.to_record(
                    corpus.manifest.corpus_hash, config.config_hash(), model_hashes.get(report.strategy, "")
                )
            )
    write_report(paths.report, records)
    write_bars(paths.bars, records)
    return records


def load_report(config: RunConfig, check_bars: bool = True) -> List[ReportRecord]:
    """Read report.jsonl and check that it and its .tsv companions belong to this run.

    Args:
        config: the run configuration the report is rendered for.
        check_bars: also check bars.tsv; off when the caller rewrites it.

    Returns:
        The report rows in file order.

    Raises:
        DataError: a file is missing or was written for another config or corpus.
    """
    paths = config.paths
    records = read_jsonl(paths.report, ReportRecord)
    config_hash = config.config_hash()
    stale = sorted({r.strategy for r in records if r.config_hash != config_hash})
    if stale:
        raise DataError(f"{paths.report} was written with a different configuration ({', '.join(stale)})")
    corpus_hashes = {r.corpus_hash for r in records}
    if paths.manifest.is_file():
        corpus_hashes.add(load_manifest(paths.manifest).corpus_hash)
    if len(corpus_hashes) > 1:
        raise DataError(f"{paths.report} does not match the corpus in {paths.out_dir}")
    corpus_hash = corpus_hashes.pop() if corpus_hashes else ""
    tables = [paths.bars] if check_bars else []
    tables.extend(paths.loss_curve(kind.value) for kind in ModelKind)
    for table in tables:
        if table.is_file():
            check_provenance(table, config_hash, corpus_hash)
    return records
