"""Dataset loading, split management, leakage exclusion and ranking metrics.

The benchmark reproduces the measurement protocol: per-query exclusion of
knowledge-base items derived from the query's own source report, recall at
narrowing cutoffs per stage, and rank-1 classification framing for F1.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import TECHNIQUE_ID_RE, TechniqueCatalog, parent_technique_id
from .errors import DatasetFormatError
from .pipeline import (
    AnnotateRequest,
    AnnotationResult,
    Artifacts,
    BatchItemError,
    PipelineConfig,
    annotate_batch,
    result_to_dict,
)
from .ranking import RankedList

logger = logging.getLogger(__name__)

VALID_SOURCES = ("attack_reports", "cisa", "tram", "welivesecurity", "other")

DEFAULT_KS = (1, 3, 5, 10, 50, 100)


@dataclass(frozen=True)
class EvalRecord:
    record_id: str
    text: str
    labels: tuple[str, ...]
    source: str
    source_report_ref: str | None = None


@dataclass
class MetricBlock:
    recall_at: dict[int, float]
    precision_at_1: float
    mrr: float
    f1_macro: float
    f1_weighted: float
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "precision_at_1": self.precision_at_1,
            "mrr": self.mrr,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "n_queries": self.n_queries,
        }


@dataclass
class EvalReport:
    n_queries: int
    failed_queries: int
    metrics: MetricBlock  # final-stage ranking
    per_stage: dict[str, MetricBlock] = field(default_factory=dict)
    per_source: dict[str, MetricBlock] = field(default_factory=dict)
    per_technique: list[dict] = field(default_factory=list)
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "failed_queries": self.failed_queries,
            "metrics": self.metrics.to_dict(),
            "per_stage": {k: v.to_dict() for k, v in sorted(self.per_stage.items())},
            "per_source": {k: v.to_dict() for k, v in sorted(self.per_source.items())},
            "per_technique": self.per_technique,
            "config_digest": self.config_digest,
        }

    def to_text(self) -> str:
        """Render the per-stage table (recall at cutoffs, P@1, MRR)."""
        ks = sorted(self.metrics.recall_at)
        header = ["Stage"] + [f"Recall@{k}" for k in ks] + ["Precision@1", "MRR"]
        rows = []
        for stage in sorted(self.per_stage):
            block = self.per_stage[stage]
            rows.append(
                [stage]
                + [f"{block.recall_at.get(k, float('nan')):.4f}" for k in ks]
                + [f"{block.precision_at_1:.4f}", f"{block.mrr:.4f}"]
            )
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        lines.append("")
        lines.append(
            f"F1-macro: {self.metrics.f1_macro:.4f}  F1-weighted: {self.metrics.f1_weighted:.4f}"
            f"  (rank-1 prediction over {self.n_queries} queries, {self.failed_queries} failed)"
        )
        return "\n".join(lines)


def load_dataset(path: str | Path, expand_multilabel: bool = False) -> list[EvalRecord]:
    """Read the JSONL dataset; validates every row and deduplicates exact
    (text, labels) repeats. `expand_multilabel` emits one single-label
    record per label, the form the benchmark counts by default.
    """
    path = Path(path)
    records: list[EvalRecord] = []
    seen: set[tuple[str, tuple[str, ...]]] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            record = _parse_record(row, f"{path}:{lineno}")
            key = (record.text, record.labels)
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            records.append(record)
    if duplicates:
        logger.info("deduplicated %d identical rows from %s", duplicates, path)
    if expand_multilabel:
        expanded = []
        for rec in records:
            for label in rec.labels:
                expanded.append(
                    EvalRecord(
                        record_id=f"{rec.record_id}#{label}" if len(rec.labels) > 1 else rec.record_id,
                        text=rec.text,
                        labels=(label,),
                        source=rec.source,
                        source_report_ref=rec.source_report_ref,
                    )
                )
        return expanded
    return records


def _parse_record(row: dict, where: str) -> EvalRecord:
    if not isinstance(row, dict):
        raise DatasetFormatError(f"{where}: row must be an object")
    record_id = row.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise DatasetFormatError(f"{where}: missing or empty id")
    text = row.get("text")
    if not isinstance(text, str) or not text.strip():
        raise DatasetFormatError(f"{where}: text must be a non-empty string")
    labels = row.get("labels")
    if not isinstance(labels, list) or not labels:
        raise DatasetFormatError(f"{where}: labels must be a non-empty list")
    for label in labels:
        if not isinstance(label, str) or not TECHNIQUE_ID_RE.match(label):
            raise DatasetFormatError(f"{where}: invalid technique id {label!r}")
    source = row.get("source", "other")
    if source not in VALID_SOURCES:
        raise DatasetFormatError(f"{where}: unknown source {source!r}")
    report_ref = row.get("report_ref")
    if report_ref is not None and not isinstance(report_ref, str):
        raise DatasetFormatError(f"{where}: report_ref must be a string or null")
    return EvalRecord(
        record_id=record_id,
        text=text,
        labels=tuple(labels),
        source=source,
        source_report_ref=report_ref,
    )


def split(
    records: list[EvalRecord], train_fraction: float, seed: int
) -> tuple[list[EvalRecord], list[EvalRecord]]:
    """Deterministic stratified split by first label.

    Classes with a single record land wholly in train (stratification
    fallback); remaining train quota is spread over the other classes by
    largest remainder so the global train size is exact.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(records)
    if n == 0:
        return [], []
    target = int(n * train_fraction + 0.5)

    by_class: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.labels[0], []).append(i)

    rng = random.Random(seed)
    train_idx: set[int] = set()
    singletons = [idxs[0] for label, idxs in sorted(by_class.items()) if len(idxs) == 1]
    train_idx.update(singletons)
    multi = {label: idxs for label, idxs in by_class.items() if len(idxs) > 1}

    remaining = max(0, target - len(singletons))
    remaining = min(remaining, sum(len(v) for v in multi.values()))
    quotas: dict[str, int] = {}
    fractions: list[tuple[float, str]] = []
    total_multi = sum(len(v) for v in multi.values())
    assigned = 0
    for label in sorted(multi):
        exact = remaining * len(multi[label]) / total_multi if total_multi else 0.0
        quotas[label] = int(exact)
        assigned += quotas[label]
        fractions.append((-(exact - int(exact)), label))
    fractions.sort()
    for _, label in fractions:
        if assigned >= remaining:
            break
        if quotas[label] < len(multi[label]):
            quotas[label] += 1
            assigned += 1

    for label in sorted(multi):
        idxs = list(multi[label])
        rng.shuffle(idxs)
        train_idx.update(idxs[: quotas[label]])

    train = [records[i] for i in range(n) if i in train_idx]
    test = [records[i] for i in range(n) if i not in train_idx]
    return train, test


def exclusion_set(record: EvalRecord, catalog: TechniqueCatalog) -> set[str]:
    """Item ids the pipeline must skip for this query: procedure-example
    items of the record's own labels that cite the record's source report.
    Only applies to records extracted from knowledge-base reports.
    """
    if record.source != "attack_reports" or not record.source_report_ref:
        return set()
    excluded: set[str] = set()
    for label in record.labels:
        technique_id = label if label in catalog.techniques else parent_technique_id(label)
        if technique_id not in catalog.techniques:
            continue
        for profile in catalog.items:
            for item in catalog.items_for(technique_id, profile):
                if (
                    item.section_kind == "procedure-example"
                    and item.source_ref == record.source_report_ref
                ):
                    excluded.add(item.item_id)
    return excluded


def _first_hit_rank(ranked: RankedList, labels: set[str]) -> int | None:
    for rank, (tid, _) in enumerate(ranked.entries, start=1):
        if tid in labels:
            return rank
    return None


def metrics(
    results: list[tuple[RankedList, set[str]]],
    ks: tuple[int, ...] = DEFAULT_KS,
    sources: list[str] | None = None,
) -> MetricBlock:
    """Ranking metrics over (ranked list, true-label set) pairs.

    Recall@k counts a query as a hit when any true label appears in the
    top-k prefix (k past the list end scores the available prefix). F1
    treats the rank-1 technique as the hard prediction: macro is the
    unweighted mean of per-class F1, weighted is the support-weighted mean.
    """
    if not results:
        raise ValueError("metrics() needs at least one result")
    n = len(results)
    recall_hits = {k: 0 for k in ks}
    p1_hits = 0
    rr_sum = 0.0
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}

    for ranked, labels in results:
        rank = _first_hit_rank(ranked, labels)
        if rank is not None:
            rr_sum += 1.0 / rank
            for k in ks:
                if rank <= k:
                    recall_hits[k] += 1
        pred = ranked.entries[0][0] if ranked.entries else None
        if pred is not None and pred in labels:
            p1_hits += 1
            tp[pred] = tp.get(pred, 0) + 1
        else:
            if pred is not None:
                fp[pred] = fp.get(pred, 0) + 1
            for label in labels:
                fn[label] = fn.get(label, 0) + 1

    classes = sorted(set(tp) | set(fp) | set(fn))
    f1_by_class: dict[str, float] = {}
    support: dict[str, int] = {}
    for c in classes:
        c_tp, c_fp, c_fn = tp.get(c, 0), fp.get(c, 0), fn.get(c, 0)
        support[c] = c_tp + c_fn
        precision = c_tp / (c_tp + c_fp) if c_tp + c_fp else 0.0
        recall = c_tp / (c_tp + c_fn) if c_tp + c_fn else 0.0
        f1_by_class[c] = (
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    f1_macro = sum(f1_by_class.values()) / len(classes) if classes else 0.0
    total_support = sum(support.values())
    f1_weighted = (
        sum(support[c] * f1_by_class[c] for c in classes) / total_support
        if total_support
        else 0.0
    )

    return MetricBlock(
        recall_at={k: recall_hits[k] / n for k in ks},
        precision_at_1=p1_hits / n,
        mrr=rr_sum / n,
        f1_macro=f1_macro,
        f1_weighted=f1_weighted,
        n_queries=n,
    )


def effective_labels(record: EvalRecord, catalog: TechniqueCatalog) -> set[str]:
    """Labels as scoreable against this catalog: sub-technique ids fall back
    to their parent when the catalog only carries top-level techniques.
    """
    out = set()
    for label in record.labels:
        if label in catalog.techniques:
            out.add(label)
        else:
            out.add(parent_technique_id(label))
    return out


def run_benchmark(
    config: PipelineConfig,
    artifacts: Artifacts,
    records: list[EvalRecord],
    out_dir: str | Path | None = None,
    ks: tuple[int, ...] = DEFAULT_KS,
) -> EvalReport:
    """Annotate every record with its exclusion set applied and compute the
    report; optionally writes report.json, report.txt and trace.jsonl.

    The trace and report are fully deterministic for deterministic
    backends: no timings or other run-varying values are serialized.
    """
    if not records:
        raise ValueError("run_benchmark needs at least one record")
    requests = []
    exclusions = []
    for rec in records:
        excluded = frozenset(exclusion_set(rec, artifacts.catalog))
        exclusions.append(excluded)
        requests.append(
            AnnotateRequest(text=rec.text, query_id=rec.record_id, exclude_items=excluded)
        )
    outcomes = annotate_batch(config, artifacts, requests, record_scored_items=True)

    stage_results: dict[int, list[tuple[RankedList, set[str]]]] = {1: [], 2: [], 3: []}
    final_results: list[tuple[RankedList, set[str]]] = []
    final_sources: list[str] = []
    per_technique_stats: dict[str, dict[str, int]] = {}
    trace_rows: list[dict] = []
    failed = 0

    for rec, excluded, outcome in zip(records, exclusions, outcomes):
        if isinstance(outcome, BatchItemError):
            failed += 1
            trace_rows.append(
                {
                    "record_id": rec.record_id,
                    "error": {"type": outcome.error_type, "message": outcome.message},
                }
            )
            continue
        labels = effective_labels(rec, artifacts.catalog)
        final_results.append((outcome.final, labels))
        final_sources.append(rec.source)
        for s in (1, 2, 3):
            stage_results[s].append((outcome.per_stage[s], labels))
        hit10 = _first_hit_rank(outcome.final, labels)
        for label in labels:
            stats = per_technique_stats.setdefault(label, {"support": 0, "hits_at_10": 0})
            stats["support"] += 1
            if hit10 is not None and hit10 <= 10:
                stats["hits_at_10"] += 1
        trace_rows.append(_trace_row(rec, labels, excluded, outcome))

    if not final_results:
        raise ValueError("all benchmark queries failed; no metrics to report")

    block = metrics(final_results, ks=ks)
    per_stage = {f"stage{s}": metrics(stage_results[s], ks=ks) for s in (1, 2, 3)}
    per_source: dict[str, MetricBlock] = {}
    for source in sorted(set(final_sources)):
        subset = [r for r, src in zip(final_results, final_sources) if src == source]
        per_source[source] = metrics(subset, ks=ks)

    per_technique = [
        {
            "technique_id": tid,
            "support": stats["support"],
            "recall_at_10": stats["hits_at_10"] / stats["support"],
        }
        for tid, stats in sorted(per_technique_stats.items())
    ]

    report = EvalReport(
        n_queries=len(final_results),
        failed_queries=failed,
        metrics=block,
        per_stage=per_stage,
        per_source=per_source,
        per_technique=per_technique,
        config_digest=config.digest(),
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        (out_dir / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        with open(out_dir / "trace.jsonl", "w", encoding="utf-8") as fh:
            for row in trace_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return report


def _trace_row(
    record: EvalRecord,
    labels: set[str],
    excluded: frozenset[str],
    result: AnnotationResult,
) -> dict:
    row = result_to_dict(result, per_stage=True, timings=False)
    row["record_id"] = record.record_id
    row["source"] = record.source
    row["labels"] = sorted(record.labels)
    row["effective_labels"] = sorted(labels)
    row["excluded_items"] = sorted(excluded)
    return row
