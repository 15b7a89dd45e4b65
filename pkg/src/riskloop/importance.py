"""Gate-based feature importance with index-to-name mapping.

A case's importance scores are the gated input magnitudes |a * x| computed
from the model's attention gate in eval mode.  Ranked flat indices map back
to human-readable names: the event text of the owning pair, the literal
"Time" for a real pair's timestamp slot, or "Unknown" for any slot inside a
zero-padded pair.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .dataset import CaseRecord, canonical_events
from .featurizer import PAIR_CAP, TOTAL_DIMS, FeatureVector, locate_feature
from .network import Model, ShapeError, _sigmoid

TIME_NAME = "Time"
UNKNOWN_NAME = "Unknown"


class ImportanceConfigError(ValueError):
    """Models being compared disagree on featurization."""


@dataclass(frozen=True)
class NamedFeature:
    rank: int
    name: str
    score: float
    flat_index: int
    pair_index: int


def importance_scores(model: Model, feature: FeatureVector, signed: bool = False) -> np.ndarray:
    """Per-feature gated magnitude for one case: |sigmoid(W_attn x) * x|.

    ``signed=True`` skips the absolute value for callers that want direction.
    """
    x = np.asarray(feature.values, dtype=np.float64)
    if x.shape != (model.config.input_dim,):
        raise ShapeError(
            f"feature width {x.shape} != model input_dim ({model.config.input_dim},)"
        )
    if model.config.attention == "full":
        u = model.w_attn @ x
    else:
        u = model.w_attn * x
    gated = _sigmoid(u) * x
    return gated if signed else np.abs(gated)


def top_features(
    scores: np.ndarray,
    record: CaseRecord,
    k: int,
    dedupe: bool = False,
) -> list[NamedFeature]:
    """Top-k features by descending score; ties resolve to the lower flat index.

    Repeated names (several dims of one event) are kept unless ``dedupe``;
    with ``dedupe`` only each name's first occurrence counts toward k.
    """
    scores = np.asarray(scores)
    if scores.shape != (TOTAL_DIMS,):
        raise ShapeError(f"scores must have shape ({TOTAL_DIMS},), got {scores.shape}")
    if k > TOTAL_DIMS or k < 0:
        raise IndexError(f"k must be in [0, {TOTAL_DIMS}], got {k}")
    if k == 0:
        return []

    events = canonical_events(record)[:PAIR_CAP]
    n_real = len(events)
    order = np.argsort(-scores, kind="stable")

    named: list[NamedFeature] = []
    seen: set[str] = set()
    for flat in order:
        slot = locate_feature(int(flat))
        if slot.pair_index >= n_real:
            name = UNKNOWN_NAME
        elif slot.kind == "time":
            name = TIME_NAME
        else:
            name = events[slot.pair_index].event
        if dedupe:
            if name in seen:
                continue
            seen.add(name)
        named.append(
            NamedFeature(
                rank=len(named) + 1,
                name=name,
                score=float(scores[flat]),
                flat_index=int(flat),
                pair_index=slot.pair_index,
            )
        )
        if len(named) == k:
            break
    return named


@dataclass
class CaseImportance:
    case_id: str
    risk: Optional[int]
    features: list[NamedFeature]


def cohort_feature_report(
    model: Model,
    cases: Sequence[tuple[CaseRecord, FeatureVector]],
    k: int,
) -> list[CaseImportance]:
    report = []
    for record, fv in cases:
        scores = importance_scores(model, fv)
        report.append(
            CaseImportance(case_id=record.id, risk=record.risk, features=top_features(scores, record, k))
        )
    return report


@dataclass
class CaseComparison:
    """Top-k name overlap between two models on one case."""

    case_id: str
    risk: Optional[int]
    common: list[str]
    unique_a: list[str]
    unique_b: list[str]


def compare_models(
    model_a: Model,
    model_b: Model,
    cases: Sequence[tuple[CaseRecord, FeatureVector]],
    k: int,
) -> list[CaseComparison]:
    """Per-case common/unique top-k feature names for two trained models."""
    if model_a.config.input_dim != model_b.config.input_dim:
        raise ImportanceConfigError(
            f"models featurized differently: input {model_a.config.input_dim} vs"
            f" {model_b.config.input_dim}"
        )
    out = []
    for record, fv in cases:
        names_a = {f.name for f in top_features(importance_scores(model_a, fv), record, k)}
        names_b = {f.name for f in top_features(importance_scores(model_b, fv), record, k)}
        out.append(
            CaseComparison(
                case_id=record.id,
                risk=record.risk,
                common=sorted(names_a & names_b),
                unique_a=sorted(names_a - names_b),
                unique_b=sorted(names_b - names_a),
            )
        )
    return out


def write_report(
    path: Union[str, Path],
    report: Union[list[CaseImportance], list[CaseComparison]],
) -> None:
    payload = [asdict(item) for item in report]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
