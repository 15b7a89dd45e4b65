"""Simulated-oracle benchmark: margin acquisition vs random, over repeated splits.

Every repeat draws a fresh test/train/pool partition, trains one initial
model on the starting labels, then runs each strategy from a deep copy of
that identical starting point (paired design), recording held-out accuracy
after every acquisition.  Results export to a CSV with the full config
snapshot in a leading comment block, byte-identical across reruns.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import __version__
from .active_loop import LabeledItem, LoopConfig, Pool, PoolItem, SimulatedOracle, run_al_loop
from .dataset import CaseRecord
from .featurizer import (
    EmbeddingStore,
    build_projection,
    featurize_case,
    fit_time_normalizer,
    load_store,
)
from .network import ModelConfig, init_model, train


class SplitError(ValueError):
    """Split spec infeasible for the cohort size."""


class MissingLabelError(ValueError):
    """Simulated-oracle experiments need a fully labeled cohort."""


class ConfigError(ValueError):
    """Bad experiment configuration (e.g. even smoothing window)."""


@dataclass(frozen=True)
class SplitSpec:
    n_test: int
    n_train: int
    n_repeats: int = 5
    seed: int = 0


@dataclass(frozen=True)
class Split:
    test_ids: tuple[str, ...]
    train_ids: tuple[str, ...]
    pool_ids: tuple[str, ...]


def make_splits(cohort: Sequence[CaseRecord], spec: SplitSpec) -> list[Split]:
    """Disjoint, exhaustive test/train/pool partitions, deterministic in seed."""
    ids = [c.id for c in cohort]
    if spec.n_test <= 0 or spec.n_train <= 0 or spec.n_repeats <= 0:
        raise SplitError("n_test, n_train and n_repeats must be positive")
    if spec.n_test + spec.n_train > len(ids):
        raise SplitError(
            f"n_test + n_train = {spec.n_test + spec.n_train} exceeds cohort size {len(ids)}"
        )
    splits = []
    for child in np.random.SeedSequence(spec.seed).spawn(spec.n_repeats):
        rng = np.random.default_rng(child)
        order = [ids[i] for i in rng.permutation(len(ids))]
        splits.append(
            Split(
                test_ids=tuple(order[: spec.n_test]),
                train_ids=tuple(order[spec.n_test : spec.n_test + spec.n_train]),
                pool_ids=tuple(order[spec.n_test + spec.n_train :]),
            )
        )
    return splits


def smooth_curve(values: Sequence[float], window: int) -> list[float]:
    """Centered moving average; the window shrinks symmetrically at the ends."""
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be odd and positive, got {window}")
    half = window // 2
    v = list(values)
    return [
        float(np.mean(v[max(0, i - half) : min(len(v), i + half + 1)])) for i in range(len(v))
    ]


@dataclass
class ResultRow:
    repeat: int
    strategy: str
    iteration: int
    n_labeled: int
    selected_case_id: str
    margin: float
    accuracy_raw: float
    accuracy_smoothed: float


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    config_snapshot: dict

    def curve(self, repeat: int, strategy: str) -> list[ResultRow]:
        return [r for r in self.rows if r.repeat == repeat and r.strategy == strategy]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything the comparison depends on besides the cohort itself."""

    split: SplitSpec
    model: ModelConfig
    strategies: tuple[str, ...] = ("margin", "random")
    iterations: Optional[int] = None  # None: exhaust the pool
    initial_epochs: Optional[int] = None  # None: same as model.epochs
    projection_seed: int = 0
    embeddings: str = "hash"  # "hash" or a store file path
    smoothing_window: int = 3


def run_comparison(
    cohort: Sequence[CaseRecord],
    config: ExperimentConfig,
    store: Optional[EmbeddingStore] = None,
) -> ExperimentResult:
    """Run every (repeat x strategy) loop and assemble the result table.

    Within a repeat, both strategies start from a bit-identical trained
    initial model and labeled set; only acquisition differs.
    """
    for case in cohort:
        if case.risk not in (0, 1):
            raise MissingLabelError(f"case {case.id!r} has no usable risk label")
    for strategy in config.strategies:
        if strategy not in ("margin", "random"):
            raise ConfigError(f"unknown strategy: {strategy}")

    if store is None:
        store = (
            EmbeddingStore() if config.embeddings == "hash" else load_store(config.embeddings)
        )

    proj = build_projection(config.projection_seed)
    labels_by_id = {c.id: int(c.risk) for c in cohort}
    cases_by_id = {c.id: c for c in cohort}
    splits = make_splits(cohort, config.split)

    # independent deterministic streams: one model seed + one random-strategy
    # stream per repeat
    seed_root = np.random.SeedSequence(config.split.seed).spawn(2)
    model_seeds = [int(s.generate_state(1)[0]) for s in seed_root[0].spawn(len(splits))]
    strategy_seeds = seed_root[1].spawn(len(splits))

    rows: list[ResultRow] = []
    for repeat, split in enumerate(splits):
        norm = fit_time_normalizer([cases_by_id[cid] for cid in split.train_ids])
        features = {
            cid: featurize_case(cases_by_id[cid], store, proj, norm).values
            for cid in split.test_ids + split.train_ids + split.pool_ids
        }
        test_x = np.stack([features[cid] for cid in split.test_ids])
        test_y = np.array([labels_by_id[cid] for cid in split.test_ids])

        model_cfg = replace(config.model, seed=model_seeds[repeat])
        initial = init_model(model_cfg)
        train_x = np.stack([features[cid] for cid in split.train_ids])
        train_y = np.array([labels_by_id[cid] for cid in split.train_ids])
        init_cfg = model_cfg
        if config.initial_epochs is not None:
            init_cfg = replace(model_cfg, epochs=config.initial_epochs)
        initial, _ = train(initial, train_x, train_y, init_cfg)
        initial.config = model_cfg

        strategy_streams = strategy_seeds[repeat].spawn(len(config.strategies))
        for s_idx, strategy in enumerate(config.strategies):
            pool = Pool(
                unlabeled=[PoolItem(cid, features[cid]) for cid in split.pool_ids],
                labeled=[
                    LabeledItem(cid, features[cid], labels_by_id[cid])
                    for cid in split.train_ids
                ],
            )
            trace = run_al_loop(
                pool=pool,
                oracle=SimulatedOracle(labels_by_id),
                model=initial.copy(),
                test=(test_x, test_y),
                config=LoopConfig(
                    iterations=config.iterations,
                    warm_start=True,
                    train_config=model_cfg,
                    strategy=strategy,  # type: ignore[arg-type]
                ),
                rng=np.random.default_rng(strategy_streams[s_idx]),
            )
            raw = [r.accuracy for r in trace.records]
            smoothed = smooth_curve(raw, config.smoothing_window)
            for r, acc_s in zip(trace.records, smoothed):
                rows.append(
                    ResultRow(
                        repeat=repeat,
                        strategy=strategy,
                        iteration=r.iteration,
                        n_labeled=r.n_labeled,
                        selected_case_id=r.case_id,
                        margin=r.margin,
                        accuracy_raw=r.accuracy,
                        accuracy_smoothed=acc_s,
                    )
                )

    snapshot = _config_snapshot(config, len(cohort))
    return ExperimentResult(rows=rows, config_snapshot=snapshot)


def _config_snapshot(config: ExperimentConfig, cohort_size: int) -> dict:
    return {
        "package_version": __version__,
        "cohort_size": cohort_size,
        "split": asdict(config.split),
        "model": asdict(config.model),
        "strategies": list(config.strategies),
        "iterations": config.iterations,
        "projection_seed": config.projection_seed,
        "embeddings": config.embeddings,
        "smoothing_window": config.smoothing_window,
    }


CSV_COLUMNS = (
    "repeat",
    "strategy",
    "iteration",
    "n_labeled",
    "selected_case_id",
    "margin",
    "accuracy_raw",
    "accuracy_smoothed",
)


def export_results(result: ExperimentResult, destination: Union[str, Path]) -> tuple[Path, Path]:
    """Write ``results.csv`` and ``curves.json`` under ``destination``.

    The CSV leads with the config snapshot as ``#``-comment lines; floats are
    rendered with ``repr`` so a re-parse recovers them exactly.
    """
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    csv_path = dest / "results.csv"
    json_path = dest / "curves.json"

    lines = ["# config: " + json.dumps(result.config_snapshot, sort_keys=True)]
    lines.append(",".join(CSV_COLUMNS))
    for r in result.rows:
        lines.append(
            ",".join(
                [
                    str(r.repeat),
                    r.strategy,
                    str(r.iteration),
                    str(r.n_labeled),
                    r.selected_case_id,
                    repr(r.margin),
                    repr(r.accuracy_raw),
                    repr(r.accuracy_smoothed),
                ]
            )
        )
    csv_path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))

    curves = []
    seen = sorted({(r.repeat, r.strategy) for r in result.rows})
    for repeat, strategy in seen:
        curve = result.curve(repeat, strategy)
        curves.append(
            {
                "repeat": repeat,
                "strategy": strategy,
                "n_labeled": [r.n_labeled for r in curve],
                "accuracy_raw": [r.accuracy_raw for r in curve],
                "accuracy_smoothed": [r.accuracy_smoothed for r in curve],
            }
        )
    json_path.write_bytes(
        json.dumps(
            {"config": result.config_snapshot, "curves": curves}, sort_keys=True, indent=2
        ).encode("utf-8")
    )
    return csv_path, json_path


def read_results(csv_path: Union[str, Path]) -> ExperimentResult:
    """Re-parse an exported CSV; inverse of :func:`export_results` for the table."""
    lines = Path(csv_path).read_text(encoding="utf-8").splitlines()
    snapshot = {}
    rows: list[ResultRow] = []
    header_seen = False
    for line in lines:
        if line.startswith("# config: "):
            snapshot = json.loads(line[len("# config: ") :])
            continue
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            header_seen = True
            continue
        parts = line.split(",")
        rows.append(
            ResultRow(
                repeat=int(parts[0]),
                strategy=parts[1],
                iteration=int(parts[2]),
                n_labeled=int(parts[3]),
                selected_case_id=parts[4],
                margin=float(parts[5]),
                accuracy_raw=float(parts[6]),
                accuracy_smoothed=float(parts[7]),
            )
        )
    return ExperimentResult(rows=rows, config_snapshot=snapshot)


def labels_to_reach(curve: list[ResultRow], threshold: float) -> Optional[int]:
    """Smallest n_labeled at which raw accuracy first reaches the threshold."""
    for r in curve:
        if r.accuracy_raw >= threshold:
            return r.n_labeled
    return None
