"""Pool-based active learning: margin scoring, query selection, and the loop.

Each iteration scores every unlabeled case with an eval-mode forward pass,
selects the case whose two class probabilities are closest (smallest
|p0 - p1| margin), asks the oracle for its label, moves it to the labeled
set, and retrains.  A random-selection baseline shares the same loop so the
two strategies are directly comparable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional, Protocol, Union

import numpy as np

from .network import (
    Model,
    ModelConfig,
    forward,
    init_model,
    load_model,
    save_model,
    train,
)


class EmptyPoolError(ValueError):
    """Selection asked for on an exhausted pool."""


class OracleUnavailable(RuntimeError):
    """Raised by interactive oracles when no answer can be produced now."""


@dataclass
class PoolItem:
    case_id: str
    features: np.ndarray


@dataclass
class LabeledItem:
    case_id: str
    features: np.ndarray
    label: int


@dataclass
class Pool:
    """Ordered unlabeled cases plus the growing labeled set; ids never overlap."""

    unlabeled: list[PoolItem] = field(default_factory=list)
    labeled: list[LabeledItem] = field(default_factory=list)

    def __post_init__(self):
        ids = [p.case_id for p in self.unlabeled] + [l.case_id for l in self.labeled]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate case ids across pool")

    @property
    def total(self) -> int:
        return len(self.unlabeled) + len(self.labeled)

    def move(self, case_id: str, label: int) -> None:
        for i, item in enumerate(self.unlabeled):
            if item.case_id == case_id:
                self.unlabeled.pop(i)
                self.labeled.append(LabeledItem(item.case_id, item.features, label))
                return
        raise KeyError(f"case {case_id!r} not in unlabeled pool")

    def labeled_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([l.features for l in self.labeled])
        y = np.array([l.label for l in self.labeled])
        return x, y


class LabelOracle(Protocol):
    def query(self, case_id: str) -> int: ...


class SimulatedOracle:
    """Answers instantly from held ground-truth labels."""

    def __init__(self, answers: dict[str, int]):
        self.answers = dict(answers)

    def query(self, case_id: str) -> int:
        return self.answers[case_id]


def uncertainty_score(probs: np.ndarray) -> float:
    """Margin between the two class probabilities; 0 = maximally uncertain."""
    p = np.asarray(probs, dtype=np.float64)
    return float(abs(p[0] - p[1]))


def forward_margins(model: Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode margins and probabilities for a feature matrix."""
    probs = forward(model, x, "eval").probs
    return np.abs(probs[:, 0] - probs[:, 1]), probs


def pool_margins(model: Model, pool: Pool) -> np.ndarray:
    if not pool.unlabeled:
        raise EmptyPoolError("no unlabeled cases to score")
    x = np.stack([item.features for item in pool.unlabeled])
    margins, _ = forward_margins(model, x)
    return margins


def select_query(model: Model, pool: Pool) -> tuple[str, float]:
    """Unlabeled case with the smallest margin; ties go to earliest pool position."""
    margins = pool_margins(model, pool)
    i = int(np.argmin(margins))
    return pool.unlabeled[i].case_id, float(margins[i])


def random_baseline_step(pool: Pool, rng: np.random.Generator) -> str:
    """Uniform draw from the unlabeled pool (removal is the caller's move)."""
    if not pool.unlabeled:
        raise EmptyPoolError("no unlabeled cases to draw from")
    return pool.unlabeled[int(rng.integers(len(pool.unlabeled)))].case_id


@dataclass
class LoopRecord:
    iteration: int
    case_id: str
    margin: float
    n_labeled: int
    accuracy: Optional[float]
    wall_time: float


@dataclass
class LoopTrace:
    records: list[LoopRecord]
    model: Model
    suspended: bool = False


@dataclass(frozen=True)
class LoopConfig:
    iterations: Optional[int] = None  # None: run until the pool is empty
    warm_start: bool = True
    train_config: Optional[ModelConfig] = None
    strategy: Literal["margin", "random"] = "margin"
    snapshot_dir: Optional[Union[str, Path]] = None


def evaluate_accuracy(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    probs = forward(model, features, "eval").probs
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


def run_al_loop(
    pool: Pool,
    oracle: LabelOracle,
    model: Model,
    test: Optional[tuple[np.ndarray, np.ndarray]] = None,
    config: LoopConfig = LoopConfig(),
    rng: Optional[np.random.Generator] = None,
    prior_records: Optional[list[LoopRecord]] = None,
) -> LoopTrace:
    """Run the acquire-label-retrain loop for ``config.iterations`` steps.

    The random strategy draws from ``rng`` (a stream independent of training
    randomness).  If the oracle raises :class:`OracleUnavailable` the loop
    persists its state (when ``snapshot_dir`` is set) and returns a suspended
    trace with no iteration lost; pass the snapshot's records back in via
    ``prior_records`` to continue the numbering.
    """
    total = len(pool.unlabeled)
    iterations = total if config.iterations is None else config.iterations
    if iterations > total:
        raise ValueError(f"{iterations} iterations > {total} unlabeled cases")
    if config.strategy == "random" and rng is None:
        raise ValueError("random strategy requires an rng")
    train_cfg = config.train_config or model.config

    records: list[LoopRecord] = list(prior_records or [])
    start_iter = records[-1].iteration if records else 0
    for t in range(1, iterations + 1):
        t0 = time.perf_counter()
        margins = pool_margins(model, pool)
        if config.strategy == "margin":
            i = int(np.argmin(margins))
        else:
            chosen = random_baseline_step(pool, rng)
            i = next(j for j, item in enumerate(pool.unlabeled) if item.case_id == chosen)
        case_id = pool.unlabeled[i].case_id
        margin = float(margins[i])

        try:
            label = oracle.query(case_id)
        except OracleUnavailable:
            if config.snapshot_dir is not None:
                save_loop_state(
                    Path(config.snapshot_dir), pool, model, start_iter + t - 1, rng, records
                )
            return LoopTrace(records=records, model=model, suspended=True)

        pool.move(case_id, label)
        x, y = pool.labeled_arrays()
        base = model if config.warm_start else init_model(train_cfg)
        model, _ = train(base, x, y, train_cfg)

        accuracy = None
        if test is not None:
            accuracy = evaluate_accuracy(model, test[0], test[1])
        records.append(
            LoopRecord(
                iteration=start_iter + t,
                case_id=case_id,
                margin=margin,
                n_labeled=len(pool.labeled),
                accuracy=accuracy,
                wall_time=time.perf_counter() - t0,
            )
        )
    return LoopTrace(records=records, model=model, suspended=False)


STATE_FILE = "loop_state.json"
STATE_CHECKPOINT = "loop_model.ckpt"


def save_loop_state(
    directory: Path,
    pool: Pool,
    model: Model,
    iteration: int,
    rng: Optional[np.random.Generator],
    records: list[LoopRecord],
) -> None:
    """Persist pool membership, labels, model checkpoint, counters, rng state."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_model(model, directory / STATE_CHECKPOINT)
    state = {
        "iteration": iteration,
        "unlabeled_ids": [p.case_id for p in pool.unlabeled],
        "labeled": [[l.case_id, l.label] for l in pool.labeled],
        "checkpoint": STATE_CHECKPOINT,
        "rng_state": _rng_state_jsonable(rng),
        "records": [
            {
                "iteration": r.iteration,
                "case_id": r.case_id,
                "margin": r.margin,
                "n_labeled": r.n_labeled,
                "accuracy": r.accuracy,
                "wall_time": r.wall_time,
            }
            for r in records
        ],
    }
    tmp = directory / (STATE_FILE + ".tmp")
    tmp.write_text(json.dumps(state, sort_keys=True), encoding="utf-8")
    tmp.replace(directory / STATE_FILE)


def _rng_state_jsonable(rng: Optional[np.random.Generator]):
    if rng is None:
        return None

    def conv(v):
        if isinstance(v, dict):
            return {k: conv(u) for k, u in v.items()}
        if isinstance(v, np.integer):
            return int(v)
        return v

    return conv(rng.bit_generator.state)


def load_loop_state(
    directory: Union[str, Path], features_by_id: dict[str, np.ndarray]
) -> tuple[Pool, Model, int, Optional[np.random.Generator], list[LoopRecord]]:
    """Rebuild a suspended loop from its snapshot; features are supplied by
    the caller since the snapshot stores membership, not vectors.
    """
    directory = Path(directory)
    state = json.loads((directory / STATE_FILE).read_text(encoding="utf-8"))
    model = load_model(directory / state["checkpoint"])
    pool = Pool(
        unlabeled=[PoolItem(cid, features_by_id[cid]) for cid in state["unlabeled_ids"]],
        labeled=[
            LabeledItem(cid, features_by_id[cid], int(label)) for cid, label in state["labeled"]
        ],
    )
    rng = None
    if state["rng_state"] is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng_state"]
    records = [
        LoopRecord(
            iteration=r["iteration"],
            case_id=r["case_id"],
            margin=r["margin"],
            n_labeled=r["n_labeled"],
            accuracy=r["accuracy"],
            wall_time=r["wall_time"],
        )
        for r in state["records"]
    ]
    return pool, model, state["iteration"], rng, records
