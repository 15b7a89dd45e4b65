"""Durable annotation sessions: the human-driven side of the acquisition loop.

A session owns a labeled/unlabeled split of one case file, a model
checkpoint, and at most one pending query.  Every accepted label retrains
the model synchronously and persists the whole session state atomically
(write-temp, rename) *before* the acknowledgment is returned, so a crash or
retry can never apply a label twice.  All handlers rebuild their view from
the durable snapshot, which makes any response reproducible after a restart.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np

from .active_loop import evaluate_accuracy, forward_margins
from .dataset import CaseRecord, canonical_events, parse_case_file, serialize_cases, validate_case
from .featurizer import (
    PAIR_CAP,
    EmbeddingStore,
    FeatureVector,
    TimeNormalizer,
    build_projection,
    featurize_case,
    fit_time_normalizer,
    load_store,
)
from .importance import CaseImportance, cohort_feature_report
from .network import Model, ModelConfig, init_model, load_model, save_model, train

STATE_FILE = "state.json"
CASES_FILE = "cases.jsonl"


class SessionNotFound(KeyError):
    pass


class StaleQueryError(ValueError):
    """Submitted case id does not match the pending query."""


class SessionError(ValueError):
    """Session could not be created from the given cases/config."""


@dataclass(frozen=True)
class SessionConfig:
    mode: Literal["interactive", "simulated"] = "interactive"
    model: ModelConfig = ModelConfig(
        hidden1=32, hidden2=16, attention="diagonal", dropout_rate=0.1, epochs=120
    )
    projection_seed: int = 0
    embeddings: str = "hash"
    # simulated mode: random test/train split of the fully labeled file
    n_train: int = 4
    n_test: int = 5
    split_seed: int = 0
    # interactive mode: optional held-out labeled ids for accuracy tracking
    test_ids: tuple[str, ...] = ()


@dataclass
class PendingQuery:
    case_id: str
    margin: float
    probs: tuple[float, float]


@dataclass
class SessionState:
    session_id: str
    config: SessionConfig
    iteration: int
    labeled: list[tuple[str, int]]
    unlabeled_ids: list[str]
    test_ids: list[str]
    pending: Optional[PendingQuery]
    checkpoint: str
    normalizer: TimeNormalizer
    accuracy_history: list[float]
    event_log: list[dict]

    def to_json(self) -> str:
        obj = {
            "version": 1,
            "session_id": self.session_id,
            "config": asdict(self.config),
            "iteration": self.iteration,
            "labeled": [[cid, risk] for cid, risk in self.labeled],
            "unlabeled_ids": self.unlabeled_ids,
            "test_ids": self.test_ids,
            "pending": asdict(self.pending) if self.pending else None,
            "checkpoint": self.checkpoint,
            "normalizer": {"mean": self.normalizer.mean, "std": self.normalizer.std},
            "accuracy_history": self.accuracy_history,
            "event_log": self.event_log,
        }
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SessionState":
        obj = json.loads(text)
        cfg = dict(obj["config"])
        cfg["model"] = ModelConfig(**cfg["model"])
        cfg["test_ids"] = tuple(cfg.get("test_ids", ()))
        pending = obj["pending"]
        return cls(
            session_id=obj["session_id"],
            config=SessionConfig(**cfg),
            iteration=obj["iteration"],
            labeled=[(cid, int(risk)) for cid, risk in obj["labeled"]],
            unlabeled_ids=list(obj["unlabeled_ids"]),
            test_ids=list(obj["test_ids"]),
            pending=PendingQuery(
                case_id=pending["case_id"],
                margin=pending["margin"],
                probs=tuple(pending["probs"]),
            )
            if pending
            else None,
            checkpoint=obj["checkpoint"],
            normalizer=TimeNormalizer(**obj["normalizer"]),
            accuracy_history=list(obj["accuracy_history"]),
            event_log=list(obj["event_log"]),
        )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp-{uuid.uuid4().hex}")
    tmp.write_bytes(data)
    tmp.replace(path)


class SessionManager:
    """Filesystem-backed session store; one writer lock per session."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._features: dict[str, dict[str, np.ndarray]] = {}
        self._records: dict[str, dict[str, CaseRecord]] = {}
        # test hook, called with "after-persist" before an ack is returned
        self.fault_hook: Optional[Callable[[str], None]] = None

    def _lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _dir(self, session_id: str) -> Path:
        return self.root / session_id

    # ------------------------------------------------------------------ create

    def create_session(
        self,
        cases: Union[bytes, list[CaseRecord]],
        config: SessionConfig,
        session_id: Optional[str] = None,
    ) -> SessionState:
        records = parse_case_file(cases) if isinstance(cases, bytes) else list(cases)
        if not records:
            raise SessionError("no cases supplied")
        for record in records:
            report = validate_case(record)
            if not report.admissible:
                raise SessionError(f"case {record.id!r} invalid: {'; '.join(report.errors)}")

        session_id = session_id or uuid.uuid4().hex[:12]
        sdir = self._dir(session_id)
        if sdir.exists():
            raise SessionError(f"session {session_id!r} already exists")

        by_id = {r.id: r for r in records}
        labeled_ids, unlabeled_ids, test_ids = _initial_split(records, config)

        norm = fit_time_normalizer([by_id[cid] for cid in labeled_ids])
        features = self._featurize_all(records, config, norm)

        model = init_model(config.model)
        x = np.stack([features[cid] for cid in labeled_ids])
        y = np.array([by_id[cid].risk for cid in labeled_ids])
        model, _ = train(model, x, y, config.model)

        state = SessionState(
            session_id=session_id,
            config=config,
            iteration=0,
            labeled=[(cid, int(by_id[cid].risk)) for cid in labeled_ids],
            unlabeled_ids=list(unlabeled_ids),
            test_ids=list(test_ids),
            pending=None,
            checkpoint="model-000000.ckpt",
            normalizer=norm,
            accuracy_history=[],
            event_log=[],
        )
        if test_ids:
            state.accuracy_history.append(self._accuracy(model, state, features, by_id))
        state.pending = _next_pending(model, state, features)

        sdir.mkdir(parents=True)
        _atomic_write(sdir / CASES_FILE, serialize_cases(records))
        save_model(model, sdir / state.checkpoint)
        _atomic_write(sdir / STATE_FILE, state.to_json().encode("utf-8"))
        self._features[session_id] = features
        self._records[session_id] = by_id
        return state

    # ------------------------------------------------------------------- reads

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / STATE_FILE).exists())

    def get_state(self, session_id: str) -> SessionState:
        path = self._dir(session_id) / STATE_FILE
        if not path.exists():
            raise SessionNotFound(session_id)
        return SessionState.from_json(path.read_text(encoding="utf-8"))

    def get_records(self, session_id: str) -> dict[str, CaseRecord]:
        if session_id not in self._records:
            path = self._dir(session_id) / CASES_FILE
            if not path.exists():
                raise SessionNotFound(session_id)
            self._records[session_id] = {r.id: r for r in parse_case_file(path.read_bytes())}
        return self._records[session_id]

    def _get_features(self, session_id: str, state: SessionState) -> dict[str, np.ndarray]:
        if session_id not in self._features:
            records = list(self.get_records(session_id).values())
            self._features[session_id] = self._featurize_all(
                records, state.config, state.normalizer
            )
        return self._features[session_id]

    def _featurize_all(
        self, records: list[CaseRecord], config: SessionConfig, norm: TimeNormalizer
    ) -> dict[str, np.ndarray]:
        store = (
            EmbeddingStore()
            if config.embeddings == "hash"
            else load_store(config.embeddings)
        )
        proj = build_projection(config.projection_seed)
        return {r.id: featurize_case(r, store, proj, norm).values for r in records}

    def load_current_model(self, session_id: str) -> Model:
        state = self.get_state(session_id)
        return load_model(self._dir(session_id) / state.checkpoint)

    def status(self, session_id: str) -> dict:
        state = self.get_state(session_id)
        return {
            "session_id": state.session_id,
            "iteration": state.iteration,
            "labeled_count": len(state.labeled),
            "unlabeled_count": len(state.unlabeled_ids),
            "test_count": len(state.test_ids),
            "accuracy_history": state.accuracy_history,
            "done": state.pending is None,
            "config": json.loads(json.dumps(asdict(state.config), sort_keys=True)),
        }

    def next_query(self, session_id: str) -> dict:
        """The pending query payload; repeated calls return the same payload
        until a label is accepted."""
        state = self.get_state(session_id)
        if state.pending is None:
            return {
                "done": True,
                "iteration": state.iteration,
                "labeled_count": len(state.labeled),
                "unlabeled_count": len(state.unlabeled_ids),
                "accuracy_history": state.accuracy_history,
            }
        record = self.get_records(session_id)[state.pending.case_id]
        payload = {
            "done": False,
            "case_id": state.pending.case_id,
            "events": [
                {"event": e.event, "t_hours": e.t_hours} for e in canonical_events(record)
            ],
            "probs": list(state.pending.probs),
            "margin": state.pending.margin,
            "iteration": state.iteration,
            "labeled_count": len(state.labeled),
            "unlabeled_count": len(state.unlabeled_ids),
        }
        if state.config.mode == "simulated" and record.risk is not None:
            payload["oracle_risk"] = record.risk
        return payload

    # ------------------------------------------------------------------ writes

    def submit_label(self, session_id: str, case_id: str, risk: int) -> dict:
        """Apply one label: move the case, retrain warm, persist, acknowledge.

        State hits disk before the return, so a crash after persistence
        leaves the label applied exactly once and the retry path sees a
        stale-query error instead of a duplicate application.
        """
        if risk not in (0, 1):
            raise ValueError(f"risk must be 0 or 1, got {risk!r}")
        with self._lock(session_id):
            state = self.get_state(session_id)
            if state.pending is None:
                raise StaleQueryError("session is complete; no pending query")
            if case_id != state.pending.case_id:
                raise StaleQueryError(
                    f"pending query is {state.pending.case_id!r}, got {case_id!r}"
                )

            by_id = self.get_records(session_id)
            features = self._get_features(session_id, state)

            state.unlabeled_ids.remove(case_id)
            state.labeled.append((case_id, int(risk)))
            state.iteration += 1
            state.event_log.append(
                {"case_id": case_id, "risk": int(risk), "t_unix": time.time()}
            )

            model = load_model(self._dir(session_id) / state.checkpoint)
            x = np.stack([features[cid] for cid, _ in state.labeled])
            y = np.array([label for _, label in state.labeled])
            model, _ = train(model, x, y, state.config.model)

            if state.test_ids:
                state.accuracy_history.append(self._accuracy(model, state, features, by_id))
            state.pending = _next_pending(model, state, features)
            state.checkpoint = f"model-{state.iteration:06d}.ckpt"

            sdir = self._dir(session_id)
            save_model(model, sdir / state.checkpoint)
            _atomic_write(sdir / STATE_FILE, state.to_json().encode("utf-8"))
            if self.fault_hook is not None:
                self.fault_hook("after-persist")
            return {
                "iteration": state.iteration,
                "labeled_count": len(state.labeled),
                "unlabeled_count": len(state.unlabeled_ids),
                "done": state.pending is None,
            }

    def importance_report(self, session_id: str, k: int = 5) -> list[CaseImportance]:
        """Top-k named features for every labeled case under the current model."""
        state = self.get_state(session_id)
        by_id = self.get_records(session_id)
        features = self._get_features(session_id, state)
        model = load_model(self._dir(session_id) / state.checkpoint)
        cases = []
        for cid, _ in state.labeled:
            record = by_id[cid]
            n_real = min(len(record.events), PAIR_CAP)
            cases.append(
                (record, FeatureVector(values=features[cid], n_real_pairs=n_real, case_id=cid))
            )
        return cohort_feature_report(model, cases, k)

    def _accuracy(
        self,
        model: Model,
        state: SessionState,
        features: dict[str, np.ndarray],
        by_id: dict[str, CaseRecord],
    ) -> float:
        x = np.stack([features[cid] for cid in state.test_ids])
        y = np.array([by_id[cid].risk for cid in state.test_ids])
        return evaluate_accuracy(model, x, y)


def _initial_split(
    records: list[CaseRecord], config: SessionConfig
) -> tuple[list[str], list[str], list[str]]:
    ids = [r.id for r in records]
    by_id = {r.id: r for r in records}
    if config.mode == "simulated":
        unlabeled_ok = all(r.risk in (0, 1) for r in records)
        if not unlabeled_ok:
            raise SessionError("simulated mode requires a fully labeled case file")
        if config.n_test + config.n_train > len(ids):
            raise SessionError(
                f"n_test + n_train = {config.n_test + config.n_train} exceeds {len(ids)} cases"
            )
        rng = np.random.default_rng(config.split_seed)
        order = [ids[i] for i in rng.permutation(len(ids))]
        test_ids = order[: config.n_test]
        labeled_ids = order[config.n_test : config.n_test + config.n_train]
        unlabeled_ids = order[config.n_test + config.n_train :]
        return labeled_ids, unlabeled_ids, test_ids

    test_ids = list(config.test_ids)
    for cid in test_ids:
        if cid not in by_id or by_id[cid].risk not in (0, 1):
            raise SessionError(f"test id {cid!r} missing or unlabeled")
    labeled_ids = [r.id for r in records if r.risk in (0, 1) and r.id not in set(test_ids)]
    unlabeled_ids = [r.id for r in records if r.risk is None]
    if not labeled_ids:
        raise SessionError("interactive mode needs at least one labeled case to start")
    if not unlabeled_ids:
        raise SessionError("interactive mode needs at least one unlabeled case")
    return labeled_ids, unlabeled_ids, test_ids


def _next_pending(
    model: Model, state: SessionState, features: dict[str, np.ndarray]
) -> Optional[PendingQuery]:
    if not state.unlabeled_ids:
        return None
    x = np.stack([features[cid] for cid in state.unlabeled_ids])
    margins, probs = forward_margins(model, x)
    i = int(np.argmin(margins))
    return PendingQuery(
        case_id=state.unlabeled_ids[i],
        margin=float(margins[i]),
        probs=(float(probs[i, 0]), float(probs[i, 1])),
    )
