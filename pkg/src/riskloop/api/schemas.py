"""Pydantic request/response models for the annotation service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ModelConfigModel(BaseModel):
    input_dim: int = 4950
    hidden1: int = 32
    hidden2: int = 16
    classes: int = 2
    dropout_rate: float = 0.1
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    attention: Literal["full", "diagonal"] = "diagonal"
    optimizer: Literal["adam", "sgd"] = "adam"
    learning_rate: float = 1e-3
    epochs: int = 120
    seed: int = 0


class SessionConfigModel(BaseModel):
    mode: Literal["interactive", "simulated"] = "interactive"
    model: ModelConfigModel = Field(default_factory=ModelConfigModel)
    projection_seed: int = 0
    embeddings: str = "hash"
    n_train: int = 4
    n_test: int = 5
    split_seed: int = 0
    test_ids: list[str] = Field(default_factory=list)


class CreateSessionRequest(BaseModel):
    cases_file_ref: Optional[str] = None
    cases_jsonl: Optional[str] = None
    config: SessionConfigModel = Field(default_factory=SessionConfigModel)
    session_id: Optional[str] = None


class CreateSessionResponse(BaseModel):
    session_id: str
    labeled_count: int
    unlabeled_count: int
    test_count: int


class StatusResponse(BaseModel):
    session_id: str
    iteration: int
    labeled_count: int
    unlabeled_count: int
    test_count: int
    accuracy_history: list[float]
    done: bool
    config: dict


class EventModel(BaseModel):
    event: str
    t_hours: float


class QueryResponse(BaseModel):
    done: bool
    iteration: int
    labeled_count: int
    unlabeled_count: int
    case_id: Optional[str] = None
    events: Optional[list[EventModel]] = None
    probs: Optional[list[float]] = None
    margin: Optional[float] = None
    oracle_risk: Optional[int] = None
    accuracy_history: Optional[list[float]] = None


class LabelRequest(BaseModel):
    case_id: str
    risk: Literal[0, 1]


class LabelAck(BaseModel):
    iteration: int
    labeled_count: int
    unlabeled_count: int
    done: bool


class NamedFeatureModel(BaseModel):
    rank: int
    name: str
    score: float
    flat_index: int
    pair_index: int


class CaseImportanceModel(BaseModel):
    case_id: str
    risk: Optional[int]
    features: list[NamedFeatureModel]


class ImportanceResponse(BaseModel):
    session_id: str
    k: int
    cases: list[CaseImportanceModel]
