"""Shared domain types: tasks, subgoals, observations, actions, events, episode records.

Everything here is a plain value type. Task, Subgoal, Action and StepEvent are
immutable; Observation is immutable in practice (its arrays are never mutated
after construction). EpisodeStep/EpisodeRecord are the per-step audit trail the
rest of the system (metrics, labeling, replay) is built on.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

UNIT_NORM_TOL = 1e-6


class ConfigurationError(Exception):
    """A component, config file, or wiring problem detected before execution."""


class ShapeError(ValueError):
    """Numeric input with the wrong dimensions; message names expected vs actual."""


class ActionKind(str, Enum):
    MOVE = "move"
    GRASP = "grasp"
    RELEASE = "release"
    OPEN = "open"
    CLOSE = "close"
    NOOP = "noop"
    RECOVER_GOTO = "recover-goto"


class EventKind(str, Enum):
    SUBGOAL_COMPLETED = "subgoal_completed"
    ACTION_FAILED = "action_failed"
    PERTURBATION_INJECTED = "perturbation_injected"
    RECOVERY_TRIGGERED = "recovery_triggered"
    RECOVERY_EXHAUSTED = "recovery_exhausted"
    TASK_COMPLETED = "task_completed"
    TASK_FAILED = "task_failed"


@dataclass(frozen=True)
class Subgoal:
    """A single ordered step of a task, checkable against simulator state."""

    id: int
    description: str
    target_predicate: str


@dataclass(frozen=True)
class Task:
    id: str
    instruction: str
    subgoals: tuple[Subgoal, ...]
    max_steps: int

    def violations(self) -> list[str]:
        """Invariant check; empty list means the task is well formed."""
        out = []
        if len(self.subgoals) < 3:
            out.append(f"task {self.id}: needs at least 3 subgoals, got {len(self.subgoals)}")
        ids = [g.id for g in self.subgoals]
        if len(set(ids)) != len(ids):
            out.append(f"task {self.id}: subgoal ids not unique: {ids}")
        if ids != sorted(ids):
            out.append(f"task {self.id}: subgoal ids not ordered: {ids}")
        if self.max_steps <= 0:
            out.append(f"task {self.id}: max_steps must be positive, got {self.max_steps}")
        return out

    @property
    def k(self) -> int:
        return len(self.subgoals)

    def subgoal_by_id(self, subgoal_id: int) -> Subgoal:
        for g in self.subgoals:
            if g.id == subgoal_id:
                return g
        raise KeyError(f"no subgoal {subgoal_id} in task {self.id}")


@dataclass(eq=False)
class Observation:
    """What the policy sees: a unit embedding plus simulator-native raw features."""

    embedding: np.ndarray
    raw_features: np.ndarray
    timestep: int

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"observation embedding norm {norm} not within {UNIT_NORM_TOL} of 1")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.timestep == other.timestep
            and np.array_equal(self.embedding, other.embedding)
            and np.array_equal(self.raw_features, other.raw_features)
        )

    def with_timestep(self, timestep: int) -> "Observation":
        return Observation(self.embedding, self.raw_features, timestep)


@dataclass(frozen=True)
class Action:
    """A discrete manipulation command.

    parameters is a fixed-width numeric vector: slots 0..2 carry the move delta,
    slots 3..5 the believed offset from the gripper to the target object at
    proposal time, the rest are padding. The same vector feeds the verifier's
    action projection.
    """

    kind: ActionKind
    target_object: Optional[str] = None
    parameters: tuple[float, ...] = (0.0,) * 8

    @property
    def delta(self) -> tuple[int, int, int]:
        return (int(self.parameters[0]), int(self.parameters[1]), int(self.parameters[2]))


def make_action(
    kind: ActionKind,
    target_object: Optional[str] = None,
    delta: tuple[int, int, int] = (0, 0, 0),
    target_offset: tuple[int, int, int] = (0, 0, 0),
    dim: int = 8,
) -> Action:
    params = [0.0] * dim
    params[0:3] = [float(d) for d in delta]
    params[3:6] = [float(o) for o in target_offset]
    return Action(kind=kind, target_object=target_object, parameters=tuple(params))


@dataclass(frozen=True)
class StepEvent:
    kind: EventKind
    timestep: int
    subgoal_id: Optional[int] = None
    detail: str = ""


@dataclass
class RecoveryInfo:
    mode: str
    reason: str
    target_timestep: Optional[int] = None
    fallback: bool = False


@dataclass
class EpisodeStep:
    """One executed (or blocked) step of an episode."""

    t: int
    obs_embedding: np.ndarray
    subgoal_id: int
    subgoal_description: str
    action: Action
    action_features: np.ndarray
    events: tuple[StepEvent, ...]
    executed: bool = True
    p_fail: Optional[float] = None
    top1_key: Optional[np.ndarray] = None
    top1_similarity: Optional[float] = None
    retrieved_timesteps: tuple[int, ...] = ()
    state_hash: str = ""
    recovery: Optional[RecoveryInfo] = None


@dataclass
class EpisodeRecord:
    """Full audit trail of one episode run."""

    task_id: str
    seed: int
    config_name: str
    k_total: int
    steps: list[EpisodeStep] = field(default_factory=list)
    success: bool = False
    truth_completed: tuple[int, ...] = ()
    final_embedding: Optional[np.ndarray] = None
    final_events: tuple[StepEvent, ...] = ()
    perturbation: Optional[dict] = None
    injected_at: Optional[int] = None
    retry_counts: dict[int, int] = field(default_factory=dict)
    verifier_inferences: int = 0

    def iter_events(self):
        for step in self.steps:
            yield from step.events
        yield from self.final_events

    def events_of_kind(self, kind: EventKind) -> list[StepEvent]:
        return [e for e in self.iter_events() if e.kind == kind]

    @property
    def length(self) -> int:
        return len(self.steps)


# --- serialization helpers (round-trip tested) ------------------------------

def subgoal_to_dict(g: Subgoal) -> dict:
    return {"id": g.id, "description": g.description, "target_predicate": g.target_predicate}


def subgoal_from_dict(d: dict) -> Subgoal:
    return Subgoal(id=int(d["id"]), description=d["description"], target_predicate=d["target_predicate"])


def task_to_dict(task: Task) -> dict:
    return {
        "id": task.id,
        "instruction": task.instruction,
        "subgoals": [subgoal_to_dict(g) for g in task.subgoals],
        "max_steps": task.max_steps,
    }


def task_from_dict(d: dict) -> Task:
    return Task(
        id=d["id"],
        instruction=d["instruction"],
        subgoals=tuple(subgoal_from_dict(g) for g in d["subgoals"]),
        max_steps=int(d["max_steps"]),
    )


def action_to_dict(a: Action) -> dict:
    return {"kind": a.kind.value, "target_object": a.target_object, "parameters": list(a.parameters)}


def action_from_dict(d: dict) -> Action:
    return Action(
        kind=ActionKind(d["kind"]),
        target_object=d["target_object"],
        parameters=tuple(float(x) for x in d["parameters"]),
    )


def event_to_dict(e: StepEvent) -> dict:
    return {"kind": e.kind.value, "timestep": e.timestep, "subgoal_id": e.subgoal_id, "detail": e.detail}


def event_from_dict(d: dict) -> StepEvent:
    return StepEvent(
        kind=EventKind(d["kind"]),
        timestep=int(d["timestep"]),
        subgoal_id=d["subgoal_id"],
        detail=d.get("detail", ""),
    )


def observation_to_dict(o: Observation) -> dict:
    return {
        "embedding": [float(x) for x in o.embedding],
        "raw_features": [float(x) for x in o.raw_features],
        "timestep": o.timestep,
    }


def observation_from_dict(d: dict) -> Observation:
    return Observation(
        embedding=np.asarray(d["embedding"], dtype=np.float32),
        raw_features=np.asarray(d["raw_features"], dtype=np.float32),
        timestep=int(d["timestep"]),
    )
