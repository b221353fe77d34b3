"""Deterministic grid manipulation environment with snapshot/restore and fault injection.

World rules
-----------
Cells are integer coordinates in a cubic grid. Each task has K blocks and a
couple of bins; subgoal k asks for ``block_{k-1}`` to end up inside a specific
bin (predicate ``in:<block>:<bin>``). A single gripper moves one axis-aligned
cell at a time, may grasp an adjacent free block (Chebyshev distance <= reach)
while open, and may release a held block into an adjacent bin or drop it at
its own cell. Cells holding a free block or a bin are impassable. Blocks
inside bins are fixtures: grasping them is infeasible ("already placed").

Infeasible actions leave the physical state unchanged and come back as an
``action_failed`` event rather than an exception; only the step counter
advances. Every transition is a pure function of (state, action), and states
carry a counter-based RNG cursor so a snapshot/restore round trip is
bit-exact, including any stochastic draws made afterwards.

The observation encoder stands in for a frozen image encoder: raw state
features pass through a fixed seeded random projection and are L2-normalized.
It is deterministic, unit-norm, and in practice injective in the state.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from .core import (
    Action,
    ActionKind,
    ConfigurationError,
    EventKind,
    Observation,
    StepEvent,
    Subgoal,
    Task,
)

SNAPSHOT_VERSION = 1
ENCODER_SEED = 7
MAX_OBJECT_CODE = 16  # normalization base for object indices in features
_PLACEMENT_ATTEMPTS = 100

Cell = tuple[int, int, int]


class PerturbationKind(str, Enum):
    OBJECT_DISPLACEMENT = "object_displacement"
    GRIPPER_FLIP = "gripper_flip"


@dataclass(frozen=True)
class PerturbationSpec:
    """A single silent disturbance injected at a subgoal boundary."""

    k_star: int
    kind: PerturbationKind
    displacement: tuple[int, int, int] = (0, 0, 0)

    def to_dict(self) -> dict:
        return {"k_star": self.k_star, "kind": self.kind.value, "displacement": list(self.displacement)}


@dataclass(frozen=True)
class ObjectState:
    id: str
    position: Cell
    container: Optional[str] = None


@dataclass(frozen=True)
class GripperState:
    position: Cell
    holding: Optional[str] = None
    open: bool = True


@dataclass(frozen=True)
class SimState:
    """Full ground-truth world state. Objects are sorted by id."""

    objects: tuple[ObjectState, ...]
    gripper: GripperState
    completed_subgoals: frozenset[int]
    timestep: int
    rng_seed: int
    rng_counter: int

    def object_map(self) -> dict[str, ObjectState]:
        return {o.id: o for o in self.objects}

    def blocking_cells(self) -> set[Cell]:
        """Cells the gripper cannot enter: free blocks and bins."""
        cells = set()
        for o in self.objects:
            if o.container is None and o.id != self.gripper.holding:
                cells.add(o.position)
        return cells

    def physical_fields(self):
        return (self.objects, self.gripper, self.completed_subgoals)


@dataclass(frozen=True)
class Snapshot:
    payload: bytes
    id: int
    timestep: int


class IncompatibleSnapshotError(ConfigurationError):
    """Snapshot produced by a different format version or task binding."""


def _stable_int(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _hash_uniform(seed: int, counter: int) -> float:
    digest = hashlib.sha256(f"{seed}:{counter}".encode()).digest()
    return int.from_bytes(digest[:7], "little") / float(1 << 56)


def next_uniform(state: SimState) -> tuple[float, SimState]:
    """Draw from the state's stochastic stream, advancing its cursor."""
    u = _hash_uniform(state.rng_seed, state.rng_counter)
    return u, replace(state, rng_counter=state.rng_counter + 1)


def _natural_key(name: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", name)]


_PREDICATE_RE = re.compile(r"^in:([A-Za-z0-9_]+):([A-Za-z0-9_]+)$")


def parse_predicate(predicate: str) -> tuple[str, str]:
    m = _PREDICATE_RE.match(predicate)
    if m is None:
        raise ConfigurationError(f"unknown predicate {predicate!r}; expected 'in:<object>:<container>'")
    return m.group(1), m.group(2)


def predicate_holds(state: SimState, predicate: str) -> bool:
    obj, container = parse_predicate(predicate)
    entry = state.object_map().get(obj)
    return entry is not None and entry.container == container


class BlockWorld:
    """Simulator instance. Bind a task with reset(); step() is functional."""

    def __init__(self, grid_size: int = 6, embedding_dim: int = 32, reach: int = 1,
                 encoder_seed: int = ENCODER_SEED):
        self.grid_size = grid_size
        self.embedding_dim = embedding_dim
        self.reach = reach
        self.encoder_seed = encoder_seed
        self._task: Optional[Task] = None
        self._object_order: tuple[str, ...] = ()
        self._blocks: tuple[str, ...] = ()
        self._bins: tuple[str, ...] = ()
        self._projection: Optional[np.ndarray] = None
        self._snapshot_counter = 0

    # --- task binding and reset ------------------------------------------

    @property
    def task(self) -> Task:
        if self._task is None:
            raise ConfigurationError("world has no task bound; call reset() first")
        return self._task

    @property
    def object_order(self) -> tuple[str, ...]:
        return self._object_order

    def bind_task(self, task: Task) -> None:
        problems = task.violations()
        if problems:
            raise ConfigurationError("; ".join(problems))
        blocks, bins = set(), set()
        for g in task.subgoals:
            obj, container = parse_predicate(g.target_predicate)
            blocks.add(obj)
            bins.add(container)
        if blocks & bins:
            raise ConfigurationError(f"task {task.id}: objects used as both block and bin: {blocks & bins}")
        self._task = task
        self._blocks = tuple(sorted(blocks, key=_natural_key))
        self._bins = tuple(sorted(bins, key=_natural_key))
        self._object_order = self._blocks + self._bins
        self._projection = None  # raw dim may change with object count

    def reset(self, task: Task, seed: int) -> tuple[SimState, Observation]:
        self.bind_task(task)
        base = _stable_int("reset", task.id, seed)
        n = len(self._object_order)
        cells = [
            (x, y, z)
            for x in range(self.grid_size)
            for y in range(self.grid_size)
            for z in range(self.grid_size)
        ]
        for attempt in range(_PLACEMENT_ATTEMPTS):
            rng = np.random.default_rng(np.array([base % (2**63), attempt], dtype=np.uint64))
            picks = rng.choice(len(cells), size=n + 1, replace=False)
            positions = [cells[i] for i in picks]
            objects = tuple(
                ObjectState(id=oid, position=positions[i]) for i, oid in enumerate(self._object_order)
            )
            gripper = GripperState(position=positions[n], holding=None, open=True)
            state = SimState(
                objects=objects,
                gripper=gripper,
                completed_subgoals=frozenset(),
                timestep=0,
                rng_seed=_stable_int("stream", task.id, seed),
                rng_counter=0,
            )
            if self._placement_valid(state):
                return state, self.encode(state)
        raise ConfigurationError(
            f"task {task.id}, seed {seed}: no valid placement in {_PLACEMENT_ATTEMPTS} attempts"
        )

    def _placement_valid(self, state: SimState) -> bool:
        """Every object must have a free neighbor reachable from the gripper.

        Obstacles only disappear over time (blocks end up inside bins, whose
        cells already block), so initial reachability implies the scripted
        planner stays complete for the whole episode.
        """
        obstacles = {o.position for o in state.objects}
        if state.gripper.position in obstacles:
            return False
        reachable = self._flood(state.gripper.position, obstacles)
        for o in state.objects:
            if not any(nb in reachable for nb in self._free_neighbors(o.position, obstacles)):
                return False
        return True

    def _free_neighbors(self, cell: Cell, obstacles: set[Cell]) -> list[Cell]:
        out = []
        for d in _AXIS_DELTAS:
            nb = (cell[0] + d[0], cell[1] + d[1], cell[2] + d[2])
            if self.in_grid(nb) and nb not in obstacles:
                out.append(nb)
        return out

    def _flood(self, start: Cell, obstacles: set[Cell]) -> set[Cell]:
        seen = {start}
        frontier = [start]
        while frontier:
            nxt = []
            for cell in frontier:
                for d in _AXIS_DELTAS:
                    nb = (cell[0] + d[0], cell[1] + d[1], cell[2] + d[2])
                    if nb not in seen and self.in_grid(nb) and nb not in obstacles:
                        seen.add(nb)
                        nxt.append(nb)
            frontier = nxt
        return seen

    def in_grid(self, cell: Cell) -> bool:
        g = self.grid_size
        return 0 <= cell[0] < g and 0 <= cell[1] < g and 0 <= cell[2] < g

    # --- dynamics ----------------------------------------------------------

    def is_feasible(self, state: SimState, action: Action) -> tuple[bool, str]:
        """Ground-truth feasibility of an action; reason is '' when feasible."""
        kind = action.kind
        grip = state.gripper
        objs = state.object_map()
        if kind in (ActionKind.NOOP, ActionKind.CLOSE):
            return True, ""
        if kind in (ActionKind.MOVE, ActionKind.RECOVER_GOTO):
            d = action.delta
            if sorted(abs(c) for c in d) != [0, 0, 1]:
                return False, "invalid move delta"
            target = (grip.position[0] + d[0], grip.position[1] + d[1], grip.position[2] + d[2])
            if not self.in_grid(target):
                return False, "off grid"
            if target in state.blocking_cells():
                return False, "cell occupied"
            return True, ""
        if kind == ActionKind.GRASP:
            if grip.holding is not None:
                return False, "already holding"
            if not grip.open:
                return False, "gripper closed"
            obj = objs.get(action.target_object or "")
            if obj is None:
                return False, "no such object"
            if obj.id in self._bins:
                return False, "cannot grasp a container"
            if obj.container is not None:
                return False, "already placed"
            if _chebyshev(grip.position, obj.position) > self.reach:
                return False, "out of reach"
            return True, ""
        if kind == ActionKind.RELEASE:
            if grip.holding is None:
                return False, "not holding"
            if action.target_object is None:
                if any(o.position == grip.position and o.container is None and o.id != grip.holding
                       for o in state.objects):
                    return False, "cell occupied"
                return True, ""
            target = objs.get(action.target_object)
            if target is None:
                return False, "no such object"
            if target.id not in self._bins:
                return False, "release target must be a container"
            if _chebyshev(grip.position, target.position) > self.reach:
                return False, "out of reach"
            return True, ""
        if kind == ActionKind.OPEN:
            if grip.holding is not None:
                if any(o.position == grip.position and o.container is None and o.id != grip.holding
                       for o in state.objects):
                    return False, "cell occupied"
            return True, ""
        return False, f"unknown action kind {kind}"

    def step(self, state: SimState, action: Action) -> tuple[SimState, Observation, list[StepEvent]]:
        feasible, reason = self.is_feasible(state, action)
        t_next = state.timestep + 1
        if not feasible:
            new_state = replace(state, timestep=t_next)
            events = [
                StepEvent(
                    kind=EventKind.ACTION_FAILED,
                    timestep=t_next,
                    subgoal_id=None,
                    detail=f"{action.kind.value} target={action.target_object or '-'}: {reason}",
                )
            ]
            return new_state, self.encode(new_state), events

        new_state = replace(self._apply(state, action), timestep=t_next)
        events: list[StepEvent] = []
        completed = set(new_state.completed_subgoals)
        for g in self.task.subgoals:
            if g.id not in completed and predicate_holds(new_state, g.target_predicate):
                completed.add(g.id)
                events.append(
                    StepEvent(kind=EventKind.SUBGOAL_COMPLETED, timestep=t_next, subgoal_id=g.id)
                )
        if len(completed) != len(new_state.completed_subgoals):
            new_state = replace(new_state, completed_subgoals=frozenset(completed))
        return new_state, self.encode(new_state), events

    def _apply(self, state: SimState, action: Action) -> SimState:
        grip = state.gripper
        kind = action.kind
        if kind in (ActionKind.MOVE, ActionKind.RECOVER_GOTO):
            d = action.delta
            pos = (grip.position[0] + d[0], grip.position[1] + d[1], grip.position[2] + d[2])
            new_grip = replace(grip, position=pos)
            objects = state.objects
            if grip.holding is not None:
                objects = _set_object(objects, grip.holding, position=pos)
            return replace(state, gripper=new_grip, objects=objects)
        if kind == ActionKind.GRASP:
            oid = action.target_object
            objects = _set_object(state.objects, oid, position=grip.position)
            return replace(state, objects=objects, gripper=replace(grip, holding=oid, open=False))
        if kind == ActionKind.RELEASE:
            held = grip.holding
            if action.target_object is not None:
                bin_pos = state.object_map()[action.target_object].position
                objects = _set_object(state.objects, held, position=bin_pos, container=action.target_object)
            else:
                objects = _set_object(state.objects, held, position=grip.position, container=None)
            return replace(state, objects=objects, gripper=replace(grip, holding=None, open=True))
        if kind == ActionKind.OPEN:
            if grip.holding is not None:
                objects = _set_object(state.objects, grip.holding, position=grip.position, container=None)
                return replace(state, objects=objects, gripper=replace(grip, holding=None, open=True))
            return replace(state, gripper=replace(grip, open=True))
        if kind == ActionKind.CLOSE:
            return replace(state, gripper=replace(grip, open=False))
        return state  # noop

    # --- observation encoder ------------------------------------------------

    def raw_features(self, state: SimState) -> np.ndarray:
        g = float(self.grid_size)
        feats: list[float] = []
        objs = state.object_map()
        for oid in self._object_order:
            o = objs[oid]
            feats.extend(c / g for c in o.position)
            feats.append(1.0 if o.container is not None else 0.0)
            feats.append(1.0 if state.gripper.holding == o.id else 0.0)
        feats.extend(c / g for c in state.gripper.position)
        feats.append(1.0 if state.gripper.open else 0.0)
        holding_code = 0.0
        if state.gripper.holding is not None:
            holding_code = (self._object_order.index(state.gripper.holding) + 1) / MAX_OBJECT_CODE
        feats.append(holding_code)
        feats.append(1.0)  # bias so no state maps to the zero vector
        return np.asarray(feats, dtype=np.float64)

    def _projection_matrix(self, raw_dim: int) -> np.ndarray:
        if self._projection is None or self._projection.shape[1] != raw_dim:
            rng = np.random.default_rng(
                np.array([self.encoder_seed, raw_dim, self.embedding_dim], dtype=np.uint64)
            )
            self._projection = rng.standard_normal((self.embedding_dim, raw_dim)) / np.sqrt(
                self.embedding_dim
            )
        return self._projection

    def encode(self, state: SimState) -> Observation:
        raw = self.raw_features(state)
        proj = self._projection_matrix(raw.shape[0])
        emb = proj @ raw
        emb = emb / np.linalg.norm(emb)
        return Observation(
            embedding=emb.astype(np.float32),
            raw_features=raw.astype(np.float32),
            timestep=state.timestep,
        )

    def decode_raw(self, raw: np.ndarray) -> dict:
        """Invert raw_features back to structured state (mock-policy channel).

        The scripted policy is only entitled to the gripper block of this
        (proprioception); reading object entries would make it an oracle.
        """
        g = float(self.grid_size)
        out_objects = {}
        i = 0
        for oid in self._object_order:
            pos = tuple(int(round(float(raw[i + j]) * g)) for j in range(3))
            placed = float(raw[i + 3]) > 0.5
            held = float(raw[i + 4]) > 0.5
            out_objects[oid] = {"position": pos, "placed": placed, "held": held}
            i += 5
        gpos = tuple(int(round(float(raw[i + j]) * g)) for j in range(3))
        open_flag = float(raw[i + 3]) > 0.5
        holding_code = float(raw[i + 4])
        holding = None
        if holding_code > 0:
            holding = self._object_order[int(round(holding_code * MAX_OBJECT_CODE)) - 1]
        return {"objects": out_objects, "gripper": {"position": gpos, "open": open_flag, "holding": holding}}

    # --- snapshot / restore ---------------------------------------------------

    def state_json(self, state: SimState) -> str:
        doc = {
            "objects": [
                {"id": o.id, "position": list(o.position), "container": o.container}
                for o in state.objects
            ],
            "gripper": {
                "position": list(state.gripper.position),
                "holding": state.gripper.holding,
                "open": state.gripper.open,
            },
            "completed_subgoals": sorted(state.completed_subgoals),
            "timestep": state.timestep,
            "rng_seed": state.rng_seed,
            "rng_counter": state.rng_counter,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def state_hash(self, state: SimState) -> str:
        return hashlib.sha1(self.state_json(state).encode()).hexdigest()[:16]

    def snapshot(self, state: SimState) -> Snapshot:
        doc = {"v": SNAPSHOT_VERSION, "task": self.task.id, "state": self.state_json(state)}
        self._snapshot_counter += 1
        return Snapshot(
            payload=json.dumps(doc, sort_keys=True).encode(),
            id=self._snapshot_counter,
            timestep=state.timestep,
        )

    def restore(self, snap: Snapshot) -> SimState:
        try:
            doc = json.loads(snap.payload)
        except json.JSONDecodeError as exc:
            raise IncompatibleSnapshotError(f"snapshot payload not parseable: {exc}")
        if doc.get("v") != SNAPSHOT_VERSION:
            raise IncompatibleSnapshotError(
                f"snapshot version {doc.get('v')} incompatible with {SNAPSHOT_VERSION}"
            )
        if doc.get("task") != self.task.id:
            raise IncompatibleSnapshotError(
                f"snapshot for task {doc.get('task')!r}, world bound to {self.task.id!r}"
            )
        s = json.loads(doc["state"])
        return SimState(
            objects=tuple(
                ObjectState(id=o["id"], position=tuple(o["position"]), container=o["container"])
                for o in s["objects"]
            ),
            gripper=GripperState(
                position=tuple(s["gripper"]["position"]),
                holding=s["gripper"]["holding"],
                open=s["gripper"]["open"],
            ),
            completed_subgoals=frozenset(s["completed_subgoals"]),
            timestep=s["timestep"],
            rng_seed=s["rng_seed"],
            rng_counter=s["rng_counter"],
        )

    # --- perturbations ---------------------------------------------------------

    def inject_perturbation(self, state: SimState, spec: PerturbationSpec) -> tuple[SimState, StepEvent]:
        """Apply a silent disturbance. The event goes to the evaluation trace only."""
        if spec.kind == PerturbationKind.GRIPPER_FLIP:
            grip = state.gripper
            if grip.holding is not None:
                objects = _set_object(state.objects, grip.holding, position=grip.position, container=None)
                new_state = replace(state, objects=objects, gripper=replace(grip, holding=None, open=True))
                detail = f"gripper_flip dropped {grip.holding} at {grip.position}"
            else:
                new_state = replace(state, gripper=replace(grip, open=not grip.open))
                detail = f"gripper_flip open={not grip.open}"
            return new_state, StepEvent(
                kind=EventKind.PERTURBATION_INJECTED, timestep=state.timestep, detail=detail
            )

        candidates = [
            o.id
            for o in state.objects
            if o.id in self._blocks and o.container is None and o.id != state.gripper.holding
        ]
        u, state = next_uniform(state)
        if not candidates:
            return state, StepEvent(
                kind=EventKind.PERTURBATION_INJECTED,
                timestep=state.timestep,
                detail="object_displacement: no displaceable object",
            )
        target = candidates[min(int(u * len(candidates)), len(candidates) - 1)]
        pos = state.object_map()[target].position
        raw = tuple(pos[i] + spec.displacement[i] for i in range(3))
        clamped = tuple(min(max(c, 0), self.grid_size - 1) for c in raw)
        objects = _set_object(state.objects, target, position=clamped)
        new_state = replace(state, objects=objects)
        detail = f"object_displacement {target} {pos}->{clamped}"
        if clamped != raw:
            detail += " (clamped to grid edge)"
        return new_state, StepEvent(
            kind=EventKind.PERTURBATION_INJECTED, timestep=state.timestep, detail=detail
        )


def sample_perturbation_spec(task: Task, rng: np.random.Generator) -> PerturbationSpec:
    """Draw a disturbance: boundary uniform over {2..K-1}, kind 50/50."""
    k = task.k
    if k < 3:
        raise ConfigurationError(f"task {task.id}: K >= 3 required for a perturbation boundary")
    k_star = int(rng.integers(2, k))  # uniform over {2..K-1}
    if rng.random() < 0.5:
        kind = PerturbationKind.OBJECT_DISPLACEMENT
        displacement = tuple(int(d) for d in rng.integers(-1, 2, size=3))
    else:
        kind = PerturbationKind.GRIPPER_FLIP
        displacement = (0, 0, 0)
    return PerturbationSpec(k_star=k_star, kind=kind, displacement=displacement)


def _set_object(objects: tuple[ObjectState, ...], oid: str, position=None, container="__keep__"):
    out = []
    for o in objects:
        if o.id == oid:
            o = replace(
                o,
                position=o.position if position is None else tuple(position),
                container=o.container if container == "__keep__" else container,
            )
        out.append(o)
    return tuple(out)


def _chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2]))


_AXIS_DELTAS = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


# --- task generation -----------------------------------------------------------

STEPS_PER_SUBGOAL = 26
STEPS_BASE = 14
N_BINS = 2


def step_budget(k: int) -> int:
    return STEPS_PER_SUBGOAL * k + STEPS_BASE


def make_task_suite(n_tasks: int, subgoal_range: tuple[int, int], seed: int) -> list[Task]:
    """Deterministic task suite; subgoal counts drawn uniformly from the range."""
    lo, hi = subgoal_range
    if not 3 <= lo <= hi:
        raise ConfigurationError(f"subgoal_range must satisfy 3 <= min <= max, got {subgoal_range}")
    rng = np.random.default_rng(np.array([_stable_int("suite", seed) % (2**63)], dtype=np.uint64))
    tasks = []
    for i in range(n_tasks):
        k = int(rng.integers(lo, hi + 1))
        subgoals = []
        for j in range(k):
            block = f"block_{j}"
            bin_id = f"bin_{j % N_BINS}"
            subgoals.append(
                Subgoal(
                    id=j + 1,
                    description=f"place {block} into {bin_id}",
                    target_predicate=f"in:{block}:{bin_id}",
                )
            )
        instruction = "stock the bins: " + ", then ".join(g.description for g in subgoals)
        tasks.append(
            Task(
                id=f"task-{seed}-{i:03d}",
                instruction=instruction,
                subgoals=tuple(subgoals),
                max_steps=step_budget(k),
            )
        )
    return tasks


def default_suite(seed: int = 101) -> list[Task]:
    return make_task_suite(10, (5, 6), seed)


def training_suite(seed: int = 202) -> list[Task]:
    """Rollout-data tasks, disjoint from the evaluation suite by seed."""
    return make_task_suite(10, (5, 6), seed)
