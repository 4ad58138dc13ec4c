"""Knowledge base of procedural tasks and their ordered step descriptions.

The knowledge base is the label space for distant supervision: every step
of every task gets a stable global id, assigned in (task_id, step_index)
order. Interchange format is JSONL, one task per line:

    {"task_id": 0, "title": "Install an air conditioner", "steps": ["...", ...]}

``task_id`` is optional on input (line order is used when absent) but is
always written back, so a save/load round trip preserves ids exactly.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


class KnowledgeBaseError(ValueError):
    """Malformed knowledge-base input."""


@dataclass(frozen=True)
class StepDescription:
    """One step of one task, addressable by (task_id, step_index) or global_id."""

    task_id: int
    step_index: int
    global_id: int
    text: str


@dataclass(frozen=True)
class Task:
    task_id: int
    title: str
    steps: tuple[StepDescription, ...]


class KnowledgeBase:
    """Ordered step descriptions grouped by task.

    Global ids enumerate steps in (task_id ascending, step_index ascending)
    order and form a bijection onto ``range(S)``.
    """

    def __init__(self, tasks: Sequence[Task]):
        if not tasks:
            raise KnowledgeBaseError("knowledge base needs at least one task")
        self.tasks: tuple[Task, ...] = tuple(sorted(tasks, key=lambda t: t.task_id))
        seen = set()
        for task in self.tasks:
            if task.task_id in seen:
                raise KnowledgeBaseError(f"duplicate task_id {task.task_id}")
            seen.add(task.task_id)
            if not task.steps:
                raise KnowledgeBaseError(f"task {task.task_id} has no steps")
        self._steps: tuple[StepDescription, ...] = tuple(
            step for task in self.tasks for step in task.steps
        )
        for gid, step in enumerate(self._steps):
            if step.global_id != gid:
                raise KnowledgeBaseError(
                    f"global_id {step.global_id} out of order (expected {gid})"
                )
        self._by_task = {task.task_id: task for task in self.tasks}

    @property
    def num_steps(self) -> int:
        return len(self._steps)

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def step(self, global_id: int) -> StepDescription:
        return self._steps[global_id]

    def steps(self) -> tuple[StepDescription, ...]:
        """All steps in global-id order."""
        return self._steps

    def steps_of_task(self, task_id: int) -> tuple[StepDescription, ...]:
        try:
            return self._by_task[task_id].steps
        except KeyError:
            raise KnowledgeBaseError(f"unknown task_id {task_id}") from None

    def has_task(self, task_id: int) -> bool:
        return task_id in self._by_task

    def successor(self, global_id: int) -> StepDescription | None:
        """Next step of the same task, or None if this step is the task's last."""
        step = self._steps[global_id]
        task = self._by_task[step.task_id]
        if step.step_index + 1 < len(task.steps):
            return task.steps[step.step_index + 1]
        return None

    @classmethod
    def from_records(cls, records: Iterable[tuple[int, str, Sequence[str]]]) -> "KnowledgeBase":
        """Build from (task_id, title, step_texts) triples.

        Tasks are sorted by task_id before global ids are assigned, so id
        assignment does not depend on iteration order.
        """
        ordered = sorted(records, key=lambda r: r[0])
        tasks = []
        gid = 0
        for task_id, title, texts in ordered:
            steps = []
            for idx, text in enumerate(texts):
                steps.append(StepDescription(task_id, idx, gid, text))
                gid += 1
            tasks.append(Task(task_id, title, tuple(steps)))
        return cls(tasks)


def load_knowledge_base(path: str | Path, fmt: str = "jsonl") -> KnowledgeBase:
    """Load and validate a knowledge base.

    Records missing a title or a non-empty steps list are hard errors naming
    the offending line. A record whose steps include an empty (after trim)
    string is rejected with a warning rather than aborting the load.
    """
    if fmt != "jsonl":
        raise KnowledgeBaseError(f"unsupported knowledge-base format: {fmt}")
    path = Path(path)
    records: list[tuple[int, str, list[str]]] = []
    rejected = 0
    auto_task_id = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KnowledgeBaseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise KnowledgeBaseError(f"{path}:{lineno}: record must be an object")
            title = rec.get("title")
            steps = rec.get("steps")
            if not isinstance(title, str) or not title.strip():
                raise KnowledgeBaseError(f"{path}:{lineno}: missing or empty title")
            if not isinstance(steps, list) or not steps:
                raise KnowledgeBaseError(f"{path}:{lineno}: steps must be a non-empty list")
            if not all(isinstance(s, str) for s in steps):
                raise KnowledgeBaseError(f"{path}:{lineno}: steps must all be strings")
            trimmed = [s.strip() for s in steps]
            if any(not s for s in trimmed):
                rejected += 1
                logger.warning("%s:%d: rejecting record with empty step text", path, lineno)
                continue
            task_id = rec.get("task_id")
            if task_id is None:
                task_id = auto_task_id
            elif not isinstance(task_id, int) or task_id < 0:
                raise KnowledgeBaseError(f"{path}:{lineno}: task_id must be a non-negative int")
            auto_task_id = max(auto_task_id, task_id) + 1
            records.append((task_id, title.strip(), trimmed))
    if rejected:
        logger.warning("%s: rejected %d record(s) with empty step text", path, rejected)
    if not records:
        raise KnowledgeBaseError(f"{path}: no usable records")
    task_ids = [r[0] for r in records]
    if len(set(task_ids)) != len(task_ids):
        dupe = next(t for t in task_ids if task_ids.count(t) > 1)
        raise KnowledgeBaseError(f"{path}: duplicate task_id {dupe}")
    return KnowledgeBase.from_records(records)


def save_knowledge_base(kb: KnowledgeBase, path: str | Path) -> None:
    """Write canonical JSONL; reloading reproduces global ids and texts exactly."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for task in kb.tasks:
            rec = {
                "task_id": task.task_id,
                "title": task.title,
                "steps": [s.text for s in task.steps],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
