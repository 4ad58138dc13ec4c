import json

import pytest

from stepweld.corpus import KnowledgeBase


@pytest.fixture
def small_kb() -> KnowledgeBase:
    return KnowledgeBase.from_records(
        [
            (0, "change a tire", ["loosen the lug nuts", "jack up the car", "swap the wheel"]),
            (1, "brew coffee", ["grind the beans", "pour hot water"]),
        ]
    )


@pytest.fixture
def kb_jsonl(tmp_path, small_kb):
    path = tmp_path / "kb.jsonl"
    lines = []
    for task in small_kb.tasks:
        lines.append(
            json.dumps(
                {"task_id": task.task_id, "title": task.title, "steps": [s.text for s in task.steps]}
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
