"""Task-suite persistence: a directory with ``suite.json`` and one
``task_NNNN.json`` per task. Explanations persist as their canonical
strings and are re-parsed on load, so files stay human-readable."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError
from .explanations import ComplexityDescriptor, parse_explanation
from .taskgen import (
    CategoricalDomain,
    Example,
    ExampleCounts,
    IntDomain,
    Task,
    TaskSuite,
    _domain_from_json,
)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _example_to_json(example: Example) -> dict:
    return {"attributes": example.attributes, "label": example.label}


def _example_from_json(obj, schema) -> Example:
    order = [a for a, _ in schema]
    attributes = {a: obj["attributes"][a] for a in order}
    return Example(attributes=attributes, label=obj["label"])


def task_to_json(task: Task) -> dict:
    return {
        "name": task.name,
        "seed": task.generator_seed,
        "complexity": task.complexity.to_json(),
        "schema": [[a, d.to_json()] for a, d in task.schema],
        "labels": list(task.labels),
        "explanations": [exp.source_text for exp in task.explanations],
        "truth": [{"quantifier": q, "probability": p} for q, p in task.truth],
        "nesting_cap": task.nesting_cap,
        "train": [_example_to_json(e) for e in task.train],
        "validation": [_example_to_json(e) for e in task.validation],
        "test": [_example_to_json(e) for e in task.test],
    }


def task_from_json(obj) -> Task:
    schema = tuple((a, _domain_from_json(d)) for a, d in obj["schema"])
    labels = tuple(obj["labels"])
    explanations = tuple(
        parse_explanation(text, set(labels)) for text in obj["explanations"]
    )
    return Task(
        name=obj["name"],
        schema=schema,
        labels=labels,
        explanations=explanations,
        train=tuple(_example_from_json(e, schema) for e in obj["train"]),
        validation=tuple(_example_from_json(e, schema) for e in obj["validation"]),
        test=tuple(_example_from_json(e, schema) for e in obj["test"]),
        complexity=ComplexityDescriptor.from_json(obj["complexity"]),
        generator_seed=int(obj["seed"]),
        truth=tuple((t["quantifier"], float(t["probability"])) for t in obj["truth"]),
        nesting_cap=int(obj["nesting_cap"]),
    )


def suite_manifest(suite: TaskSuite) -> dict:
    return {
        "format": "quantlearn-suite/1",
        "seed": suite.seed,
        "counts": {
            "train": suite.counts.train,
            "validation": suite.counts.validation,
            "test": suite.counts.test,
        },
        "multiclass_labels": suite.multiclass_labels,
        "truth_probabilities": suite.truth_probabilities,
        "tasks": [
            {
                "id": task.name,
                "file": f"{task.name}.json",
                "seed": task.generator_seed,
                "complexity": task.complexity.to_json(),
            }
            for task in suite.tasks
        ],
        "seen": list(suite.seen),
        "unseen": list(suite.unseen),
        "split": {"seed": suite.split_seed, "unseen_fraction": suite.unseen_fraction},
    }


def suite_hash(suite: TaskSuite) -> str:
    """Stable identity of a suite, from its canonical manifest bytes."""
    payload = json.dumps(suite_manifest(suite), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def save_suite(suite: TaskSuite, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _dump_json(directory / "suite.json", suite_manifest(suite))
    for task in suite.tasks:
        _dump_json(directory / f"{task.name}.json", task_to_json(task))


def load_suite(directory: str | Path) -> TaskSuite:
    directory = Path(directory)
    manifest_path = directory / "suite.json"
    if not manifest_path.exists():
        raise ConfigError(f"no suite.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "quantlearn-suite/1":
        raise ConfigError(f"unrecognized suite format in {manifest_path}")
    tasks = []
    for entry in manifest["tasks"]:
        task_path = directory / entry["file"]
        if not task_path.exists():
            raise ConfigError(f"missing task file {task_path}")
        tasks.append(task_from_json(json.loads(task_path.read_text())))
    counts = ExampleCounts(
        train=manifest["counts"]["train"],
        validation=manifest["counts"]["validation"],
        test=manifest["counts"]["test"],
    )
    split = manifest.get("split", {})
    return TaskSuite(
        tasks=tuple(tasks),
        seen=tuple(manifest["seen"]),
        unseen=tuple(manifest["unseen"]),
        seed=int(manifest["seed"]),
        counts=counts,
        multiclass_labels=int(manifest["multiclass_labels"]),
        truth_probabilities={
            str(k): float(v) for k, v in manifest["truth_probabilities"].items()
        },
        split_seed=split.get("seed"),
        unseen_fraction=split.get("unseen_fraction"),
    )
