"""Natural-language task corpus: command templates x arena locations.

Every task reads "Agent, <command with location>" and grounds to a 2-D
goal coordinate.  Edges map to one axis at +-k with the other 0, corners
to (+-k, +-k).  The arena frame is x = east, y = north, so "left" is -x
and "top" is +y.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COMMAND_TEMPLATES: tuple[str, ...] = (
    "navigate to the {}",
    "pathfind to the {}",
    "find your way to the {}",
    "move to the {}",
    "your goal is the {}",
    "make your way to the {}",
    "head towards the {}",
    "travel to the {}",
    "reach the {}",
    "proceed to the {}",
    "go to the {}",
    "the {} is your target",
)

LOCATIONS: tuple[str, ...] = (
    "west edge",
    "east edge",
    "south edge",
    "north edge",
    "left edge",
    "right edge",
    "bottom edge",
    "top edge",
    "lower edge",
    "upper edge",
    "south west corner",
    "west south corner",
    "south east corner",
    "east south corner",
    "north west corner",
    "west north corner",
    "north east corner",
    "SW corner",
    "SE corner",
    "NW corner",
    "NE corner",
    "bottom left corner",
    "left bottom corner",
    "bottom right corner",
    "right bottom corner",
    "top left corner",
    "left top corner",
    "top right corner",
    "right top corner",
    "lower left corner",
    "left lower corner",
    "lower right corner",
    "right lower corner",
    "upper left corner",
    "left upper corner",
    "upper right corner",
    "right upper corner",
)

DEFAULT_K = 1.1

# word -> (axis, sign); x = east, y = north
_AXIS_WORDS: dict[str, tuple[int, int]] = {
    "east": (0, +1), "right": (0, +1),
    "west": (0, -1), "left": (0, -1),
    "north": (1, +1), "top": (1, +1), "upper": (1, +1),
    "south": (1, -1), "bottom": (1, -1), "lower": (1, -1),
}
_ABBREVIATIONS: dict[str, tuple[int, int]] = {
    "NE": (+1, +1), "NW": (-1, +1), "SE": (+1, -1), "SW": (-1, -1),
}


class UnknownLocationError(ValueError):
    def __init__(self, phrase: str):
        super().__init__(f"unknown location phrase: {phrase!r}")
        self.phrase = phrase


def goal_coordinates(location: str, k: float = DEFAULT_K) -> np.ndarray:
    """Ground a location phrase to its goal coordinate.

    Accepts "<axis-word> edge", "<word> <word> corner" with the two words
    naming perpendicular axes in either order, and the four two-letter
    corner abbreviations.
    """
    words = location.split()
    if len(words) >= 2 and words[-1] == "edge" and len(words) == 2:
        if words[0] in _AXIS_WORDS:
            axis, sign = _AXIS_WORDS[words[0]]
            goal = np.zeros(2)
            goal[axis] = sign * k
            return goal
    elif len(words) == 2 and words[-1] == "corner" and words[0] in _ABBREVIATIONS:
        sx, sy = _ABBREVIATIONS[words[0]]
        return np.array([sx * k, sy * k])
    elif len(words) == 3 and words[-1] == "corner":
        a, b = words[0], words[1]
        if a in _AXIS_WORDS and b in _AXIS_WORDS:
            (ax_a, sign_a), (ax_b, sign_b) = _AXIS_WORDS[a], _AXIS_WORDS[b]
            if ax_a != ax_b:
                goal = np.zeros(2)
                goal[ax_a] = sign_a * k
                goal[ax_b] = sign_b * k
                return goal
    raise UnknownLocationError(location)


@dataclass(frozen=True)
class TaskSpec:
    """One natural-language task and its ground-truth goal."""

    text: str
    goal: tuple[float, float]
    template_id: int
    location_id: int

    @property
    def goal_array(self) -> np.ndarray:
        return np.array(self.goal)


def generate_corpus(templates: tuple[str, ...] = COMMAND_TEMPLATES,
                    locations: tuple[str, ...] = LOCATIONS,
                    k: float = DEFAULT_K) -> list[TaskSpec]:
    """All template x location tasks in template-major order."""
    for t in templates:
        if t.count("{}") != 1:
            raise ValueError(f"template must contain exactly one placeholder: {t!r}")
    goals = [goal_coordinates(loc, k) for loc in locations]  # raises on unknown phrase
    tasks = []
    for ti, template in enumerate(templates):
        for li, location in enumerate(locations):
            tasks.append(TaskSpec(
                text="Agent, " + template.format(location),
                goal=(float(goals[li][0]), float(goals[li][1])),
                template_id=ti,
                location_id=li,
            ))
    return tasks


@dataclass(frozen=True)
class HoldoutRule:
    """How to carve the test set out of the corpus.

    With no exclusions, ``test_size`` tasks are sampled at random and
    everything else trains.  With ``exclude_templates`` and/or
    ``exclude_locations``, every task containing an excluded phrase is
    dropped from the train side and the test set is sampled from those
    dropped tasks only, so held-out phrasing is never seen in training.
    ``explicit_test_texts`` pins the test set verbatim instead.
    """

    test_size: int = 8
    exclude_templates: tuple[int, ...] = ()
    exclude_locations: tuple[int, ...] = ()
    explicit_test_texts: tuple[str, ...] = ()

    def __post_init__(self):
        if self.test_size < 1:
            raise ValueError("test_size must be >= 1")


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[TaskSpec, ...]
    test: tuple[TaskSpec, ...]

    def __post_init__(self):
        overlap = {t.text for t in self.train} & {t.text for t in self.test}
        if overlap:
            raise ValueError(f"train/test overlap on {sorted(overlap)[:3]}")


def split_corpus(tasks: list[TaskSpec], holdout: HoldoutRule = HoldoutRule(),
                 seed: int = 0) -> CorpusSplit:
    if holdout.explicit_test_texts:
        wanted = set(holdout.explicit_test_texts)
        test = [t for t in tasks if t.text in wanted]
        missing = wanted - {t.text for t in test}
        if missing:
            raise ValueError(f"explicit test texts not in corpus: {sorted(missing)[:3]}")
        train = [t for t in tasks if t.text not in wanted]
        return CorpusSplit(tuple(train), tuple(test))

    excluded = [t for t in tasks
                if t.template_id in holdout.exclude_templates
                or t.location_id in holdout.exclude_locations]
    pool = excluded if excluded else list(tasks)
    if holdout.test_size > len(pool):
        raise ValueError(
            f"holdout of {holdout.test_size} exceeds the {len(pool)}-task pool")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=holdout.test_size, replace=False)
    test_texts = {pool[i].text for i in picked}
    dropped_texts = {t.text for t in excluded}
    train = [t for t in tasks if t.text not in test_texts and t.text not in dropped_texts]
    test = [t for t in tasks if t.text in test_texts]
    if not train:
        raise ValueError("holdout leaves no training tasks")
    return CorpusSplit(tuple(train), tuple(test))


# ---------------------------------------------------------------------------
# serialization: line-delimited {text, goal_x, goal_y, template_id, location_id}

def save_corpus(path: str | Path, tasks: list[TaskSpec]) -> None:
    with open(path, "w") as f:
        for t in tasks:
            f.write(json.dumps({
                "text": t.text, "goal_x": t.goal[0], "goal_y": t.goal[1],
                "template_id": t.template_id, "location_id": t.location_id,
            }) + "\n")


def load_corpus(path: str | Path) -> list[TaskSpec]:
    tasks = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            tasks.append(TaskSpec(
                text=rec["text"], goal=(rec["goal_x"], rec["goal_y"]),
                template_id=rec["template_id"], location_id=rec["location_id"],
            ))
    return tasks


def find_location(text: str) -> str | None:
    """Longest known location phrase contained in free text, if any."""
    hits = [loc for loc in LOCATIONS if loc in text]
    return max(hits, key=len) if hits else None
