"""Corpus generation, goal grounding, and split rules.

The goal-table oracle below is hand-built, one literal entry per shipped
location, independent of the word-combination logic in the package.
"""

import numpy as np
import pytest

from marlnav import corpus as C

K = 1.1

# independent oracle: every location phrase -> (x east, y north) signs
GOAL_TABLE = {
    "west edge": (-1, 0), "east edge": (1, 0),
    "south edge": (0, -1), "north edge": (0, 1),
    "left edge": (-1, 0), "right edge": (1, 0),
    "bottom edge": (0, -1), "top edge": (0, 1),
    "lower edge": (0, -1), "upper edge": (0, 1),
    "south west corner": (-1, -1), "west south corner": (-1, -1),
    "south east corner": (1, -1), "east south corner": (1, -1),
    "north west corner": (-1, 1), "west north corner": (-1, 1),
    "north east corner": (1, 1),
    "SW corner": (-1, -1), "SE corner": (1, -1),
    "NW corner": (-1, 1), "NE corner": (1, 1),
    "bottom left corner": (-1, -1), "left bottom corner": (-1, -1),
    "bottom right corner": (1, -1), "right bottom corner": (1, -1),
    "top left corner": (-1, 1), "left top corner": (-1, 1),
    "top right corner": (1, 1), "right top corner": (1, 1),
    "lower left corner": (-1, -1), "left lower corner": (-1, -1),
    "lower right corner": (1, -1), "right lower corner": (1, -1),
    "upper left corner": (-1, 1), "left upper corner": (-1, 1),
    "upper right corner": (1, 1), "right upper corner": (1, 1),
}

SYNONYM_GROUPS = [
    ("west edge", "left edge"),
    ("east edge", "right edge"),
    ("south edge", "bottom edge", "lower edge"),
    ("north edge", "top edge", "upper edge"),
    ("south west corner", "west south corner", "SW corner", "bottom left corner",
     "left bottom corner", "lower left corner", "left lower corner"),
    ("south east corner", "east south corner", "SE corner", "bottom right corner",
     "right bottom corner", "lower right corner", "right lower corner"),
    ("north west corner", "west north corner", "NW corner", "top left corner",
     "left top corner", "upper left corner", "left upper corner"),
    ("north east corner", "NE corner", "top right corner", "right top corner",
     "upper right corner", "right upper corner"),
]


def test_location_list_is_exactly_the_goal_table():
    assert set(C.LOCATIONS) == set(GOAL_TABLE)
    assert len(C.LOCATIONS) == 37
    assert len(C.COMMAND_TEMPLATES) == 12


@pytest.mark.parametrize("location", sorted(GOAL_TABLE))
def test_goal_coordinates_against_hand_table(location):
    sx, sy = GOAL_TABLE[location]
    np.testing.assert_allclose(C.goal_coordinates(location, K), [sx * K, sy * K])


@pytest.mark.parametrize("group", SYNONYM_GROUPS)
def test_synonym_groups_map_identically(group):
    coords = [tuple(C.goal_coordinates(loc, K)) for loc in group]
    assert len(set(coords)) == 1


def test_axis_convention():
    assert C.goal_coordinates("north edge", K)[1] == K       # north == +y
    assert C.goal_coordinates("east edge", K)[0] == K        # east == +x
    np.testing.assert_array_equal(C.goal_coordinates("top edge", K),
                                  C.goal_coordinates("north edge", K))
    np.testing.assert_array_equal(C.goal_coordinates("left edge", K),
                                  C.goal_coordinates("west edge", K))


def test_goal_coordinates_rejects_unknown_phrases():
    for phrase in ("", "the moon", "north corner", "west north edge"):
        with pytest.raises(C.UnknownLocationError) as exc:
            C.goal_coordinates(phrase, K)
        assert repr(phrase)[1:-1] in str(exc.value) or phrase in str(exc.value)


def test_generate_corpus_size_and_order():
    tasks = C.generate_corpus(k=K)
    assert len(tasks) == 12 * 37
    # template-major ordering
    assert [t.template_id for t in tasks[:37]] == [0] * 37
    assert [t.location_id for t in tasks[:3]] == [0, 1, 2]
    assert all(t.text.startswith("Agent, ") for t in tasks)


def test_generate_corpus_examples():
    tasks = C.generate_corpus(templates=("go to the {}",),
                              locations=("north east corner",), k=1.1)
    assert tasks[0].text == "Agent, go to the north east corner"
    assert tasks[0].goal == (1.1, 1.1)
    west = C.generate_corpus(templates=("reach the {}",),
                             locations=("west edge",), k=0.7)[0]
    assert west.goal == (-0.7, 0.0)


def test_generate_corpus_determinism():
    a = C.generate_corpus(k=K)
    b = C.generate_corpus(k=K)
    assert a == b


def test_generate_corpus_validates_templates_and_locations():
    with pytest.raises(ValueError, match="placeholder"):
        C.generate_corpus(templates=("no placeholder here",), locations=("west edge",))
    with pytest.raises(ValueError, match="placeholder"):
        C.generate_corpus(templates=("{} and {}",), locations=("west edge",))
    with pytest.raises(C.UnknownLocationError, match="atlantis"):
        C.generate_corpus(templates=("go to the {}",), locations=("atlantis",))


def test_split_default_holds_out_eight():
    tasks = C.generate_corpus(k=K)
    split = C.split_corpus(tasks, seed=1)
    assert len(split.test) == 8
    assert len(split.train) == len(tasks) - 8
    assert {t.text for t in split.train}.isdisjoint({t.text for t in split.test})


def test_split_reproducible_and_seed_sensitive():
    tasks = C.generate_corpus(k=K)
    s1 = C.split_corpus(tasks, seed=3)
    s2 = C.split_corpus(tasks, seed=3)
    s3 = C.split_corpus(tasks, seed=4)
    assert [t.text for t in s1.test] == [t.text for t in s2.test]
    assert [t.text for t in s1.test] != [t.text for t in s3.test]


def test_split_phrase_holdout_reproduces_published_counts():
    # holding out one template and one location excludes 48 tasks from
    # training (12 + 37 - 1), leaving 396; the 8 test tasks come from the
    # excluded pool only
    tasks = C.generate_corpus(k=K)
    rule = C.HoldoutRule(test_size=8, exclude_templates=(10,), exclude_locations=(16,))
    split = C.split_corpus(tasks, rule, seed=0)
    assert len(split.train) == 396
    assert len(split.test) == 8
    for t in split.train:
        assert t.template_id != 10 and t.location_id != 16
    for t in split.test:
        assert t.template_id == 10 or t.location_id == 16


def test_split_explicit_texts():
    tasks = C.generate_corpus(k=K)
    wanted = (tasks[5].text, tasks[100].text)
    split = C.split_corpus(tasks, C.HoldoutRule(explicit_test_texts=wanted))
    assert {t.text for t in split.test} == set(wanted)
    with pytest.raises(ValueError, match="not in corpus"):
        C.split_corpus(tasks, C.HoldoutRule(explicit_test_texts=("Agent, fly",)))


def test_split_rejects_oversized_holdout():
    tasks = C.generate_corpus(templates=("go to the {}",),
                              locations=("west edge", "east edge"))
    with pytest.raises(ValueError, match="exceeds"):
        C.split_corpus(tasks, C.HoldoutRule(test_size=3))
    with pytest.raises(ValueError):
        C.HoldoutRule(test_size=0)


def test_corpus_round_trip(tmp_path):
    tasks = C.generate_corpus(k=K)
    path = tmp_path / "corpus.jsonl"
    C.save_corpus(path, tasks)
    assert C.load_corpus(path) == tasks


def test_find_location_longest_match():
    assert C.find_location("Agent, go to the north east corner") == "north east corner"
    assert C.find_location("please reach the upper edge now") == "upper edge"
    assert C.find_location("no location here") is None
