import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from annealboost.param_space import (
    FLOAT, INTEGER, ParamSpace, ParamSpec, Solution, default_space, define_space,
    perturb, sample_initial, solution_key, validate_solution,
)


def test_default_space_bounds():
    space = default_space()
    assert len(space) == 8
    assert space.names == ["n_estimators", "max_depth", "max_delta_step", "n_parallel_trees",
                           "learning_rate", "l1", "l2", "gamma"]
    by_name = {s.name: s for s in space.specs}
    for name in ("n_estimators", "max_depth", "max_delta_step", "n_parallel_trees"):
        assert (by_name[name].kind, by_name[name].lower, by_name[name].upper) == (INTEGER, 1, 50)
    for name in ("learning_rate", "l1", "l2"):
        assert (by_name[name].kind, by_name[name].upper) == (FLOAT, 1)
        assert by_name[name].open_lower
    assert by_name["gamma"].upper == 50


def test_minimal_and_degenerate_specs():
    assert len(define_space([ParamSpec("x", FLOAT, 0, 1)])) == 1
    with pytest.raises(ValueError):
        ParamSpec("x", FLOAT, 3, 3)
    with pytest.raises(ValueError):
        ParamSpec("k", INTEGER, 1.5, 4)
    with pytest.raises(ValueError):
        define_space([ParamSpec("x", FLOAT, 0, 1), ParamSpec("x", FLOAT, 0, 2)])
    with pytest.raises(ValueError):
        define_space([])


def test_space_round_trip():
    space = default_space()
    assert ParamSpace.from_list(space.to_list()) == space


def test_integer_sampling_covers_range():
    space = define_space([ParamSpec("k", INTEGER, 1, 50)])
    rng = np.random.default_rng(0)
    seen = [sample_initial(space, rng).values[0] for _ in range(10000)]
    assert all(isinstance(v, int) and 1 <= v <= 50 for v in seen)
    assert set(seen) == set(range(1, 51))


def test_sampling_is_deterministic():
    space = default_space()
    a = sample_initial(space, np.random.default_rng(7))
    b = sample_initial(space, np.random.default_rng(7))
    assert a == b


def test_perturb_clamps_integer_at_lower_bound():
    space = define_space([ParamSpec("k", INTEGER, 1, 50)])
    results = {perturb(space, Solution((1,)), np.random.default_rng(s)).values[0] for s in range(50)}
    assert results == {1, 2}


def test_perturb_changes_at_most_one_coordinate():
    space = default_space()
    rng = np.random.default_rng(3)
    cur = sample_initial(space, rng)
    for _ in range(1000):
        new = perturb(space, cur, rng)
        assert sum(a != b for a, b in zip(cur.values, new.values)) <= 1
        validate_solution(space, new)
        cur = new


def test_float_perturb_stays_in_range():
    space = define_space([ParamSpec("x", FLOAT, 0, 1)])
    rng = np.random.default_rng(1)
    for _ in range(200):
        v = perturb(space, Solution((0.5,)), rng).values[0]
        assert 0 <= v <= 1 and v != 0.5


def test_open_lower_bound_excluded():
    space = default_space()
    idx = space.names.index("learning_rate")
    vals = list(sample_initial(space, np.random.default_rng(0)).values)
    vals[idx] = 0.0
    with pytest.raises(ValueError):
        validate_solution(space, Solution(tuple(vals)))
    clamped = space.specs[idx].clamp(-3.0)
    assert clamped > 0


def test_solution_key_quantisation():
    space = define_space([ParamSpec("x", FLOAT, 0, 1)])
    assert solution_key(space, Solution((0.1234561,))) == solution_key(space, Solution((0.1234564,)))
    assert solution_key(space, Solution((0.123456,))) != solution_key(space, Solution((0.123457,)))
    ints = define_space([ParamSpec("a", INTEGER, 0, 10), ParamSpec("b", INTEGER, 0, 10)])
    assert solution_key(ints, Solution((3, 7))) == solution_key(ints, Solution((3, 7)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sample_and_perturb_respect_bounds(seed):
    space = default_space()
    rng = np.random.default_rng(seed)
    s = sample_initial(space, rng)
    validate_solution(space, s)
    for _ in range(10):
        s = perturb(space, s, rng)
        validate_solution(space, s)
        for spec, v in zip(space.specs, s.values):
            if spec.kind == INTEGER:
                assert float(v).is_integer()
            assert math.isfinite(v)


@given(st.floats(0, 1), st.floats(0, 1))
def test_key_equality_follows_quantised_values(a, b):
    space = define_space([ParamSpec("x", FLOAT, 0, 1)])
    same = round(a, 6) == round(b, 6)
    assert (solution_key(space, Solution((a,))) == solution_key(space, Solution((b,)))) == same
