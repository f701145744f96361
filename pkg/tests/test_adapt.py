import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynbc.adapt import (
    AdaptConfig, AdaptState, ConvergenceTable, adapt_step, adaptive_loop, doerfler_mark, fit_slope,
    refine_meshes,
)
from dynbc.assembly import ProblemData, constant
from dynbc.mesh import (
    check_conformity, check_gamma, create_lshape, create_unit_square, trace_gamma,
)
from dynbc.spaces import SchemeConfig, build_spaces
from oracles import oracle_doerfler


def test_doerfler_example():
    T, I, done = doerfler_mark([9, 4], [1, 1, 1], 0.75)
    assert list(T) == [0] and len(I) == 0 and not done
    assert oracle_doerfler([9, 4, 1, 1, 1], 0.75) == 1


def test_doerfler_theta_near_one():
    values = np.array([0.3, 2.0, 0.1, 1.9])
    T, I, _ = doerfler_mark(values[:2], values[2:], 1 - 1e-9)
    assert list(T) == [1] and len(I) == 0
    assert oracle_doerfler(values, 1 - 1e-9) == 1


@pytest.mark.parametrize("n", [1, 4, 7, 10])
def test_doerfler_equal_entries(n):
    T, I, _ = doerfler_mark(np.ones(n), [], 0.5)
    assert len(T) == int(np.ceil(n / 2))
    assert oracle_doerfler(np.ones(n), 0.5) == int(np.ceil(n / 2))


def test_doerfler_all_zero():
    T, I, done = doerfler_mark(np.zeros(3), np.zeros(2), 0.5)
    assert done and T.size == 0 and I.size == 0


def test_doerfler_rejects_bad_input():
    with pytest.raises(ValueError):
        doerfler_mark([1.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        doerfler_mark([1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        doerfler_mark([-1.0], [1.0], 0.5)


def test_doerfler_tie_break():
    # equal values: triangles before segments, lower index first
    T, I, _ = doerfler_mark([1.0, 1.0], [1.0, 1.0], 0.5)
    assert list(T) == [0, 1] and len(I) == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=15),
       st.integers(0, 15), st.floats(0.05, 0.95))
def test_doerfler_minimal(values, split, theta):
    values = np.array(values)
    split = min(split, len(values))
    T, I, done = doerfler_mark(values[:split], values[split:], theta)
    if values.sum() == 0:
        assert done
        return
    chosen = np.concatenate([values[:split][T], values[split:][I]])
    assert chosen.sum() >= (1 - theta) * values.sum() * (1 - 1e-12)
    assert len(chosen) == oracle_doerfler(values, theta)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=12), st.floats(0.05, 0.9),
       st.floats(0.0, 0.09))
def test_doerfler_monotone_in_theta(values, theta, delta):
    values = np.array(values)
    T1, _, _ = doerfler_mark(values, [], theta + delta)
    T0, _, _ = doerfler_mark(values, [], theta)
    assert len(T1) <= len(T0)


def square_state(scheme=None):
    bulk = create_unit_square(1)
    data = ProblemData(constant(0.04), lambda x, y: x * y * np.cos(10 * np.pi * x) * np.cos(10 * np.pi * y))
    return AdaptState(bulk, trace_gamma(bulk), scheme or SchemeConfig.p1(), data)


def test_max_dofs_stop_rule():
    table = adaptive_loop(AdaptConfig(max_dofs=100), square_state())
    dofs = table.dofs
    assert dofs[-1] >= 100
    assert np.all(dofs[:-1] < 100)
    assert np.all(np.diff(dofs) > 0)


def test_uniform_mode_refines_everything():
    state = square_state()
    new, record, done, _ = adapt_step(state, AdaptConfig(mode="uniform"))
    assert not done
    assert new.bulk.n_triangles == 4 * state.bulk.n_triangles
    assert new.gamma.n_segments == 2 * state.gamma.n_segments
    check_gamma(new.gamma, new.bulk)


def test_constant_solution_converges_immediately():
    bulk = create_lshape(1)
    data = ProblemData(constant(2.0), constant(2.0))
    state = AdaptState(bulk, trace_gamma(bulk), SchemeConfig.p1(sigma=2.0), data)
    _, record, done, _ = adapt_step(state, AdaptConfig())
    assert done and record.estimator == pytest.approx(0.0, abs=1e-12)
    table = adaptive_loop(AdaptConfig(max_dofs=1000), state)
    assert len(table) == 1


@pytest.mark.parametrize("make", [create_unit_square, create_lshape])
def test_invariants_after_every_step(make):
    bulk = make(1)
    data = ProblemData(constant(4.0), lambda x, y: 4 * (x * x - x + y * y - y))
    state = AdaptState(bulk, trace_gamma(bulk), SchemeConfig.p2p0(), data)
    config = AdaptConfig(theta=0.5)
    prev = 0
    for step in range(6):
        state, record, done, _ = adapt_step(state, config, step)
        check_conformity(state.bulk)
        check_gamma(state.gamma, state.bulk)
        assert record.dofs > prev
        prev = record.dofs


def test_refine_meshes_forces_bulk_edge():
    """Marking a segment at the ratio limit bisects its parent bulk edge."""
    bulk = create_unit_square(1)
    gamma = trace_gamma(bulk, rho=1.0)
    nb, bg = refine_meshes(bulk, gamma, [], [0])
    assert nb.n_boundary > bulk.n_boundary
    check_conformity(nb)
    check_gamma(bg, nb)
    assert bg.n_segments >= 5


def test_table_csv_roundtrip():
    table = adaptive_loop(AdaptConfig(max_dofs=60, with_error=True), square_state())
    text = table.to_csv()
    assert text.startswith("# ")
    assert "lambda_norm=h-weighted-L2" in text.splitlines()[0]
    assert text.splitlines()[1] == "step,dofs_u,dofs_p,dofs_lambda,error,estimator"
    again = ConvergenceTable.from_csv(text)
    assert np.array_equal(again.dofs, table.dofs)
    assert np.array_equal(again.estimator, table.estimator)
    assert np.array_equal(again.error, table.error)


def test_estimator_trend_square():
    table = adaptive_loop(AdaptConfig(max_dofs=600), square_state())
    assert fit_slope(table.dofs, table.estimator) < 0


def test_error_window():
    config = AdaptConfig(max_dofs=150, with_error=True, error_window=2)
    table = adaptive_loop(config, square_state())
    err = table.error
    assert np.all(np.isnan(err[:-2])) and np.all(err[-2:] > 0)


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(theta=1.5)
    with pytest.raises(ValueError):
        AdaptConfig(mode="random")


def test_uniform_reference_reuse():
    """In uniform mode the finer levels serve as references without extra solves."""
    config = AdaptConfig(mode="uniform", max_steps=4, with_error=True)
    table = adaptive_loop(config, square_state())
    err = table.error
    assert np.all(err > 0)
    assert err[-1] < err[0]


def test_dofs_match_spaces():
    state = square_state(SchemeConfig.p2p0())
    _, record, _, sol = adapt_step(state, AdaptConfig())
    dofs = build_spaces(state.bulk, state.gamma, state.scheme)
    assert (record.dofs_u, record.dofs_p, record.dofs_lambda) == dofs.sizes
