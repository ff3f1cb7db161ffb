import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import cir_mean, gbm_moment
from polymeasure.affine import laplace
from polymeasure.generator import OperatorSpec, apply_dual, random_spec
from polymeasure.measures import DegreeError, Grid, MeasureVec, PolyRep, symmetrize
from polymeasure.moments import (
    coeff_space, dual_matrix, moment, moment_expm, moment_surface, solve_moment_ode,
)

seeds = st.integers(0, 2**32 - 1)


def test_coeff_space_roundtrip(rng):
    grid = Grid.of_size(3)
    p = PolyRep(grid, [symmetrize(rng.normal(size=(3,) * k)) for k in range(4)])
    space = coeff_space(3, 3)
    assert space.dim == 1 + 3 + 6 + 10
    assert space.to_poly(space.to_vector(p), grid).allclose(p)


def test_dual_matrix_matches_apply_dual(rng):
    spec = random_spec(3, rng)
    grid = Grid.of_size(3)
    space = coeff_space(3, 3)
    M = dual_matrix(spec, 3, grid)
    v = rng.normal(size=space.dim)
    ref = space.to_vector(apply_dual(spec, space.to_poly(v, grid)))
    np.testing.assert_allclose(M @ v, ref, rtol=1e-12, atol=1e-12)


def test_constant_is_preserved(rng):
    spec = random_spec(2, rng)
    grid = Grid.of_size(2)
    assert moment(spec, PolyRep.constant(grid, 3.0), MeasureVec(grid, np.ones(2)), 1.0) == 3.0


@pytest.mark.parametrize("n", [1, 2, 4])
def test_gbm_lift_power(n):
    grid = Grid.of_size(3)
    h = np.array([0.2, 0.5, 0.3])
    mu = MeasureVec(grid, np.array([1.0, 2.0, 0.5]))
    got = moment(OperatorSpec.gbm_lift(3, 0.4), PolyRep.power(grid, h, n), mu, 1.0)
    assert got == pytest.approx(gbm_moment(float(h @ mu.weights), 0.4, n, 1.0), rel=1e-10)


def test_cir_mean_example():
    spec = OperatorSpec.from_arrays(1, b=0.1, B1=-0.5, alpha=1.0)
    grid = Grid.of_size(1)
    sol = solve_moment_ode(spec, PolyRep.linear(grid, [1.0]), 1.0)
    np.testing.assert_allclose(sol.final.coeff(1).values, [math.exp(-0.5)], rtol=1e-12)
    assert sol.final(MeasureVec(grid, [1.0])) == pytest.approx(0.685225, abs=5e-7)
    assert sol.final(MeasureVec(grid, [1.0])) == pytest.approx(cir_mean(1.0, 0.1, -0.5, 1.0), rel=1e-12)


@given(seeds, st.integers(1, 3), st.integers(1, 3))
@settings(max_examples=15)
def test_semigroup_property(seed, m, degree):
    rng = np.random.default_rng(seed)
    spec = random_spec(m, rng)
    grid = Grid.of_size(m)
    p = PolyRep(grid, [rng.normal(size=(m,) * k) for k in range(degree + 1)])
    nu = MeasureVec(grid, rng.uniform(0, 1, m))
    half = solve_moment_ode(spec, p, 0.5, n_steps=500, record=False).final
    twice = solve_moment_ode(spec, half, 0.5, n_steps=500, record=False).final
    full = solve_moment_ode(spec, p, 1.0, n_steps=1000, record=False).final
    assert twice(nu) == pytest.approx(full(nu), rel=1e-8, abs=1e-8)
    assert full.degree <= p.degree


def test_operator_routes_agree(rng):
    spec = random_spec(3, rng, n_loadings=2)
    grid = Grid.of_size(3)
    p = PolyRep(grid, [0.3, rng.normal(size=3), rng.normal(size=(3, 3))])
    nu = MeasureVec(grid, rng.uniform(0, 2, 3))
    a = moment(spec, p, nu, 1.0, operator="assembled")
    b = moment(spec, p, nu, 1.0, n_steps=200, operator="matrix_free")
    c = moment_expm(spec, p, nu, 1.0)
    assert a == pytest.approx(c, rel=1e-10)
    assert b == pytest.approx(c, rel=1e-9)


def test_rk4_fourth_order(rng):
    spec = OperatorSpec.gbm_lift(2, 1.5)
    grid = Grid.of_size(2)
    p = PolyRep.power(grid, [1.0, 1.0], 4)
    nu = MeasureVec(grid, [0.5, 0.5])
    exact = moment_expm(spec, p, nu, 1.0)
    e1 = abs(moment(spec, p, nu, 1.0, n_steps=20) - exact)
    e2 = abs(moment(spec, p, nu, 1.0, n_steps=40) - exact)
    assert 16 * 0.7 <= e1 / e2 <= 16 * 1.3


def test_surface_preserves_order():
    spec = OperatorSpec.gbm_lift(1, 0.3)
    grid = Grid.of_size(1)
    p = PolyRep.power(grid, [1.0], 2)
    nu = MeasureVec(grid, [2.0])
    times = [1.0, 0.0, 0.5, 0.25]
    got = moment_surface(spec, p, nu, times)
    for t, v in zip(times, got):
        assert v == pytest.approx(gbm_moment(2.0, 0.3, 2, t), rel=1e-10)


def test_errors(rng):
    spec = random_spec(2, rng)
    grid = Grid.of_size(2)
    with pytest.raises(ValueError):
        solve_moment_ode(spec, PolyRep.linear(grid, [1.0, 1.0]), -1.0)
    with pytest.raises(ValueError):
        solve_moment_ode(spec, PolyRep.linear(Grid.of_size(3), np.ones(3)), 1.0)
    with pytest.raises(DegreeError):
        solve_moment_ode(spec, PolyRep.power(grid, [1.0, 1.0], 4), 1.0, max_degree=3)
    with pytest.raises(ValueError):
        solve_moment_ode(spec, PolyRep.linear(grid, [1.0, 1.0]), 1.0, operator="dense")


def test_zero_horizon_and_csv(tmp_path, rng):
    spec = random_spec(2, rng)
    grid = Grid.of_size(2)
    p = PolyRep(grid, [1.0, np.array([1.0, 2.0])])
    sol0 = solve_moment_ode(spec, p, 0.0)
    assert sol0.final.allclose(p)
    sol = solve_moment_ode(spec, p, 1.0, n_steps=10)
    sol.to_csv(tmp_path / "m.csv", stride=5)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "t,degree,multi_index,value"
    assert len(lines) == 1 + 3 * 3
    np.testing.assert_allclose(sol.evaluate(MeasureVec(grid, [1.0, 1.0]))[0], 4.0)


@given(seeds, st.integers(1, 4))
@settings(max_examples=10)
def test_moment_laplace_bridge(seed, m):
    # for affine specs d/de E[exp(e <g, X_T>)] at e = 0 is the first moment
    rng = np.random.default_rng(seed)
    spec = random_spec(m, rng, n_loadings=0, affine=True)
    grid = Grid.of_size(m)
    g = rng.uniform(0.2, 1.0, m)
    nu = MeasureVec(grid, rng.uniform(0, 2, m))
    eps = 1e-4
    up = laplace(spec, eps * g, nu, 1.0, check_sign=False)
    down = laplace(spec, -eps * g, nu, 1.0)
    first = moment(spec, PolyRep.linear(grid, g), nu, 1.0)
    assert (up - down) / (2 * eps) == pytest.approx(first, rel=1e-4, abs=1e-4)
