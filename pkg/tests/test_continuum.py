import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polymeasure.affine import is_affine, laplace
from polymeasure.continuum import (
    LevySpec, TauGroupSpec, as_function, check_admissible_tau, chi, discretize_levy,
    group_action, preset,
)
from polymeasure.generator import OperatorSpec, validate
from polymeasure.measures import Grid, MeasureVec

seeds = st.integers(0, 2**32 - 1)
GRID = Grid.uniform(0.0, 1.0, 6)
H = 0.2


def test_laplacian_stencil():
    B1 = discretize_levy(LevySpec(sigma2=2.0), GRID)
    interior = B1[1:-1]
    np.testing.assert_allclose(np.diag(B1)[1:-1], -2 / H**2)
    np.testing.assert_allclose(np.diag(B1, 1), 1 / H**2)
    np.testing.assert_allclose(np.diag(B1, -1), 1 / H**2)
    np.testing.assert_allclose(interior.sum(axis=1), 0.0, atol=1e-9)
    # killing boundary: outflow is dropped
    assert B1[0, 0] == pytest.approx(-2 / H**2)
    reflect = discretize_levy(LevySpec(sigma2=2.0), GRID, boundary="reflect")
    np.testing.assert_allclose(reflect.sum(axis=1), 0.0, atol=1e-9)


def test_upwind_drift():
    fwd = discretize_levy(LevySpec(gamma=1.0), GRID)
    np.testing.assert_allclose(np.diag(fwd, 1), 1 / H)
    np.testing.assert_allclose(np.diag(fwd), -1 / H)
    assert np.all(np.diag(fwd, -1) == 0)
    bwd = discretize_levy(LevySpec(gamma=-1.0), GRID)
    np.testing.assert_allclose(np.diag(bwd, -1), 1 / H)
    assert np.all(np.diag(bwd, 1) == 0)


def test_zero_spec_and_killing():
    assert not np.any(discretize_levy(LevySpec(), GRID))
    np.testing.assert_allclose(discretize_levy(LevySpec(killing=-0.3), GRID), -0.3 * np.eye(6))


def test_jumps_land_on_nearest_node():
    # a jump of size 0.41 from x_i lands on x_{i+2}; the compensator shifts the drift by -rate*0.41
    B1 = discretize_levy(LevySpec(jumps=[(0.41, 2.0)]), GRID, boundary="reflect")
    assert B1[0, 2] == pytest.approx(2.0)
    assert B1[1, 0] == pytest.approx(2.0 * 0.41 / H)
    assert chi(0.41) == 0.41 and chi(1.5) == 0.0
    big = discretize_levy(LevySpec(jumps=[(-1.6, 1.0)]), Grid.uniform(0, 4, 21))
    assert big[20, 12] == pytest.approx(1.0)


def test_discretize_errors():
    with pytest.raises(ValueError):
        discretize_levy(LevySpec(sigma2=-1.0), GRID)
    with pytest.raises(ValueError):
        discretize_levy(LevySpec(), Grid((0.0, 0.1, 0.5)))
    with pytest.raises(ValueError):
        discretize_levy(LevySpec(jumps=[(0.2, -1.0)]), GRID)
    with pytest.raises(ValueError):
        discretize_levy(LevySpec(), GRID, boundary="periodic")


@given(seeds, st.sampled_from(["kill", "reflect"]))
@settings(max_examples=30)
def test_random_coefficients_give_nonnegative_off_diagonals(seed, boundary):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(-1.0, 2.0, int(rng.integers(3, 30)))
    spec = LevySpec(gamma=rng.normal(size=grid.size) * 5, sigma2=rng.uniform(0, 3, grid.size),
                    jumps=[(float(rng.normal()), rng.uniform(0, 2, grid.size)) for _ in range(2)],
                    killing=-rng.uniform(0, 1, grid.size))
    B1 = discretize_levy(spec, grid, boundary)
    off = B1 - np.diag(np.diag(B1))
    assert np.all(off >= 0)
    assert validate(OperatorSpec.from_arrays(grid.size, B1=B1)).ok


def test_builtin_coefficients():
    f = as_function({"kind": "quadratic", "coeffs": [1.0, 0.0, 2.0]})
    np.testing.assert_allclose(f(np.array([0.0, 1.0])), [1.0, 3.0])
    with pytest.raises(ValueError):
        as_function({"kind": "cubic"})
    with pytest.raises(ValueError):
        as_function({"kind": "linear", "coeffs": [1, 2, 3]})


# ------------------------------------------------------------------ tau groups

@pytest.mark.parametrize("tau, a, b, status", [
    (lambda x: x, 0.0, 1.0, "fail"),
    (lambda x: x * (1 - x), 0.0, 1.0, "pass"),
    (lambda x: 0 * x, 0.0, 1.0, "pass"),
    (lambda x: x, 0.0, math.inf, "pass"),
    (lambda x: np.sqrt(np.clip(x * (1 - x), 0, None)), 0.0, 1.0, "inconclusive"),
])
def test_admissibility(tau, a, b, status):
    rep = check_admissible_tau(TauGroupSpec(tau, a=a, b=b))
    assert rep.status == status, rep.reasons
    if status == "pass":
        assert math.isfinite(rep.lipschitz)


def test_x_one_minus_x_lipschitz_constant():
    rep = check_admissible_tau(TauGroupSpec(lambda x: x * (1 - x), a=0.0, b=1.0))
    assert rep.lipschitz == pytest.approx(1.0, abs=1e-3)


EXP_FLOW = TauGroupSpec(lambda x: x, a=0.0, b=math.inf)


def test_identity_and_exact_flow():
    grid = Grid.uniform(0.1, 4.0, 401)
    x = grid.as_array()
    g = np.sin(x)
    np.testing.assert_array_equal(group_action(EXP_FLOW, g, grid, 0.0), g)
    out = group_action(EXP_FLOW, x**2, grid, 0.3)
    inside = x * math.exp(0.3) <= 4.0
    # g quadratic, interpolation error at most h^2/4
    np.testing.assert_allclose(out[inside], (x[inside] * math.exp(0.3)) ** 2, atol=1e-4)
    assert np.all(np.isnan(out[~inside]))


def test_pure_cocycle():
    grid = Grid.uniform(0.0, 1.0, 11)
    g = np.linspace(1, 2, 11)
    out = group_action(TauGroupSpec(lambda x: 0 * x, h=0.7), g, grid, 0.5)
    np.testing.assert_allclose(out, math.exp(0.35) * g, rtol=1e-14)


def test_group_law():
    grid = Grid.uniform(0.1, 4.0, 2001)
    g = np.cos(grid.as_array())
    once = group_action(EXP_FLOW, g, grid, 0.5)
    twice = group_action(EXP_FLOW, group_action(EXP_FLOW, g, grid, 0.25), grid, 0.25)
    ok = np.isfinite(once) & np.isfinite(twice)
    assert ok.sum() > 1000
    assert np.max(np.abs(once[ok] - twice[ok])) <= 1e-4


@given(seeds)
@settings(max_examples=20)
def test_positivity(seed):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(0.0, 1.0, 101)
    spec = TauGroupSpec(lambda x: x * (1 - x), h=lambda x: np.sin(5 * x), a=0.0, b=1.0)
    g = rng.uniform(0, 1, 101) * (rng.uniform(size=101) < 0.5)
    assert np.all(group_action(spec, g, grid, float(rng.uniform(0, 1))) >= 0)


def test_generator_consistency_first_order():
    grid = Grid.uniform(0.0, 1.0, 4001)
    x = grid.as_array()
    spec = TauGroupSpec(lambda y: y * (1 - y), h=lambda y: y, a=0.0, b=1.0)
    g = np.sin(3 * x)
    target = x * (1 - x) * 3 * np.cos(3 * x) + x * g
    inner = slice(400, 3600)
    errs = [np.max(np.abs((group_action(spec, g, grid, t) - g)[inner] / t - target[inner]))
            for t in (0.02, 0.01)]
    assert errs[1] < 0.05
    assert 1.6 <= errs[0] / errs[1] <= 2.4


def test_flow_leaving_interval_raises():
    grid = Grid.uniform(0.0, 1.0, 11)
    with pytest.raises(ValueError):
        group_action(TauGroupSpec(lambda x: 1 + 0 * x, a=0.0, b=1.0), np.ones(11), grid, 0.5)


# --------------------------------------------------------------------- presets

@pytest.mark.parametrize("name", ["super_brownian", "cir_field", "fisher_snedecor",
                                  "black_scholes_field"])
def test_presets_validate(name):
    spec, grid, nu0 = preset(name)
    assert validate(spec).ok
    assert grid.size == spec.m == nu0.weights.shape[0]


def test_preset_structure():
    sb, grid, nu0 = preset("super_brownian")
    assert sb.m == 11 and is_affine(sb) and nu0.mass == pytest.approx(1.0)
    assert is_affine(preset("cir_field")[0])
    fs = preset("fisher_snedecor")[0]
    assert not is_affine(fs) and np.any(fs.pi) and np.all(fs.alpha > 0)
    bs = preset("black_scholes_field")[0]
    gbm = OperatorSpec.gbm_lift(1, 0.2)
    np.testing.assert_allclose(bs.beta_eff, gbm.beta_eff)
    assert not np.any(bs.alpha) and not np.any(bs.pi)
    with pytest.raises(ValueError):
        preset("heston")


def test_super_brownian_grid_refinement():
    vals = []
    for m in (11, 21):
        spec, grid, nu0 = preset("super_brownian", m=m)
        vals.append(laplace(spec, -2.0 * grid.as_array(), nu0, 0.5))
    assert abs(vals[1] - vals[0]) <= 0.02 * vals[1]
