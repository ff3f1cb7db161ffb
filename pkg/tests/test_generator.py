import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import brute_eval, generator_by_sde
from polymeasure.generator import (
    OperatorSpec, ProbeFunction, apply_dual, apply_generator, carre_du_champ, diffusion_matrix,
    pi_beta_coupling, pmp_probe, random_spec, validate,
)
from polymeasure.measures import DegreeError, Grid, GridMismatchError, MeasureVec, PolyRep

seeds = st.integers(0, 2**32 - 1)


def _random_poly(grid, rng, degree):
    return PolyRep(grid, [rng.normal(size=(grid.size,) * k) for k in range(degree + 1)])


@given(seeds, st.integers(1, 3), st.integers(0, 3))
def test_generator_matches_sde_form(seed, m, degree):
    rng = np.random.default_rng(seed)
    spec = random_spec(m, rng)
    grid = Grid.of_size(m)
    p = _random_poly(grid, rng, degree)
    c = rng.uniform(0.2, 2.0, m)
    ref = generator_by_sde(spec.b, spec.B1, spec.alpha, spec.beta, spec.pi, spec.loadings,
                           lambda x: brute_eval(p.terms, x), c, eps=1e-3)
    got = apply_generator(spec, p, MeasureVec(grid, c))
    assert got == pytest.approx(ref, rel=1e-5, abs=1e-5)


@given(seeds, st.integers(1, 4), st.integers(0, 4))
def test_dual_agrees_with_generator(seed, m, degree):
    rng = np.random.default_rng(seed)
    spec = random_spec(m, rng, n_loadings=2)
    grid = Grid.of_size(m)
    p = _random_poly(grid, rng, degree)
    nu = MeasureVec(grid, rng.uniform(0, 3, m))
    q = apply_dual(spec, p)
    assert q.degree <= p.degree
    assert q(nu) == pytest.approx(apply_generator(spec, p, nu), rel=1e-10, abs=1e-10)


def test_constants_are_killed(rng):
    spec = random_spec(3, rng)
    grid = Grid.of_size(3)
    assert apply_dual(spec, PolyRep.constant(grid, 5.0)).degree == -1
    assert apply_generator(spec, PolyRep.constant(grid, 5.0), MeasureVec(grid, np.ones(3))) == 0.0


def test_gbm_lift_dual_on_powers():
    # L <h, nu>^n = sigma^2 n (n-1) / 2 <h, nu>^n for the lift of S_t mu
    grid = Grid.of_size(3)
    spec = OperatorSpec.gbm_lift(3, 0.3)
    h = np.array([1.0, -0.5, 2.0])
    for n in range(1, 6):
        q = apply_dual(spec, PolyRep.power(grid, h, n))
        assert q.allclose(PolyRep.power(grid, h, n) * (0.09 * n * (n - 1) / 2))


def test_errors():
    spec = OperatorSpec.zeros(2)
    with pytest.raises(GridMismatchError):
        apply_dual(spec, PolyRep.linear(Grid.of_size(3), np.ones(3)))
    with pytest.raises(DegreeError):
        apply_dual(spec, PolyRep.power(Grid.of_size(2), np.ones(2), 5), max_degree=4)
    with pytest.raises(ValueError):
        OperatorSpec(b=np.zeros(2), B1=np.zeros((3, 3)), alpha=np.zeros(2), beta=np.zeros((2, 2)),
                     pi=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        OperatorSpec.from_arrays(2, b=[np.nan, 0.0])


def test_spec_dict_roundtrip(rng):
    spec = random_spec(3, rng, n_loadings=2)
    back = OperatorSpec.from_dict(spec.to_dict())
    for name in ("b", "B1", "alpha", "beta", "pi", "loadings"):
        np.testing.assert_array_equal(getattr(back, name), getattr(spec, name))


@given(seeds, st.integers(1, 3))
def test_carre_du_champ_of_linear_functionals(seed, m):
    rng = np.random.default_rng(seed)
    spec = random_spec(m, rng)
    grid = Grid.of_size(m)
    g1, g2 = rng.normal(size=m), rng.normal(size=m)
    c = rng.uniform(0, 2, m)
    nu = MeasureVec(grid, c)
    got = carre_du_champ(spec, PolyRep.linear(grid, g1), PolyRep.linear(grid, g2), nu)
    assert got == pytest.approx(g1 @ diffusion_matrix(spec, c) @ g2, rel=1e-9, abs=1e-10)
    assert carre_du_champ(spec, PolyRep.linear(grid, g1), PolyRep.linear(grid, g1), nu) >= -1e-12


@given(seeds, st.integers(1, 5))
def test_admissible_specs_have_psd_diffusion(seed, m):
    rng = np.random.default_rng(seed)
    spec = random_spec(m, rng)
    assert validate(spec).ok
    for _ in range(10):
        c = rng.exponential(size=m) * (rng.uniform(size=m) < 0.7)
        assert np.linalg.eigvalsh(diffusion_matrix(spec, c))[0] >= -1e-10 * max(1.0, c.max() ** 2)


# ------------------------------------------------------------------ validation

def test_zero_spec_is_admissible():
    assert validate(OperatorSpec.zeros(3)).ok


def test_coupling_example_is_accepted(rng):
    a = rng.uniform(0, 1, (4, 4))
    beta, pi = pi_beta_coupling(0.5 * (a + a.T))
    rep = validate(OperatorSpec.from_arrays(4, alpha=1.0, beta=beta, pi=pi))
    assert rep.ok, rep.to_json()
    # beta alone is not PSD, so the sampled branch had to be used
    assert "sampled" in rep["beta_pi_psd"].description


@pytest.mark.parametrize("kwargs, name", [
    (dict(B1=[[-1.0, -0.5], [0.2, -1.0]]), "positive_minimum_principle"),
    (dict(alpha=[1.0, -0.1]), "alpha_nonnegative"),
    (dict(beta=[[0.0, -1.0], [-1.0, 0.0]]), "beta_pi_psd"),
    (dict(b=[0.1, -0.2]), "immigration_nonnegative"),
    (dict(beta=[[1.0, 0.2], [0.1, 1.0]]), "beta_symmetric"),
    (dict(pi=[[0.1, 0.0], [0.0, 0.0]]), "pi_nonnegative"),
    (dict(beta=[[-1.0, 0.0], [0.0, 1.0]]), "beta_diagonal_nonnegative"),
])
def test_single_violations_are_named(kwargs, name):
    rep = validate(OperatorSpec.from_arrays(2, **kwargs))
    assert not rep.ok
    assert name in rep.failed
    if name in ("positive_minimum_principle", "alpha_nonnegative", "beta_pi_psd",
                "immigration_nonnegative"):
        assert rep.failed == [name]
    if name == "positive_minimum_principle":
        assert "positive minimum principle" in rep[name].description


def test_psd_witness_is_reported():
    rep = validate(OperatorSpec.from_arrays(2, beta=[[0.0, -1.0], [-1.0, 0.0]]))
    w = rep["beta_pi_psd"].witness
    assert w["min_eigenvalue"] < 0 and len(w["c"]) == 2


# -------------------------------------------------------------- probe

def test_probe_finds_no_violation_on_admissible_specs(rng):
    for _ in range(3):
        spec = random_spec(3, rng)
        f = ProbeFunction.random(3, rng)
        rep = pmp_probe(spec, f, restarts=8, seed=1)
        assert not rep.violation, rep


def test_probe_detects_negative_immigration():
    f = ProbeFunction([[1.0]], p0=1.0, p1=[-1.0], damping=1.0)   # (1 - y) exp(-y^2), max at 0
    bad = pmp_probe(OperatorSpec.from_arrays(1, b=-1.0), f, restarts=5)
    good = pmp_probe(OperatorSpec.from_arrays(1, b=1.0), f, restarts=5)
    assert bad.first_order_ok and bad.second_order_ok
    assert bad.generator_value == pytest.approx(1.0, abs=1e-8) and bad.violation
    assert not good.violation


def test_probe_detects_negative_off_diagonal():
    # P(y) = 1 - y1 - (y2 - 1)^2 is maximal at (0, 1) with d1 P = -1
    f = ProbeFunction(np.eye(2), p0=0.0, p1=[-1.0, 2.0], P2=[[0.0, 0.0], [0.0, -1.0]], damping=0.0)
    bad = pmp_probe(OperatorSpec.from_arrays(2, B1=[[0.0, 0.0], [-0.5, 0.0]]), f, restarts=5)
    np.testing.assert_allclose(bad.maximizer, [0.0, 1.0], atol=1e-8)
    assert bad.generator_value == pytest.approx(0.5, abs=1e-8) and bad.violation
    ok = pmp_probe(OperatorSpec.from_arrays(2, B1=[[0.0, 0.0], [0.5, 0.0]]), f, restarts=5)
    assert not ok.violation
