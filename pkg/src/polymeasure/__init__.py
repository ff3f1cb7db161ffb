"""Measure-valued polynomial diffusions on finite grids.

Moments by the dual coefficient ODE, Laplace transforms of the affine
subclass, admissibility checks and a Monte Carlo simulator.
"""
from .affine import is_affine, laplace, solve_riccati, solve_riccati_mild
from .generator import OperatorSpec, apply_dual, apply_generator, carre_du_champ, validate
from .measures import Grid, MeasureVec, PolyRep, SymCoeff, pair, poly_eval
from .moments import moment, moment_surface, solve_moment_ode
from .simulate import PathEnsemble, estimate, simulate, simulate_gbm_lift

__version__ = "0.1.0"

__all__ = [
    "Grid", "MeasureVec", "SymCoeff", "PolyRep", "pair", "poly_eval",
    "OperatorSpec", "apply_generator", "apply_dual", "carre_du_champ", "validate",
    "solve_moment_ode", "moment", "moment_surface",
    "is_affine", "solve_riccati", "solve_riccati_mild", "laplace",
    "PathEnsemble", "simulate", "simulate_gbm_lift", "estimate",
]
