"""Riccati-based solvers for control QPs with low-rank factorization updates."""
from .asqp import CftocProblem, SolverOptions, WorkingSet, partition
from .asqp import solve as solve_cftoc
from .dualize import GeneralCftoc, build_dual, recover_primal, solve_dual
from .lowrank import WorkingSetDelta, modify_factorization, refresh_solution
from .uftoc import UftocProblem, factorize
from .uftoc import solve as solve_uftoc

__all__ = [
    "CftocProblem", "GeneralCftoc", "SolverOptions", "UftocProblem", "WorkingSet",
    "WorkingSetDelta", "build_dual", "factorize", "modify_factorization", "partition",
    "recover_primal", "refresh_solution", "solve_cftoc", "solve_dual", "solve_uftoc",
]
