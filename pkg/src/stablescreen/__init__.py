"""Safe and stable screening for the Lasso, with a multi-dictionary solver
that iterates on fast sum-of-Kronecker approximations of the dictionary."""

from .dictionary import (
    ApproxDictionary,
    ApproxSequence,
    DenseDictionary,
    SukroDictionary,
    adjoint_matvec,
    build_sukro_sequence,
    matvec,
    synthesize_scenario,
)
from .fastl1 import SwitchConfig, fastl1_solve, solve_plain, solve_screened
from .screening import Rule, SafeSphere
from .solver import LassoProblem

__version__ = "0.1.0"
