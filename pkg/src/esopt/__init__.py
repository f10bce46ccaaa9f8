"""Two-stage energy-system modeling: expressions, components, problems, transformations and solvers."""
from .expr import (Const, Domain, Expr, Symbol, SymbolKind, differentiate, evaluate, parse,
                   print_generic, substitute)
from .model import Component, Polarity, Relation
from .system import System
from .problem import Problem
from .flatten import FlatModel, Solution, Status, emit_lp, parse_lp
from .solve import SolverOptions, check_feasibility

__all__ = [
    "Component", "Const", "Domain", "Expr", "FlatModel", "Polarity", "Problem", "Relation",
    "Solution", "SolverOptions", "Status", "Symbol", "SymbolKind", "System", "check_feasibility",
    "differentiate", "emit_lp", "evaluate", "parse", "parse_lp", "print_generic", "substitute",
]
__version__ = "0.1.0"
