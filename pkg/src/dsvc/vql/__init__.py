"""VQL: a small SQL dialect over dataset versions."""
from .ast import Select
from .evaluator import Evaluator, ResultSet, evaluate, explain, parse_predicate, record_first_route
from .parser import parse, tokenize
from .printer import to_text

__all__ = ["Evaluator", "ResultSet", "Select", "evaluate", "explain", "parse", "parse_predicate", "record_first_route", "to_text", "tokenize"]
