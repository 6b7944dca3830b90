"""Version control for keyed-record datasets."""
from .delta import Delete, Delta, Insert, Update, apply_delta, compute_delta, diff_recs, invert_delta
from .errors import DsvcError
from .graph import EdgeKind, Provenance, VersionGraph, VersionNode
from .hooks import HookEvent
from .merge import Conflict, ConflictKind, Conflicted, Merged, Strategy, TakeA, TakeB, TakeRecord, detect_conflicts, merge, merge_many
from .model import Dataset, ForeignKey, Record, Table
from .predicate import Comparison, Predicate, where
from .repository import FULL, RepoConfig, Repository, Sampled, WorkingCopy

__all__ = [
    "Comparison", "Conflict", "ConflictKind", "Conflicted", "Dataset", "Delete", "Delta", "DsvcError",
    "EdgeKind", "FULL", "ForeignKey", "HookEvent", "Insert", "Merged", "Predicate", "Provenance",
    "Record", "RepoConfig", "Repository", "Sampled", "Strategy", "Table", "TakeA", "TakeB", "TakeRecord",
    "Update", "VersionGraph", "VersionNode", "WorkingCopy", "apply_delta", "compute_delta",
    "detect_conflicts", "diff_recs", "invert_delta", "merge", "merge_many", "where",
]
