"""Auditing permutation feature importance of random forests for extrapolation.

Permuting a dependent feature creates rows unlike anything in the training
data. The average leaf-community distance (ALCD) measures how far such rows
sit from the training points a forest routes them to; a paired sign-flip test
against an independent baseline column flags the affected features.
"""

from .alcd import AlcdTable, Metric, build_alcd_table, point_alcd
from .data import Dataset, add_baseline, load_csv, split, standardize
from .forest import Forest, Hyperparams, fit
from .importance import ImportanceReport, importance_report, pfi, relearn_importance
from .pipeline import AuditConfig, audit_dataset, audit_split
from .trip import TripResult, exact_test, permutation_test, run_trip

__version__ = "0.1.0"

__all__ = [
    "AlcdTable", "AuditConfig", "Dataset", "Forest", "Hyperparams", "ImportanceReport",
    "Metric", "TripResult", "add_baseline", "audit_dataset", "audit_split",
    "build_alcd_table", "exact_test", "fit", "importance_report", "load_csv",
    "permutation_test", "pfi", "point_alcd", "relearn_importance", "run_trip", "split",
    "standardize",
]
