"""Fuzzing-driven FTP service fingerprinting.

Lab phase: generate a deterministic request collection, scan known
servers, optionally reduce the collection to the discriminating requests.
Production phase: scan an unknown target with the same collection and
rank its fingerprint against the database.
"""

from .errors import FingerfuzzError
from .fuzzgen import (
    DEFAULT_COMMANDS,
    FuzzCollection,
    FuzzConfig,
    RequestRecord,
    build_collection,
    load_collection,
    mutate,
    read_collection,
    save_collection,
    write_collection,
)
from .matcher import FingerprintDB, MatchResult, match_matrix, match_pair, rank
from .optimizer import (
    IndexSelection,
    discriminating_indexes,
    project_fingerprint,
    reduce_collection,
)
from .scanner import (
    Fingerprint,
    fingerprint_target,
    load_fingerprint,
    read_fingerprint,
    save_fingerprint,
    write_fingerprint,
)
from .wire import ReplyObservation, TargetSpec, connect

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_COMMANDS",
    "Fingerprint",
    "FingerprintDB",
    "FingerfuzzError",
    "FuzzCollection",
    "FuzzConfig",
    "IndexSelection",
    "MatchResult",
    "ReplyObservation",
    "RequestRecord",
    "TargetSpec",
    "build_collection",
    "connect",
    "discriminating_indexes",
    "fingerprint_target",
    "load_collection",
    "load_fingerprint",
    "match_matrix",
    "match_pair",
    "mutate",
    "project_fingerprint",
    "rank",
    "read_collection",
    "read_fingerprint",
    "reduce_collection",
    "save_collection",
    "save_fingerprint",
    "write_collection",
    "write_fingerprint",
]
