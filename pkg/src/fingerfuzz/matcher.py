"""Positional comparison of fingerprints and ranking against a database.

Two fingerprints are comparable only when they were taken with the same
request collection (equal digests and vector lengths).  Agreement is exact
token equality per position; fault sentinels count like codes, since the
absence of a status code is itself a distinguishing signal.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import DatabaseError, IncomparableError
from .scanner import Fingerprint, load_fingerprint


@dataclass(frozen=True)
class MatchResult:
    label: str
    agree: int
    total: int

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.agree, self.total)

    @property
    def percent(self) -> float:
        """Display percentage, two decimals, rounded half away from zero."""
        q, r = divmod(self.agree * 10000, self.total)
        if 2 * r >= self.total:
            q += 1
        return q / 100


def display_label(fp: Fingerprint) -> str:
    return fp.label if fp.label is not None else fp.target


def match_pair(a: Fingerprint, b: Fingerprint) -> MatchResult:
    """Count equal positions; the result is labelled after the candidate b."""
    if a.collection_digest != b.collection_digest:
        raise IncomparableError(
            f"collection digests differ: {a.collection_digest[:12]}… vs "
            f"{b.collection_digest[:12]}…"
        )
    if len(a.observations) != len(b.observations):
        raise IncomparableError(
            f"vector lengths differ: {len(a.observations)} vs {len(b.observations)}"
        )
    if not a.observations:
        raise IncomparableError("fingerprints are empty")
    agree = sum(1 for x, y in zip(a.observations, b.observations) if x == y)
    return MatchResult(display_label(b), agree, len(a.observations))


class FingerprintDB:
    """All known fingerprints for one collection, indexed by unique label."""

    def __init__(self, fingerprints: dict[str, Fingerprint]):
        if not fingerprints:
            raise DatabaseError("database holds no fingerprints")
        digests = {fp.collection_digest for fp in fingerprints.values()}
        if len(digests) > 1:
            offenders = ", ".join(
                f"{label} ({fp.collection_digest[:12]}…)"
                for label, fp in sorted(fingerprints.items())
            )
            raise DatabaseError(f"mixed collection digests: {offenders}")
        lengths = {len(fp.observations) for fp in fingerprints.values()}
        if len(lengths) > 1:
            raise DatabaseError("entries disagree on observation count")
        self._by_label = dict(sorted(fingerprints.items()))

    @classmethod
    def load(cls, directory) -> "FingerprintDB":
        directory = Path(directory)
        if not directory.is_dir():
            raise DatabaseError(f"not a directory: {directory}")
        entries: dict[str, Fingerprint] = {}
        for path in sorted(directory.glob("*.fp")):
            fp = load_fingerprint(path)
            label = fp.label if fp.label is not None else path.stem
            if label in entries:
                raise DatabaseError(f"duplicate label '{label}' ({path.name})")
            entries[label] = fp
        if not entries:
            raise DatabaseError(f"no .fp files in {directory}")
        return cls(entries)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._by_label)

    @property
    def digest(self) -> str:
        return next(iter(self._by_label.values())).collection_digest

    def __len__(self) -> int:
        return len(self._by_label)

    def __getitem__(self, label: str) -> Fingerprint:
        return self._by_label[label]

    def items(self):
        return self._by_label.items()

    def fingerprints(self):
        return tuple(self._by_label.values())


def rank(probe: Fingerprint, db: FingerprintDB, k: int = 5) -> list[MatchResult]:
    """Best k database entries by exact agreement ratio, ties by label."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if probe.collection_digest != db.digest:
        raise IncomparableError(
            "probe was taken with a different collection than the database "
            f"entries {', '.join(db.labels)}"
        )
    results = [match_pair(probe, fp) for fp in db.fingerprints()]
    results.sort(key=lambda m: (-m.ratio, m.label))
    return results[:k]


def match_matrix(db: FingerprintDB) -> list[list[float]]:
    """All-pairs percent matrix in label order; symmetric, diagonal 100.00."""
    if len(db) < 2:
        raise DatabaseError("matrix needs at least two fingerprints")
    fps = db.fingerprints()
    n = len(fps)
    matrix = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            percent = match_pair(fps[i], fps[j]).percent
            matrix[i][j] = percent
            matrix[j][i] = percent
    return matrix


def matrix_csv(db: FingerprintDB) -> str:
    """Matrix as CSV with a label header row and column."""
    matrix = match_matrix(db)
    labels = db.labels
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label", *labels])
    for label, row in zip(labels, matrix):
        writer.writerow([label, *(f"{cell:.2f}" for cell in row)])
    return out.getvalue()
