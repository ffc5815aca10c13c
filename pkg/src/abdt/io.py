"""CSV ingestion of lift estimates and plot-ready CSV output.

Input dialect: comma separated, UTF-8, dot decimal, header row required.
Columns ``lift`` and ``stderr`` are mandatory; ``feature_id`` (default
``"anon"``) and ``seq`` (default 0) are optional.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict

from .core import DomainError, ExperimentRecord
from .sequential import FeatureHistory

REQUIRED = ("lift", "stderr")


class ParseError(ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class RowDomainError(DomainError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


def _float(text, name, row):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}: column {name!r} is not a number: {text!r}", row) from None


def parse_records(lines):
    """Parse an iterable of CSV lines into :class:`ExperimentRecord` objects.

    ``row`` numbers in errors count data rows from 1 (the header is row 0).
    """
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input: header row required", 0) from None
    except csv.Error as exc:
        raise ParseError(f"malformed CSV header: {exc}", 0) from None
    cols = [h.strip() for h in header]
    missing = [c for c in REQUIRED if c not in cols]
    if missing:
        raise ParseError(f"header lacks required columns {missing}", 0)
    idx = {c: i for i, c in enumerate(cols)}
    records = []
    seen = set()
    try:
        for row, fields in enumerate(reader, start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(cols):
                raise ParseError(f"row {row}: expected {len(cols)} fields, got {len(fields)}", row)
            lift = _float(fields[idx["lift"]], "lift", row)
            stderr = _float(fields[idx["stderr"]], "stderr", row)
            fid = fields[idx["feature_id"]].strip() if "feature_id" in idx else "anon"
            fid = fid or "anon"
            seq = 0
            if "seq" in idx:
                seq_f = _float(fields[idx["seq"]], "seq", row)
                if seq_f != int(seq_f) or seq_f < 0:
                    raise ParseError(f"row {row}: seq must be a non-negative integer", row)
                seq = int(seq_f)
            if not math.isfinite(lift):
                raise RowDomainError(f"row {row}: lift must be finite", row)
            if not (stderr > 0 and math.isfinite(stderr)):
                raise RowDomainError(f"row {row}: stderr must be positive, got {stderr!r}", row)
            if "seq" in idx:
                if (fid, seq) in seen:
                    raise RowDomainError(f"row {row}: duplicate seq {seq} for feature {fid!r}", row)
                seen.add((fid, seq))
            records.append(ExperimentRecord(lift, stderr, fid, seq))
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", reader.line_num) from None
    return records


def read_records(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return parse_records(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8: {exc}") from None


def group_histories(records):
    """Histories keyed by feature id, each ordered by ``seq``."""
    groups = defaultdict(list)
    for r in records:
        groups[r.feature_id].append(r)
    return {fid: FeatureHistory.from_records(rs) for fid, rs in groups.items()}


def fmt(value, raw=False):
    """Six significant digits unless ``raw``."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        if raw or not math.isfinite(value):
            return value
        return float(f"{value:.6g}")
    if isinstance(value, dict):
        return {k: fmt(v, raw) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [fmt(v, raw) for v in value]
    return value


def write_csv(fh, header, rows, raw=False):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [repr(float(v)) if raw and isinstance(v, float) else (f"{v:.6g}" if isinstance(v, float) else v) for v in row]
        )
