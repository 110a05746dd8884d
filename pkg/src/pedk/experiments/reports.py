"""Deterministic CSV/JSON writers for result tables."""

import csv
import io
import json
from fractions import Fraction
from pathlib import Path


def pct(value, digits=1):
    """Percentage string of a rate; Fractions are rounded half-up exactly."""
    if isinstance(value, Fraction):
        scaled = value * 100 * 10 ** digits
        q = (scaled.numerator * 2 + scaled.denominator) // (2 * scaled.denominator)
        text = str(q)
        if digits == 0:
            return text
        text = text.rjust(digits + 1, "0")
        return f"{text[:-digits]}.{text[-digits:]}"
    return f"{100 * float(value):.{digits}f}"


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _default(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, tuple):
        return list(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def json_text(doc):
    return json.dumps(doc, indent=1, sort_keys=True, default=_default) + "\n"


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json_text(doc))
    return path
