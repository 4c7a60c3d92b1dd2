"""Versioned CSV tables and JSON metadata sidecars.

Every CSV starts with one comment line naming its schema, for example::

    # schema: trace v1 columns=step,arm,reward,inst_regret,cum_regret

followed by an ordinary header row.  :func:`read_table` refuses a file
whose schema line, version or columns differ from what the caller expects.
"""

import csv
import json
import platform
import sys
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

__all__ = ["Schema", "SchemaError", "SCHEMAS", "write_table", "read_table", "write_sidecar"]


class SchemaError(ValueError):
    """A table does not match the schema the reader expects."""


@dataclass(frozen=True)
class Schema:
    name: str
    version: int
    columns: Sequence[str]

    def header_line(self) -> str:
        return f"# schema: {self.name} v{self.version} columns={','.join(self.columns)}"


SCHEMAS: Dict[str, Schema] = {
    s.name: s
    for s in (
        Schema("log1mexp", 1, ("log2_abs_x", "x", "oracle", "stable", "naive", "stable_rel_err", "naive_rel_err")),
        Schema("icdf_logpdf", 1, ("a", "log2_b", "u", "naive_icdf", "stable_icdf", "stable_log_icdf",
                                  "naive_logpdf", "stable_logpdf")),
        Schema("pointmass", 1, ("log2_b", "a", "n_draws", "naive_zero_fraction", "stable_zero_fraction",
                                "oracle_fraction")),
        Schema("samples", 1, ("x", "log_x")),
        Schema("gradcheck", 1, ("quantity", "log_a", "log_b", "point", "analytic", "finite_diff", "rel_error")),
        Schema("trace", 1, ("step", "arm", "reward", "inst_regret", "cum_regret")),
        Schema("oracle", 1, ("name", "value", "method")),
    )
}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(path, schema: Schema, rows) -> None:
    """Write ``rows`` (sequences in column order) under ``schema``; floats use ``repr``."""
    with open(path, "w", newline="") as fh:
        fh.write(schema.header_line() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.columns)
        for row in rows:
            if len(row) != len(schema.columns):
                raise SchemaError(f"{schema.name}: row has {len(row)} fields, expected {len(schema.columns)}")
            w.writerow([_fmt(v) for v in row])


def read_table(path, schema: Schema) -> List[Dict[str, str]]:
    """Read a table written by :func:`write_table`, checking its schema line."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != schema.header_line():
            raise SchemaError(f"{path}: schema line {first!r} does not match {schema.header_line()!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != tuple(schema.columns):
            raise SchemaError(f"{path}: header {header} does not match columns {list(schema.columns)}")
        rows = []
        for i, rec in enumerate(reader, start=3):
            if len(rec) != len(header):
                raise SchemaError(f"{path}: line {i} has {len(rec)} fields, expected {len(header)}")
            rows.append(dict(zip(header, rec)))
    return rows


def write_sidecar(path, command: str, args: Dict, extra: Dict = None) -> None:
    """JSON metadata sufficient to rerun ``command`` with identical results."""
    from . import __version__

    meta = {
        "command": command,
        "args": {k: v for k, v in args.items() if not callable(v)},
        "argv": sys.argv[1:],
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, set)):
        return list(v)
    return str(v)
