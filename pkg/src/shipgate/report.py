"""Table emission (csv, markdown, json) with a provenance block.

Output is a pure function of the inputs: floats are written with 15 significant digits
(csv), ``repr`` (json) or ``%.6g`` (markdown), keys keep insertion order, and provenance holds
the command, seed, package versions and a hash of the canonical config. There
are no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from importlib import metadata
from typing import Any, Mapping, Sequence

import numpy as np
import scipy

FORMATS = ("csv", "md", "json")


def _package_version() -> str:
    try:
        return metadata.version("shipgate")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _plain(value: Any) -> Any:
    """JSON-safe, deterministic version of ``value``."""
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (frozenset, set)):
        return sorted(_plain(v) for v in value)
    return value


def config_hash(config: Any) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Provenance:
    command: str
    seed: int | None
    config: Any = None
    versions: Mapping[str, str] = field(
        default_factory=lambda: {"shipgate": _package_version(), "numpy": np.__version__, "scipy": scipy.__version__}
    )

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "config_hash": config_hash(self.config),
            "versions": dict(self.versions),
        }


def _cell_csv(v: Any) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".15g")
    if isinstance(v, list):
        return ";".join(_cell_csv(x) for x in v)
    return str(v)


def _cell_md(v: Any) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return ", ".join(_cell_md(x) for x in v)
    return str(v).replace("|", "\\|")


def _columns(rows: Sequence[Mapping]) -> list[str]:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def to_csv(rows: Sequence[Mapping], provenance: Provenance | None = None) -> str:
    buf = io.StringIO()
    if provenance is not None:
        for k, v in provenance.as_dict().items():
            if isinstance(v, dict):
                v = " ".join(f"{a}={b}" for a, b in v.items())
            elif v is None:
                v = "none"
            buf.write(f"# {k}: {v}\n")
    cols = _columns(rows)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell_csv(r.get(c)) for c in cols])
    return buf.getvalue()


def md_table(rows: Sequence[Mapping]) -> str:
    cols = _columns(rows)
    if not cols:
        return "_(no rows)_\n"
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(_cell_md(r.get(c)) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def to_markdown(
    rows: Sequence[Mapping],
    provenance: Provenance | None = None,
    title: str | None = None,
    preamble: Sequence[str] = (),
) -> str:
    parts = []
    if title:
        parts.append(f"# {title}\n")
    for line in preamble:
        parts.append(line + "\n")
    parts.append(md_table(rows))
    if provenance is not None:
        p = provenance.as_dict()
        parts.append("## Provenance\n")
        parts.append(f"- command: {p['command']}")
        parts.append(f"- seed: {'none' if p['seed'] is None else p['seed']}")
        parts.append(f"- config_hash: {p['config_hash']}")
        parts.append("- versions: " + ", ".join(f"{k} {v}" for k, v in p["versions"].items()) + "\n")
    return "\n".join(parts)


def to_json(
    rows: Sequence[Mapping],
    provenance: Provenance | None = None,
    extra: Mapping[str, Any] | None = None,
) -> str:
    doc: dict[str, Any] = {}
    if extra:
        doc.update(_plain(extra))
    doc["rows"] = _plain(list(rows))
    if provenance is not None:
        doc["provenance"] = provenance.as_dict()
    return json.dumps(doc, indent=2) + "\n"


def render(
    rows: Sequence[Mapping],
    fmt: str,
    provenance: Provenance | None = None,
    title: str | None = None,
    extra: Mapping[str, Any] | None = None,
) -> str:
    """Render ``rows`` in one of ``csv``, ``md`` or ``json``.

    ``extra`` carries scalar results (a statement, a decision) that sit next to
    the table: top-level keys in json, preamble lines in markdown and comment
    lines in csv.
    """
    if fmt == "csv":
        head = "".join(f"# {k}: {_cell_csv(v)}\n" for k, v in (extra or {}).items())
        return head + to_csv(rows, provenance)
    if fmt == "md":
        pre = [f"**{k}**: {_cell_md(v)}" for k, v in (extra or {}).items()]
        return to_markdown(rows, provenance, title, pre)
    if fmt == "json":
        return to_json(rows, provenance, extra)
    raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
