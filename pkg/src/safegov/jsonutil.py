"""Deterministic JSON serialization and content hashing.

Floats are rendered with 17 significant digits, which round-trips IEEE
doubles exactly, so identical in-memory values always produce identical
bytes regardless of platform repr choices.
"""

from __future__ import annotations

import hashlib
import math
import os
import tempfile


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("canonical JSON only supports finite floats")
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return format(x, ".17g")


def dumps(obj, indent: int | None = None) -> str:
    """Canonical JSON: sorted keys, fixed float format, UTF-8 friendly."""
    parts: list[str] = []
    _write(obj, parts, indent, 0)
    return "".join(parts)


def _write(obj, parts: list[str], indent: int | None, level: int) -> None:
    nl = "\n" + " " * (indent * (level + 1)) if indent else ""
    nl_close = "\n" + " " * (indent * level) if indent else ""
    sep = "," + (nl if indent else " ")
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, float):
        parts.append(_fmt_float(obj))
    elif isinstance(obj, str):
        import json as _json

        parts.append(_json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{" + nl)
        keys = sorted(obj)
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise TypeError("canonical JSON keys must be strings")
            import json as _json

            parts.append(_json.dumps(k, ensure_ascii=False) + ": ")
            _write(obj[k], parts, indent, level + 1)
            if i + 1 < len(keys):
                parts.append(sep)
        parts.append(nl_close + "}")
    elif isinstance(obj, (list, tuple)):
        if not len(obj):
            parts.append("[]")
            return
        parts.append("[" + nl)
        for i, v in enumerate(obj):
            _write(v, parts, indent, level + 1)
            if i + 1 < len(obj):
                parts.append(sep)
        parts.append(nl_close + "]")
    else:
        import numpy as np

        if isinstance(obj, np.integer):
            parts.append(str(int(obj)))
        elif isinstance(obj, np.floating):
            parts.append(_fmt_float(float(obj)))
        elif isinstance(obj, np.ndarray):
            _write(obj.tolist(), parts, indent, level)
        else:
            raise TypeError(f"cannot serialize {type(obj)!r}")


def content_hash(obj) -> str:
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()


def write_atomic(path: str, text: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
