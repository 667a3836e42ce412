import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from . import error_codes as EC
from .exceptions import InvalidInput


class SaveResult(dict):
    @property
    def path(self): return self["path"]
    @property
    def size(self): return self["size"]


def save_atomic(content: str | bytes, *, path: str | os.PathLike, overwrite: bool = True) -> SaveResult:
    """
    Writes content next to the destination and renames it into place, so readers
    never observe a half-written file.
    """
    target = Path(path)
    if target.exists() and not overwrite:
        raise FileExistsError(str(target))
    target.parent.mkdir(parents=True, exist_ok=True)

    data = content.encode("utf-8") if isinstance(content, str) else bytes(content)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=str(target.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return SaveResult(path=str(target), size=len(data))


def save_json(payload: dict, *, path: str | os.PathLike) -> SaveResult:
    return save_atomic(json.dumps(payload, indent=2, sort_keys=False) + "\n", path=path)


def load_json(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_series_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    """
    Reads a header + one-row-per-time-index CSV. Returns (channel names, K x n array).
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InvalidInput(f"Could not parse CSV: {e}", code=EC.GEN_PARSE_FAILED, context={"path": str(path)})

    if frame.shape[1] == 0 or frame.shape[0] == 0:
        raise InvalidInput("CSV has no data", code=EC.GEN_PARSE_FAILED, context={"path": str(path)})

    bad = [str(c) for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if bad:
        raise InvalidInput(
            f"Non-numeric values in column(s): {', '.join(bad)}",
            code=EC.GEN_PARSE_FAILED,
            context={"path": str(path), "channels": bad},
        )

    missing = [str(c) for c in frame.columns if frame[c].isna().any()]
    if missing:
        raise InvalidInput(
            f"Missing values in column(s): {', '.join(missing)}",
            code=EC.CLI_MISSING_VALUES,
            context={"path": str(path), "channels": missing},
        )

    values = frame.to_numpy(dtype=float).T.copy()
    if not np.all(np.isfinite(values)):
        raise InvalidInput("CSV contains non-finite values", code=EC.GEN_PARSE_FAILED, context={"path": str(path)})
    return [str(c) for c in frame.columns], values


def write_series_csv(values: np.ndarray, names: list[str], *, path: str | os.PathLike) -> SaveResult:
    # 17 significant digits round-trip every double exactly
    frame = pd.DataFrame(np.asarray(values, dtype=float).T, columns=list(names))
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    return save_atomic(buf.getvalue(), path=path)
