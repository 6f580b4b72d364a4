"""
Output generation: deterministic result files and output-directory hygiene.

Every table is written with a fixed float format and every JSON document
with sorted keys, so identical results produce byte-identical files.
"""

import json
import math
import shutil
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.10g"


def ensure_dir(path: Path) -> None:
    """
    Create directory and any necessary parent directories.

    Args:
        path: Directory path to create
    """
    path.mkdir(parents=True, exist_ok=True)


def get_output_path(base_dir: Path, filename: str) -> Path:
    """
    Resolve a result file name inside the output directory.

    Args:
        base_dir: Output directory
        filename: File name, possibly derived from a trace or config id

    Returns:
        Path inside base_dir

    Raises:
        ValueError: If the name contains path separators or traversal
    """
    if not filename or filename.strip() != filename:
        raise ValueError(f"Invalid output file name: '{filename}'")
    if "/" in filename or "\\" in filename or filename in {".", ".."}:
        raise ValueError(f"Output file name must not contain path parts: {filename}")
    return base_dir / filename


def write_file(path: Path, content: str) -> None:
    """
    Write content to file, creating directories as needed.

    Args:
        path: File path to write to
        content: Content to write
    """
    ensure_dir(path.parent)
    path.write_text(content, encoding="utf-8")


def write_table(path: Path, table: pd.DataFrame) -> None:
    """Write a table as CSV with a stable float format and no index."""
    write_file(path, table.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _clean(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (float, np.floating)) and not math.isfinite(float(value)):
        return None
    return value


def to_json(data: Any) -> str:
    """Serialize with sorted keys; NaN and infinities become null."""
    return json.dumps(_clean(data), indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path: Path, data: Any) -> None:
    write_file(path, to_json(data))


def read_table(path: Path, string_columns: tuple[str, ...] = ()) -> pd.DataFrame:
    """
    Read a CSV result table; ``string_columns`` are kept as text (ids like "001").

    Raises:
        FileNotFoundError: If the file doesn't exist
    """
    if not path.exists():
        raise FileNotFoundError(f"Result table not found: {path}")
    return pd.read_csv(path, dtype={name: str for name in string_columns})


def clean_output_dir(output_dir: Path) -> None:
    """
    Remove and recreate output directory.

    Args:
        output_dir: Directory to clean and recreate

    Raises:
        ValueError: If output directory path appears unsafe
    """
    resolved_output = output_dir.resolve()

    if str(resolved_output) in ["/", "/Users", "/home", "/root", "/System", "/Applications"]:
        raise ValueError(
            f"Refusing to clean potentially dangerous directory: {resolved_output}"
        )

    critical_files = [".bash_profile", ".bashrc", ".zshrc", ".git", "pyproject.toml"]
    if any(
        (resolved_output / critical_file).exists() for critical_file in critical_files
    ):
        raise ValueError(
            f"Directory appears to contain user files, refusing to clean: {resolved_output}"
        )

    if output_dir.exists():
        shutil.rmtree(output_dir)
    output_dir.mkdir(parents=True)
