"""
Matrix Market I/O for real symmetric matrices in coordinate format.

Only one triangle is stored on disk; reading mirrors it. Values are written
with 17 significant digits so a write/read cycle reproduces every entry.
"""

import re
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse
from loguru import logger

from sbci.config import REGEX
from sbci.core.errors import ParseError
from sbci.core.linalg import SymmetricLinearOperator


MM_HEADER = "%%MatrixMarket matrix coordinate real symmetric"


def parse_matrix_market(text: str, name: str = "matrix-market") -> SymmetricLinearOperator:
    lines = text.splitlines()
    if not lines or not re.match(REGEX["MM_HEADER"], lines[0].strip(), re.IGNORECASE):
        raise ParseError(f"expected header '{MM_HEADER}'", 1)

    size = None
    rows, cols, values = [], [], []
    for number, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        if size is None:
            match = re.match(REGEX["MM_SIZE"], stripped)
            if match is None:
                raise ParseError(f"malformed size line: {stripped!r}", number)
            n_rows, n_cols, nnz = (int(g) for g in match.groups())
            if n_rows != n_cols or n_rows < 1:
                raise ParseError(f"symmetric matrix must be square and nonempty, got {n_rows}x{n_cols}", number)
            size = (n_rows, nnz)
            continue

        match = re.match(REGEX["MM_ENTRY"], stripped)
        if match is None:
            raise ParseError(f"malformed entry: {stripped!r}", number)
        i, j = int(match.group(1)), int(match.group(2))
        try:
            value = float(match.group(3))
        except ValueError:
            raise ParseError(f"malformed value: {match.group(3)!r}", number)
        n = size[0]
        if not (1 <= i <= n and 1 <= j <= n):
            raise ParseError(f"index ({i}, {j}) outside 1..{n}", number)
        rows.append(i - 1)
        cols.append(j - 1)
        values.append(value)

    if size is None:
        raise ParseError("missing size line", len(lines))
    n, nnz = size
    if len(values) != nnz:
        raise ParseError(f"size line announces {nnz} entries, found {len(values)}", len(lines))

    rows_arr, cols_arr, vals_arr = np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(values)
    lower = np.where(rows_arr >= cols_arr)
    upper = np.where(rows_arr < cols_arr)
    # upper-triangle entries are folded onto the lower triangle
    r = np.concatenate([rows_arr[lower], cols_arr[upper]])
    c = np.concatenate([cols_arr[lower], rows_arr[upper]])
    v = np.concatenate([vals_arr[lower], vals_arr[upper]])
    triangle = scipy.sparse.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    strict = scipy.sparse.tril(triangle, k=-1)
    matrix = (triangle + strict.T).tocsr()
    return SymmetricLinearOperator.from_sparse(matrix, name=name)


def read_matrix_market(path: Path) -> SymmetricLinearOperator:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Matrix Market file not found: {path}")
    op = parse_matrix_market(path.read_text(encoding="utf-8"), name=path.stem)
    logger.info(f"Loaded {path.name}: dimension {op.dim}, {op.matrix.nnz} stored entries")
    return op


def format_matrix_market(matrix: Union[SymmetricLinearOperator, "scipy.sparse.spmatrix", np.ndarray]) -> str:
    if isinstance(matrix, SymmetricLinearOperator):
        if matrix.matrix is None:
            raise ValueError(f"operator {matrix.name!r} is matrix-free and cannot be written")
        matrix = matrix.matrix
    lower = scipy.sparse.tril(scipy.sparse.coo_matrix(matrix)).tocoo()
    order = np.lexsort((lower.row, lower.col))
    n = lower.shape[0]
    lines = [MM_HEADER, f"{n} {n} {lower.nnz}"]
    for idx in order:
        lines.append(f"{lower.row[idx] + 1} {lower.col[idx] + 1} {float(lower.data[idx]):.17g}")
    return "\n".join(lines) + "\n"


def write_matrix_market(matrix, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_matrix_market(matrix), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path
