import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Sequence, Union

import pandas as pd
import scipy.io
import scipy.sparse as sp

PathLike = Union[str, Path]


@contextmanager
def atomic_write(path: PathLike, mode: str = "w") -> Iterator:
    """
    I'm writing to a temporary file next to the target and renaming it into
    place, so readers never see a half-written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: PathLike, payload) -> None:
    with atomic_write(path) as handle:
        json.dump(payload, handle)
        handle.write("\n")


def read_json(path: PathLike):
    with open(path) as handle:
        return json.load(handle)


def write_csv(path: PathLike, frame: pd.DataFrame) -> None:
    with atomic_write(path) as handle:
        frame.to_csv(handle, index=False, lineterminator="\n")


def write_rows(path: PathLike, rows: Sequence[dict], columns: Sequence[str]) -> pd.DataFrame:
    """Writes rows with a fixed column order and returns the frame"""
    frame = pd.DataFrame(list(rows), columns=list(columns))
    write_csv(path, frame)
    return frame


def write_matrix_market(path: PathLike, matrix: sp.spmatrix, symmetric: bool = True) -> None:
    """Coordinate real Matrix Market file; symmetric matrices store the lower triangle"""
    with atomic_write(path, "wb") as handle:
        scipy.io.mmwrite(
            handle,
            sp.coo_matrix(matrix),
            field="real",
            symmetry="symmetric" if symmetric else "general",
        )
