"""
FCIDUMP reader.

Header: a ``&FCI NORB=.., NELEC=.., MS2=..`` namelist closed by ``&END`` or
``/``. Records: ``value i j k l`` with 1-based orbital indices; ``i j 0 0``
is a one-electron integral, ``0 0 0 0`` the core energy, ``i 0 0 0``
orbital energies (ignored).
"""

import re
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from loguru import logger

from sbci.config import REGEX
from sbci.core.errors import ParseError
from sbci.core.fci import FciProblem


def _fill_eri(eri: np.ndarray, i: int, j: int, k: int, l: int, value: float) -> None:
    for a, b, c, d in ((i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
                       (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i)):
        eri[a, b, c, d] = value


def _parse_header(lines: List[str]) -> Tuple[Dict[str, int], int]:
    header_lines = []
    for number, line in enumerate(lines, start=1):
        if not header_lines and not line.strip():
            continue
        if not header_lines and "&FCI" not in line.upper():
            raise ParseError("missing &FCI namelist", number)
        header_lines.append(line)
        stripped = line.strip().upper()
        if "&END" in stripped or stripped == "/" or stripped.endswith("/"):
            text = " ".join(header_lines).upper()
            namelist = re.search(REGEX["FCI_NAMELIST"], text, re.DOTALL)
            if namelist is None:
                raise ParseError("missing &FCI namelist", 1)
            fields = {name: int(value) for name, value in re.findall(REGEX["FCI_FIELD"], namelist.group(1))}
            for required in ("NORB", "NELEC"):
                if required not in fields:
                    raise ParseError(f"header lacks {required}", number)
            fields.setdefault("MS2", 0)
            if fields["NORB"] < 1 or fields["NELEC"] < 0:
                raise ParseError(f"invalid header values NORB={fields['NORB']} NELEC={fields['NELEC']}", number)
            return fields, number
    raise ParseError("header is not terminated by &END or /", len(lines) or 1)


def parse_fcidump(text: str) -> FciProblem:
    lines = text.splitlines()
    fields, header_end = _parse_header(lines)
    norb = fields["NORB"]
    h1 = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    e_core = 0.0
    skipped = 0

    for number, line in enumerate(lines[header_end:], start=header_end + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise ParseError(f"expected 'value i j k l', got {len(tokens)} fields", number)
        try:
            value = float(tokens[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(t) for t in tokens[1:])
        except ValueError:
            raise ParseError(f"malformed integral record: {line.strip()!r}", number)
        if not all(0 <= idx <= norb for idx in (i, j, k, l)):
            raise ParseError(f"orbital index out of range 0..{norb}: {line.strip()!r}", number)

        if i and j and k and l:
            _fill_eri(eri, i - 1, j - 1, k - 1, l - 1, value)
        elif i and j and not k and not l:
            h1[i - 1, j - 1] = h1[j - 1, i - 1] = value
        elif not (i or j or k or l):
            e_core = value
        else:
            skipped += 1

    if skipped:
        logger.debug(f"FCIDUMP: ignored {skipped} orbital-energy records")
    return FciProblem(norb=norb, nelec=fields["NELEC"], ms2=fields["MS2"],
                      e_core=e_core, h1=h1, eri=eri)


def read_fcidump(path: Path) -> FciProblem:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"FCIDUMP not found: {path}")
    problem = parse_fcidump(path.read_text(encoding="utf-8"))
    logger.info(f"Loaded FCIDUMP {path.name}: NORB={problem.norb} NELEC={problem.nelec} MS2={problem.ms2}")
    return problem
