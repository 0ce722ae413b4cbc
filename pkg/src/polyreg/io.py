"""Line-oriented text formats.

``.poly``::

    p n d
    c e1 e2 ... en      (one line per term)

``.fac``: header ``p n d m``, then m term blocks separated by ``%`` lines,
then an optional ``DELTA d1 ... dm`` line. Blank lines and ``#`` comments
are ignored.
"""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import List, Optional, Tuple

from .algebra import Polynomial, PrimeField


class FormatError(ValueError):
    pass


def _lines(text: str) -> List[str]:
    out = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def _parse_term(line: str, p: int, n: int) -> Tuple[Tuple[int, ...], int]:
    parts = line.split()
    if len(parts) != n + 1:
        raise FormatError(f"term line {line!r} should have {n + 1} fields")
    try:
        nums = [int(x) for x in parts]
    except ValueError:
        raise FormatError(f"non-integer field in {line!r}") from None
    c, exps = nums[0], nums[1:]
    if not 0 <= c < p:
        raise FormatError(f"coefficient {c} not in [0, {p})")
    for e in exps:
        if not 0 <= e < p:
            raise FormatError(f"exponent {e} not in [0, {p})")
    return tuple(exps), c


def _terms_to_poly(lines, field, n, d) -> Polynomial:
    terms = {}
    for line in lines:
        e, c = _parse_term(line, field.p, n)
        terms[e] = terms.get(e, 0) + c
    P = Polynomial(field, n, terms)
    if P.degree > d:
        raise FormatError(f"polynomial has degree {P.degree} above declared d={d}")
    return P


def _header(line: str, count: int) -> List[int]:
    parts = line.split()
    if len(parts) != count:
        raise FormatError(f"header {line!r} should have {count} fields")
    try:
        return [int(x) for x in parts]
    except ValueError:
        raise FormatError(f"bad header {line!r}") from None


def loads_poly(text: str) -> Polynomial:
    lines = _lines(text)
    if not lines:
        raise FormatError("empty .poly input")
    p, n, d = _header(lines[0], 3)
    try:
        field = PrimeField(p)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return _terms_to_poly(lines[1:], field, n, d)


def dumps_poly(P: Polynomial, d: Optional[int] = None) -> str:
    d = P.degree if d is None else d
    out = [f"{P.p} {P.n} {d}"]
    for e, c in P.sorted_terms():
        out.append(" ".join([str(c)] + [str(x) for x in e]))
    return "\n".join(out) + "\n"


def loads_factor(text: str):
    """Returns (polys, delta or None, p, n)."""
    lines = _lines(text)
    if not lines:
        raise FormatError("empty .fac input")
    p, n, d, m = _header(lines[0], 4)
    try:
        field = PrimeField(p)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    body = lines[1:]
    delta = None
    if body and body[-1].upper().startswith("DELTA"):
        try:
            delta = [int(x) for x in body[-1].split()[1:]]
        except ValueError:
            raise FormatError("bad DELTA line") from None
        if len(delta) != m:
            raise FormatError(f"DELTA lists {len(delta)} bounds for {m} polynomials")
        body = body[:-1]
    blocks: List[List[str]] = [[]]
    for line in body:
        if line == "%":
            blocks.append([])
        else:
            blocks[-1].append(line)
    if m == 0 and blocks == [[]]:
        blocks = []
    if len(blocks) != m:
        raise FormatError(f"found {len(blocks)} polynomial blocks, header says {m}")
    polys = [_terms_to_poly(b, field, n, d) for b in blocks]
    return polys, delta, p, n


def dumps_factor(polys, p: int, n: int, delta=None) -> str:
    d = max((P.degree for P in polys), default=0)
    out = [f"{p} {n} {d} {len(polys)}"]
    for i, P in enumerate(polys):
        if i:
            out.append("%")
        for e, c in P.sorted_terms():
            out.append(" ".join([str(c)] + [str(x) for x in e]))
    if delta is not None:
        out.append("DELTA " + " ".join(str(x) for x in delta))
    return "\n".join(out) + "\n"


def read_poly(path) -> Polynomial:
    return loads_poly(Path(path).read_text())


def write_poly(path, P: Polynomial) -> None:
    Path(path).write_text(dumps_poly(P))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
