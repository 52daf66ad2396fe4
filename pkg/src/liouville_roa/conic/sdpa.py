"""
Sparse SDPA (``.dat-s``) reader and writer.

SDPA's primal form is ``minimize sum_i c_i y_i`` subject to
``sum_i F_i y_i - F_0`` PSD.  A :class:`ConicProblem` maps onto it with
``c_sdpa = -c``, ``F_i = D_i`` and ``F_0 = -E``.  Equality rows
``a'y = b`` are written as one trailing diagonal block holding
``a'y - b >= 0`` followed by ``b - a'y >= 0``; the header comment records
how many such rows exist so :func:`import_sdpa` can rebuild ``A`` and ``b``.
Floats use the shortest round-trip representation.
"""

from __future__ import annotations

import re

import numpy as np
import scipy.sparse as sp

from .problem import ConicProblem, PSDBlock

_EQ_TAG = "equality-pairs"


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _fmt(v: float) -> str:
    # adding 0.0 turns -0.0 into 0.0
    return repr(float(v) + 0.0)


def sdpa_lines(problem: ConicProblem) -> list[str]:
    N = problem.num_vars
    neq = problem.num_eq
    sizes = problem.block_sizes()
    struct = [str(s) for s in sizes]
    if neq:
        struct.append(str(-2 * neq))
    lines = [
        '* sparse SDPA: minimize c\'y s.t. sum_i F_i y_i - F_0 PSD',
        f"* {_EQ_TAG} {neq}: last block rows 1..{neq} are a'y - b, rows {neq + 1}..{2 * neq} are b - a'y",
        str(N),
        str(len(struct)),
        " ".join(struct),
        " ".join(_fmt(-ci) for ci in problem.c) if N else "",
    ]
    entries = []
    for bi, blk in enumerate(problem.blocks, start=1):
        s = blk.size
        if blk.offset is not None:
            off = blk.offset.reshape(s, s)
            ii, jj = np.nonzero(np.triu(off))
            for i, j in zip(ii, jj):
                entries.append((0, bi, i + 1, j + 1, -off[i, j]))
        coo = blk.operator.tocoo()
        row, col = np.divmod(coo.row, s)
        mask = row <= col
        for r, c_, var, v in zip(row[mask], col[mask], coo.col[mask], coo.data[mask]):
            entries.append((int(var) + 1, bi, int(r) + 1, int(c_) + 1, v))
    if neq:
        bi = len(sizes) + 1
        for r, bval in enumerate(problem.b, start=1):
            if bval != 0.0:
                entries.append((0, bi, r, r, bval))
                entries.append((0, bi, neq + r, neq + r, -bval))
        A = problem.A.tocoo()
        for r, var, v in zip(A.row, A.col, A.data):
            entries.append((int(var) + 1, bi, int(r) + 1, int(r) + 1, v))
            entries.append((int(var) + 1, bi, neq + int(r) + 1, neq + int(r) + 1, -v))
    entries.sort(key=lambda e: e[:4])
    lines.extend(f"{m} {b} {i} {j} {_fmt(v)}" for m, b, i, j, v in entries)
    return lines


def export_sdpa(problem: ConicProblem, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(sdpa_lines(problem)) + "\n")


def dumps_sdpa(problem: ConicProblem) -> str:
    return "\n".join(sdpa_lines(problem)) + "\n"


_SPLIT = re.compile(r"[\s,{}()]+")


def _numbers(text: str):
    return [tok for tok in _SPLIT.split(text.strip()) if tok]


def loads_sdpa(text: str) -> ConicProblem:
    raw = text.splitlines()
    neq = 0
    pos = 0
    while pos < len(raw) and (raw[pos].startswith("*") or raw[pos].startswith('"')
                              or not raw[pos].strip()):
        m = re.search(_EQ_TAG + r" (\d+)", raw[pos])
        if m:
            neq = int(m.group(1))
        pos += 1

    def header_value(kind):
        nonlocal pos
        if pos >= len(raw):
            raise ParseError(f"missing {kind}", pos + 1)
        line = raw[pos]
        pos += 1
        return line, pos

    line, ln = header_value("variable count")
    try:
        N = int(_numbers(line)[0])
    except (ValueError, IndexError):
        raise ParseError("expected the number of variables", ln) from None
    line, ln = header_value("block count")
    try:
        nb = int(_numbers(line)[0])
    except (ValueError, IndexError):
        raise ParseError("expected the number of blocks", ln) from None
    line, ln = header_value("block structure")
    try:
        struct = [int(t) for t in _numbers(line)]
    except ValueError:
        raise ParseError("malformed block structure", ln) from None
    if len(struct) != nb:
        raise ParseError(f"expected {nb} block sizes, found {len(struct)}", ln)
    line, ln = header_value("objective")
    try:
        cs = [float(t) for t in _numbers(line)]
    except ValueError:
        raise ParseError("malformed objective vector", ln) from None
    if len(cs) != N:
        raise ParseError(f"expected {N} objective entries, found {len(cs)}", ln)

    rows = [[] for _ in range(nb)]
    for k in range(pos, len(raw)):
        ln = k + 1
        line = raw[k].strip()
        if not line:
            continue
        toks = _numbers(line)
        if len(toks) != 5:
            raise ParseError("expected 'matno blkno i j value'", ln)
        try:
            m, bi, i, j = (int(t) for t in toks[:4])
            v = float(toks[4])
        except ValueError:
            raise ParseError("malformed entry", ln) from None
        if not (0 <= m <= N and 1 <= bi <= nb):
            raise ParseError("matrix or block index out of range", ln)
        size = abs(struct[bi - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise ParseError("entry index outside its block", ln)
        if struct[bi - 1] < 0 and i != j:
            raise ParseError("off-diagonal entry in a diagonal block", ln)
        rows[bi - 1].append((m, i - 1, j - 1, v))

    c = -np.asarray(cs)
    eq_block = None
    if neq:
        if struct[-1] != -2 * neq:
            raise ParseError("equality block does not match the header", len(raw))
        eq_block = nb - 1
    blocks = []
    A_r, A_c, A_v = [], [], []
    b = np.zeros(neq)
    for bi in range(nb):
        size = abs(struct[bi])
        if bi == eq_block:
            for m, i, j, v in rows[bi]:
                if i >= neq:
                    continue
                if m == 0:
                    b[i] = v
                else:
                    A_r.append(i)
                    A_c.append(m - 1)
                    A_v.append(v)
            continue
        op_r, op_c, op_v = [], [], []
        off = np.zeros((size, size))
        for m, i, j, v in rows[bi]:
            if m == 0:
                off[i, j] = -v
                off[j, i] = -v
            else:
                op_r.append(i * size + j)
                op_c.append(m - 1)
                op_v.append(v)
                if i != j:
                    op_r.append(j * size + i)
                    op_c.append(m - 1)
                    op_v.append(v)
        if struct[bi] < 0:
            # diagonal blocks become independent 1x1 blocks
            for d in range(size):
                sel = [t for t, r in enumerate(op_r) if r == d * size + d]
                opd = sp.csr_matrix(([op_v[t] for t in sel], ([0] * len(sel), [op_c[t] for t in sel])),
                                    shape=(1, N))
                blocks.append(PSDBlock(1, opd, np.array([off[d, d]])))
            continue
        op = sp.csr_matrix((op_v, (op_r, op_c)), shape=(size * size, N))
        blocks.append(PSDBlock(size, op, off.ravel()))
    A = sp.csr_matrix((A_v, (A_r, A_c)), shape=(neq, N))
    return ConicProblem(c, A, b, blocks)


def import_sdpa(path) -> ConicProblem:
    with open(path, "r", encoding="ascii") as fh:
        return loads_sdpa(fh.read())
