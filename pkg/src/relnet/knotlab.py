"""Sliced link diagrams and the bracket defined by trained crossing/cup/cap maps.

A diagram file has one slice per line, bottom slice first; each slice lists
primitives left to right.  ``/`` may separate slices on a single line::

    cup
    cross
    cap
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import NumpyOps
from .presentation import RT_LABELS, Compose, Gen, Identity, InvGen, Product, builtin
from .relcomp import compile_expr, infer_block_dim

# primitive -> (input strands, output strands)
PRIMITIVES = {
    "cup": (0, 2),
    "cap": (2, 0),
    "cross": (2, 2),
    "cross_inv": (2, 2),
    "strand": (1, 1),
}
MOVES = ("R2_insert", "R3_exchange", "slide_n_past_R")

# trained relation whose residual bounds the bracket change of each move
MOVE_RELATION = {
    "R2_insert": RT_LABELS["rinv_r"],
    "R3_exchange": RT_LABELS["yang_baxter"],
    "slide_n_past_R": RT_LABELS["slide"],
}


class DiagramError(ValueError):
    pass


class MoveNotApplicable(DiagramError):
    pass


def _widths(slice_):
    return sum(PRIMITIVES[p][0] for p in slice_), sum(PRIMITIVES[p][1] for p in slice_)


@dataclass(frozen=True)
class SlicedDiagram:
    slices: tuple

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(tuple(s) for s in self.slices))
        check_diagram(self, closed=False)

    @property
    def closed(self):
        return _widths(self.slices[0])[0] == 0 and _widths(self.slices[-1])[1] == 0

    def __str__(self):
        return "\n".join(" ".join(s) for s in self.slices)


def check_diagram(d: SlicedDiagram, closed=True):
    if not d.slices:
        raise DiagramError("empty diagram")
    for k, s in enumerate(d.slices, start=1):
        if not s:
            raise DiagramError(f"slice {k} is empty")
        for p in s:
            if p not in PRIMITIVES:
                raise DiagramError(f"slice {k}: unknown primitive {p!r}")
    for k in range(1, len(d.slices)):
        out_w = _widths(d.slices[k - 1])[1]
        in_w = _widths(d.slices[k])[0]
        if out_w != in_w:
            raise DiagramError(
                f"slice {k + 1} takes {in_w} strands but slice {k} leaves {out_w}"
            )
    if closed and not d.closed:
        raise DiagramError("diagram is not closed (needs 0 strands at bottom and top)")


def parse_diagram(text: str, closed=True) -> SlicedDiagram:
    slices = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0]
        for chunk in line.split("/"):
            toks = chunk.split()
            if toks:
                slices.append(tuple(toks))
    d = SlicedDiagram(tuple(slices))
    if closed:
        check_diagram(d, closed=True)
    return d


def diagram_expr(d: SlicedDiagram):
    """The diagram as a relation expression over the RT generators."""
    prim = {"cup": Gen("u"), "cap": Gen("n"), "cross": Gen("R"), "cross_inv": InvGen("R"), "strand": Identity(1)}
    expr = None
    for s in d.slices:
        layer = prim[s[0]]
        for p in s[1:]:
            layer = Product(layer, prim[p])
        expr = layer if expr is None else Compose(layer, expr)
    return expr


def evaluate_bracket(d: SlicedDiagram, nets: dict, inputs=None) -> np.ndarray:
    """Compose the slice maps bottom to top.

    A closed diagram starts from the scalar ``1`` and yields a length-1 vector.
    Open diagrams need ``inputs`` (a batch) and return the image batch.
    """
    pres = builtin("rt_system")
    n = infer_block_dim(pres, nets)
    fn = compile_expr(diagram_expr(d), pres, nets, n)
    if inputs is None:
        if _widths(d.slices[0])[0] != 0:
            raise DiagramError("open diagram needs explicit inputs")
        inputs = np.ones((1, 1))
    out = fn(np.asarray(inputs, dtype=np.float64), NumpyOps())
    if d.closed:
        return out[0]
    return out


# ---------------------------------------------------------------------------
# moves


def _starts(slice_, side):
    """Strand offsets where each primitive begins on the input (0) or output (1) side."""
    pos, out = 0, []
    for p in slice_:
        out.append(pos)
        pos += PRIMITIVES[p][side]
    return out


def _split_at(slice_, side, pos):
    """Split a slice where a primitive begins at strand ``pos``; None if no boundary."""
    starts = _starts(slice_, side)
    for i, s in enumerate(starts):
        if s == pos:
            return slice_[:i], slice_[i:]
    return None


def _r2_insert(d):
    for k, s in enumerate(d.slices):
        w = _widths(s)[1]
        if w >= 2:
            pad = ("strand",) * (w - 2)
            new = d.slices[: k + 1] + (("cross",) + pad, ("cross_inv",) + pad) + d.slices[k + 1 :]
            return SlicedDiagram(new)
    raise MoveNotApplicable("R2_insert: no slice with two adjacent strands")


def _r3_exchange(d):
    sl = d.slices
    for k in range(len(sl) - 2):
        a, b, c = sl[k], sl[k + 1], sl[k + 2]
        if not (a == c and _widths(a) == _widths(b)):
            continue
        for swap in ((("cross", "strand"), ("strand", "cross")), (("strand", "cross"), ("cross", "strand"))):
            first, second = swap
            hit = _find_local(a, b, first, second)
            if hit is not None:
                pre, post = hit
                new_a = pre + second + post
                new_b = pre + first + post
                return SlicedDiagram(sl[:k] + (new_a, new_b, new_a) + sl[k + 3 :])
    raise MoveNotApplicable("R3_exchange: no three-slice crossing pattern")


def _find_local(a, b, pat_a, pat_b):
    """Common prefix/suffix so that ``a = pre+pat_a+post`` and ``b = pre+pat_b+post``."""
    for i in range(len(a) - 1):
        if a[i : i + 2] == pat_a:
            pre, post = a[:i], a[i + 2 :]
            if b == pre + pat_b + post:
                return pre, post
    return None


def _slide(d):
    sl = d.slices
    for k in range(len(sl) - 1):
        lower, upper = sl[k], sl[k + 1]
        for pos in range(_widths(lower)[1] - 2):
            lo = _split_at(lower, 1, pos)
            up = _split_at(upper, 0, pos)
            if lo is None or up is None:
                continue
            (lo_pre, lo_rest), (up_pre, up_rest) = lo, up
            # (id x n)(R x id) -> (n x id)(id x R)
            if lo_rest[:2] == ("cross", "strand") and up_rest[:2] == ("strand", "cap"):
                new_lower = lo_pre + ("strand", "cross") + lo_rest[2:]
                new_upper = up_pre + ("cap", "strand") + up_rest[2:]
                return SlicedDiagram(sl[:k] + (new_lower, new_upper) + sl[k + 2 :])
            # (n x id)(id x R) -> (id x n)(R x id)
            if lo_rest[:2] == ("strand", "cross") and up_rest[:2] == ("cap", "strand"):
                new_lower = lo_pre + ("cross", "strand") + lo_rest[2:]
                new_upper = up_pre + ("strand", "cap") + up_rest[2:]
                return SlicedDiagram(sl[:k] + (new_lower, new_upper) + sl[k + 2 :])
    raise MoveNotApplicable("slide_n_past_R: no cap next to a crossing")


def move_perturb(d: SlicedDiagram, move: str) -> SlicedDiagram:
    """Apply one trained move at its first applicable location."""
    if move == "R2_insert":
        return _r2_insert(d)
    if move == "R3_exchange":
        return _r3_exchange(d)
    if move == "slide_n_past_R":
        return _slide(d)
    raise ValueError(f"unknown move {move!r}; choose from {', '.join(MOVES)}")


def check_moves(d: SlicedDiagram, nets: dict, residuals: dict | None = None) -> list[dict]:
    """Bracket change under every applicable move, next to the bounding residual."""
    base = evaluate_bracket(d, nets)
    rows = []
    for move in MOVES:
        try:
            d2 = move_perturb(d, move)
        except MoveNotApplicable:
            rows.append({"move": move, "applicable": False})
            continue
        val = evaluate_bracket(d2, nets)
        label = MOVE_RELATION[move]
        rows.append(
            {
                "move": move,
                "applicable": True,
                "value": val.tolist(),
                "delta": float(np.max(np.abs(val - base))),
                "relation": label,
                "residual": None if residuals is None else residuals.get(label),
            }
        )
    return rows


UNKNOT = "cup\ncap\n"
# two positive crossings between two circles, with room for a slide next to the cap
HOPF = """\
cup
strand strand cup
strand cross strand
strand cross strand
strand strand cap
cap
"""
