"""Collapse linear/affine networks to matrices and check relations exactly.

Exact matrix evaluation is the sampling-free oracle for linear
representations: a relation ``lhs = rhs`` holds iff the difference matrix
vanishes, and its Frobenius norm is the residual reported here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netcore import GeneratorNet, block_width
from .presentation import (
    Compose,
    Gen,
    Identity,
    InvGen,
    Presentation,
    Product,
    Scale,
    Sum,
    desugar,
    expr_arity,
)


class ExtractError(ValueError):
    pass


@dataclass
class LinearRep:
    """Matrices (and offsets for affine maps) keyed by network name."""

    block_dim: int
    matrices: dict = field(default_factory=dict)
    offsets: dict = field(default_factory=dict)  # name -> vector, absent for linear maps
    monoidal: str = "cartesian"

    def affine(self):
        return any(v is not None for v in self.offsets.values())


def collapse(net: GeneratorNet):
    """Return ``(M, c)`` with ``net(x) == M @ x + c``; ``c`` is None for linear nets."""
    if net.regime == "nonlinear":
        raise ExtractError(f"net {net.name} is nonlinear and has no matrix form")
    m = np.eye(net.in_width)
    c = np.zeros(net.in_width) if net.regime == "affine" else None
    for w, b in net.params:
        m = w @ m
        if c is not None:
            c = w @ c + b
    return m, c


def collapse_all(nets: dict) -> LinearRep:
    dims = {n.block_dim for n in nets.values()}
    modes = {n.monoidal for n in nets.values()}
    if len(dims) != 1 or len(modes) != 1:
        raise ExtractError("nets disagree on block dimension or product mode")
    rep = LinearRep(dims.pop(), monoidal=modes.pop())
    for name, net in nets.items():
        rep.matrices[name], rep.offsets[name] = collapse(net)
    return rep


class _MatrixEval:
    def __init__(self, rep: LinearRep, pres: Presentation):
        if pres.monoidal != rep.monoidal:
            raise ExtractError(f"representation uses {rep.monoidal} products, presentation {pres.monoidal}")
        if rep.monoidal == "tensor" and rep.affine():
            raise ExtractError("affine maps have no tensor product")
        self.rep = rep
        self.pres = pres
        self.arities = {g.name: g.arity for g in pres.generators}
        self.inverse_of = {g.name: g.inverse_name for g in pres.generators if g.invertible}

    def width(self, blocks):
        return block_width(blocks, self.rep.block_dim, self.rep.monoidal)

    def gen(self, name, arity):
        if name not in self.rep.matrices:
            raise ExtractError(f"no matrix for {name}")
        m = np.asarray(self.rep.matrices[name], dtype=np.float64)
        if m.shape != (self.width(arity[1]), self.width(arity[0])):
            raise ExtractError(
                f"matrix for {name} is {m.shape[0]}x{m.shape[1]}, arity needs "
                f"{self.width(arity[1])}x{self.width(arity[0])}"
            )
        c = self.rep.offsets.get(name)
        return m, None if c is None else np.asarray(c, dtype=np.float64)

    def eval(self, expr):
        """Affine pair ``(M, c)`` for a desugared expression."""
        if isinstance(expr, Gen):
            return self.gen(expr.name, self.arities[expr.name])
        if isinstance(expr, InvGen):
            a, b = self.arities[expr.name]
            inv_name = self.inverse_of[expr.name]
            if inv_name in self.rep.matrices:
                return self.gen(inv_name, (b, a))
            # no trained inverse supplied: use the exact inverse of the forward map
            m, c = self.gen(expr.name, (a, b))
            if m.shape[0] != m.shape[1]:
                raise ExtractError(f"{expr.name} is not square; cannot invert")
            mi = np.linalg.inv(m)
            return mi, None if c is None else -mi @ c
        if isinstance(expr, Identity):
            return np.eye(self.width(expr.blocks)), None
        if isinstance(expr, Compose):
            m1, c1 = self.eval(expr.outer)
            m2, c2 = self.eval(expr.inner)
            c = None
            if c1 is not None or c2 is not None:
                c = (m1 @ c2 if c2 is not None else 0.0) + (c1 if c1 is not None else 0.0)
            return m1 @ m2, c
        if isinstance(expr, Product):
            m1, c1 = self.eval(expr.left)
            m2, c2 = self.eval(expr.right)
            if self.rep.monoidal == "tensor":
                return np.kron(m1, m2), None
            m = np.zeros((m1.shape[0] + m2.shape[0], m1.shape[1] + m2.shape[1]))
            m[: m1.shape[0], : m1.shape[1]] = m1
            m[m1.shape[0] :, m1.shape[1] :] = m2
            c = None
            if c1 is not None or c2 is not None:
                c = np.concatenate(
                    [c1 if c1 is not None else np.zeros(m1.shape[0]), c2 if c2 is not None else np.zeros(m2.shape[0])]
                )
            return m, c
        if isinstance(expr, Sum):
            m1, c1 = self.eval(expr.left)
            m2, c2 = self.eval(expr.right)
            c = None
            if c1 is not None or c2 is not None:
                c = (c1 if c1 is not None else 0.0) + (c2 if c2 is not None else 0.0)
            return m1 + m2, c
        if isinstance(expr, Scale):
            coef = expr.coef
            k = float(self.pres.scalars[coef]) if isinstance(coef, str) else float(coef)
            m, c = self.eval(expr.expr)
            return k * m, None if c is None else k * c
        raise ExtractError(f"cannot evaluate {expr!r}")


def relation_matrices(rep: LinearRep, pres: Presentation, relations=None) -> dict:
    """``label -> (lhs (M, c), rhs (M, c))`` for every relation."""
    ev = _MatrixEval(rep, pres)
    out = {}
    for rel in pres.relations if relations is None else relations:
        lhs, rhs = desugar(rel.lhs), desugar(rel.rhs)
        if expr_arity(lhs, ev.arities) != expr_arity(rhs, ev.arities):
            raise ExtractError(f"arity mismatch in relation {rel.label!r}")
        out[rel.label] = (ev.eval(lhs), ev.eval(rhs))
    return out


def difference(lhs, rhs):
    """Stacked ``[dM | dc]`` of two affine pairs."""
    (m1, c1), (m2, c2) = lhs, rhs
    d = m1 - m2
    if c1 is None and c2 is None:
        return d
    dc = (c1 if c1 is not None else 0.0) - (c2 if c2 is not None else 0.0)
    return np.column_stack([d, np.broadcast_to(dc, (d.shape[0],))])


def verify_matrix_relations(rep: LinearRep, pres: Presentation, relations=None) -> dict:
    """Frobenius norm of ``lhs - rhs`` per relation label, computed exactly."""
    return {
        label: float(np.linalg.norm(difference(lhs, rhs)))
        for label, (lhs, rhs) in relation_matrices(rep, pres, relations).items()
    }


def sampled_matrix_residual(lhs, rhs, points) -> float:
    """Mean over ``points`` of ``||(lhs - rhs)(x)||^2`` using the matrix forms."""
    (m1, c1), (m2, c2) = lhs, rhs
    y = points @ (m1 - m2).T
    if c1 is not None:
        y = y + c1
    if c2 is not None:
        y = y - c2
    return float(np.einsum("ij,ij->", y, y)) / points.shape[0]


# ---------------------------------------------------------------------------
# matrix files


def save_matrices(rep: LinearRep, path):
    doc = {
        "block_dim": rep.block_dim,
        "monoidal": rep.monoidal,
        "generators": {
            name: {
                "matrix": np.asarray(m).tolist(),
                "offset": None if rep.offsets.get(name) is None else np.asarray(rep.offsets[name]).tolist(),
            }
            for name, m in sorted(rep.matrices.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_matrices(path) -> LinearRep:
    doc = json.loads(Path(path).read_text())
    try:
        rep = LinearRep(int(doc["block_dim"]), monoidal=doc.get("monoidal", "cartesian"))
        for name, g in doc["generators"].items():
            m = np.array(g["matrix"], dtype=np.float64)
            if m.ndim != 2:
                raise ExtractError(f"matrix for {name} is not two-dimensional")
            rep.matrices[name] = m
            rep.offsets[name] = None if g.get("offset") is None else np.array(g["offset"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ExtractError(f"malformed matrix file: {exc}") from None
    return rep


def rep_from_matrix(matrix, pres: Presentation, name=None) -> LinearRep:
    """Single-generator representation; the block size is read off the matrix shape."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ExtractError("matrix is not two-dimensional")
    gen = pres.generators[0] if name is None else pres.generator(name)
    a, b = gen.arity
    blocks = a or b
    width = m.shape[1] if a else m.shape[0]
    if pres.monoidal == "tensor":
        n = round(width ** (1.0 / blocks))
    else:
        n = width // blocks
    if n < 1 or block_width(blocks, n, pres.monoidal) != width:
        raise ExtractError(f"a {m.shape[0]}x{m.shape[1]} matrix does not fit {gen.name} of arity {a}->{b}")
    rep = LinearRep(n, monoidal=pres.monoidal)
    rep.matrices[gen.name] = m
    rep.offsets[gen.name] = None
    return rep


def load_rep(path, pres: Presentation) -> LinearRep:
    """Read either a JSON matrix file or a whitespace table holding one matrix."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return load_matrices(path)
    try:
        m = np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise ExtractError(f"malformed matrix file: {exc}") from None
    return rep_from_matrix(m, pres)
