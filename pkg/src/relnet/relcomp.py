"""Compile relation expressions into maps over generator networks and assemble the loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .netcore import GradTape, NumpyOps, block_width
from .presentation import (
    Compose,
    Gen,
    Identity,
    InvGen,
    Presentation,
    PresentationError,
    Product,
    RelExpr,
    Scale,
    Sum,
    desugar,
    expr_arity,
)

HELDOUT_POINTS = 4096


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class SampleDomain:
    low: float = -1.0
    high: float = 1.0
    width: int = 1

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("sample domain needs low < high")
        if self.width < 1:
            raise ValueError("sample width must be positive")

    @classmethod
    def named(cls, name, width):
        """``sym`` is ``[-1, 1]`` per coordinate, ``unit`` is ``[0, 1]``."""
        if name == "sym":
            return cls(-1.0, 1.0, width)
        if name == "unit":
            return cls(0.0, 1.0, width)
        raise ValueError(f"unknown domain {name!r}")


def sample(domain: SampleDomain, count: int, rng) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    return rng.uniform(domain.low, domain.high, size=(count, domain.width))


@dataclass
class CompiledRelation:
    label: str
    lhs_eval: Callable
    rhs_eval: Callable
    in_blocks: int
    out_blocks: int
    in_width: int
    out_width: int


class _Compiler:
    def __init__(self, pres, nets, block_dim):
        self.pres = pres
        self.nets = nets
        self.n = block_dim
        self.mode = pres.monoidal
        self.arities = {g.name: g.arity for g in pres.generators}
        self.inverse_of = {g.name: g.inverse_name for g in pres.generators if g.invertible}

    def width(self, blocks):
        return block_width(blocks, self.n, self.mode)

    def scalar(self, coef):
        if isinstance(coef, str):
            if coef not in self.pres.scalars:
                raise CompileError(f"unbound scalar {coef}")
            return float(self.pres.scalars[coef])
        return float(coef)

    def net_for(self, expr):
        name = expr.name if isinstance(expr, Gen) else self.inverse_of.get(expr.name)
        if name is None:
            raise CompileError(f"inv({expr.name}): generator is not invertible")
        if name not in self.nets:
            raise CompileError(f"missing net {name}")
        return self.nets[name]

    def build(self, expr):
        """Return ``fn(x, ops) -> y`` for a desugared expression."""
        if isinstance(expr, (Gen, InvGen)):
            net = self.net_for(expr)
            a, b = expr_arity(expr, self.arities)
            if (net.in_width, net.out_width) != (self.width(a), self.width(b)):
                raise CompileError(
                    f"net {net.name} maps {net.in_width}->{net.out_width}, "
                    f"expected {self.width(a)}->{self.width(b)}"
                )
            return lambda x, ops: net.forward(x, ops)
        if isinstance(expr, Identity):
            return lambda x, ops: x
        if isinstance(expr, Compose):
            outer, inner = self.build(expr.outer), self.build(expr.inner)
            return lambda x, ops: outer(inner(x, ops), ops)
        if isinstance(expr, Sum):
            left, right = self.build(expr.left), self.build(expr.right)
            return lambda x, ops: ops.add(left(x, ops), right(x, ops))
        if isinstance(expr, Scale):
            c = self.scalar(expr.coef)
            inner = self.build(expr.expr)
            return lambda x, ops: ops.scale(inner(x, ops), c)
        if isinstance(expr, Product):
            return self.build_product(expr)
        raise CompileError(f"cannot compile {expr!r}")

    def build_product(self, expr):
        li, lo = expr_arity(expr.left, self.arities)
        ri, ro = expr_arity(expr.right, self.arities)
        left, right = self.build(expr.left), self.build(expr.right)
        l_id = isinstance(expr.left, Identity)
        r_id = isinstance(expr.right, Identity)

        if self.mode == "cartesian":
            at = self.width(li)
            if l_id and li == 0:
                return right
            if r_id and ri == 0:
                return left

            def cart(x, ops):
                a, b = ops.split_cols(x, at)
                return ops.concat_cols(left(a, ops), right(b, ops))

            return cart

        # tensor product: coordinates of the left factor vary slowest
        a_in, b_in = self.width(li), self.width(ri)
        a_out, b_out = self.width(lo), self.width(ro)

        def on_right(x, ops):
            m = ops.value(x).shape[0]
            y = right(ops.reshape(x, (m * a_in, b_in)), ops)
            return ops.reshape(y, (m, a_in * b_out))

        def on_left(x, ops, b):
            m = ops.value(x).shape[0]
            t = ops.swap_last(ops.reshape(x, (m, a_in, b)))
            y = left(ops.reshape(t, (m * b, a_in)), ops)
            t = ops.swap_last(ops.reshape(y, (m, b, a_out)))
            return ops.reshape(t, (m, a_out * b))

        if l_id:
            return on_right
        if r_id:
            return lambda x, ops: on_left(x, ops, b_in)
        return lambda x, ops: on_left(on_right(x, ops), ops, b_out)


def compile_expr(expr: RelExpr, pres: Presentation, nets: dict, block_dim: int):
    """Compile one expression into ``fn(x, ops) -> y``."""
    return _Compiler(pres, nets, block_dim).build(desugar(expr))


def infer_block_dim(pres: Presentation, nets: dict) -> int:
    dims = {net.block_dim for net in nets.values()}
    if len(dims) != 1:
        raise CompileError(f"nets disagree on block dimension: {sorted(dims)}")
    return dims.pop()


def compile_relations(pres: Presentation, nets: dict, relations=None) -> list[CompiledRelation]:
    """Compile every relation of ``pres`` (or the given ``relations``) against ``nets``."""
    for name in pres.net_names():
        if name not in nets:
            raise CompileError(f"missing net {name}")
    n = infer_block_dim(pres, nets)
    for name, (a, b) in pres.net_arities().items():
        net = nets[name]
        if (net.in_blocks, net.out_blocks) != (a, b):
            raise CompileError(f"net {name} has arity {net.in_blocks}->{net.out_blocks}, expected {a}->{b}")
    comp = _Compiler(pres, nets, n)
    out = []
    for rel in pres.relations if relations is None else relations:
        try:
            lhs, rhs = desugar(rel.lhs), desugar(rel.rhs)
            a = expr_arity(lhs, comp.arities)
            b = expr_arity(rhs, comp.arities)
        except PresentationError as exc:
            raise CompileError(str(exc)) from None
        if a != b:
            raise CompileError(f"arity mismatch in relation {rel.label!r}")
        out.append(
            CompiledRelation(
                rel.label,
                comp.build(lhs),
                comp.build(rhs),
                a[0],
                a[1],
                comp.width(a[0]),
                comp.width(a[1]),
            )
        )
    return out


def relation_residual(rel: CompiledRelation, points, ops=None):
    """Mean over points of ``||lhs(x) - rhs(x)||^2``."""
    ops = ops or NumpyOps()
    pts = ops.value(points) if not isinstance(points, np.ndarray) else points
    if pts.ndim != 2 or pts.shape[1] != rel.in_width:
        raise ValueError(f"relation {rel.label!r}: points of width {pts.shape[-1]} != {rel.in_width}")
    x = points if not isinstance(points, np.ndarray) else ops.constant(points)
    diff = ops.sub(rel.lhs_eval(x, ops), rel.rhs_eval(x, ops))
    return ops.mean_sq(diff)


def total_loss(rels, points, weights=None, tape=None):
    """Weighted sum of relation residuals, recorded on ``tape``.

    Returns ``(loss_value, tape, loss_var, per_relation_values)``.
    """
    tape = tape if tape is not None else GradTape()
    weights = [1.0] * len(rels) if weights is None else list(weights)
    if len(weights) != len(rels) or any(w <= 0 for w in weights):
        raise ValueError("need one positive weight per relation")
    terms = [relation_residual(r, p, tape) for r, p in zip(rels, points)]
    loss = tape.weighted_sum(terms, weights)
    return float(loss.value), tape, loss, [float(t.value) for t in terms]


def evaluate_residuals(rels, points) -> dict:
    return {r.label: float(relation_residual(r, p)) for r, p in zip(rels, points)}
