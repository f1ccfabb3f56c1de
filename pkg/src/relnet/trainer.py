"""Optimization loop: fresh uniform samples every step, held-out residual tracking."""

from __future__ import annotations

import json
import logging
import math
import time
import zlib
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np

from .netcore import make_net
from .presentation import Presentation, RelationEq, parse_relation
from .relcomp import (
    HELDOUT_POINTS,
    SampleDomain,
    compile_relations,
    evaluate_residuals,
    infer_block_dim,
    sample,
    total_loss,
)

log = logging.getLogger(__name__)


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator derived from the run seed and a fixed label."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())]))


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_steps: int = 5000
    target_residual: float = 1e-4
    seed: int = 0
    domain: str = "sym"  # "sym" = [-1, 1], "unit" = [0, 1]
    relation_weights: list | None = None
    deterministic: bool = False
    eval_every: int = 100
    heldout_points: int = HELDOUT_POINTS
    threads: int | None = None

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_steps < 1 or self.eval_every < 1:
            raise ValueError("batch_size, max_steps and eval_every must be >= 1")
        if self.target_residual < 0:
            raise ValueError("target_residual must be >= 0")
        if self.domain not in ("sym", "unit"):
            raise ValueError(f"unknown domain {self.domain!r}")


@dataclass
class TrainReport:
    presentation: str
    config: dict
    history: list = field(default_factory=list)  # (step, label, value)
    final: dict = field(default_factory=dict)
    steps: int = 0
    best_step: int = 0
    converged: bool = False
    diverged: bool = False
    last_finite_step: int = 0
    wall_time: float | None = None

    def to_dict(self):
        d = asdict(self)
        d["history"] = [list(h) for h in self.history]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["history"] = [tuple(h) for h in d.get("history", [])]
        return cls(**d)


class TrainingDiverged(RuntimeError):
    def __init__(self, report):
        super().__init__(f"loss became non-finite after step {report.last_finite_step}")
        self.report = report


class SGD:
    def __init__(self, arrays, lr):
        self.arrays = arrays
        self.lr = lr

    def step(self, grads):
        for a in self.arrays:
            a -= self.lr * grads[id(a)]


class Adam:
    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = arrays
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for a, m, v in zip(self.arrays, self.m, self.v):
            g = grads[id(a)]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def init_nets(pres: Presentation, block_dim: int, regime: str = "linear", seed: int = 0, widths=None) -> dict:
    """One freshly initialised network per generator and per paired inverse."""
    if pres.monoidal == "tensor" and regime != "linear":
        raise ValueError("tensor-product presentations need linear networks")
    nets = {}
    for name, arity in pres.net_arities().items():
        nets[name] = make_net(
            name,
            block_dim,
            arity,
            regime,
            substream(seed, f"init:{name}"),
            widths=None if widths is None else widths.get(name),
            monoidal=pres.monoidal,
        )
    return nets


def _thread_limit(cfg):
    if cfg.threads is None and not cfg.deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1 if cfg.deterministic else cfg.threads)


def _snapshot(nets):
    return {k: [a.copy() for a in net.arrays()] for k, net in nets.items()}


def _restore(nets, snap):
    for k, arrays in snap.items():
        for dst, src in zip(nets[k].arrays(), arrays):
            dst[...] = src


def train(pres: Presentation, nets: dict, cfg: TrainConfig):
    """Minimize the summed relation residuals; returns ``(report, nets)``.

    ``nets`` are updated in place and finally set to the best held-out
    checkpoint (the converged iterate when the target is reached).
    """
    rels = compile_relations(pres, nets)
    weights = cfg.relation_weights or [1.0] * len(rels)
    if len(weights) != len(rels):
        raise ValueError("need one weight per relation")
    batch_rng = substream(cfg.seed, "batch")
    held_rng = substream(cfg.seed, "heldout")
    domains = [SampleDomain.named(cfg.domain, r.in_width) for r in rels]
    heldout = [sample(d, cfg.heldout_points, held_rng) for d in domains]

    arrays = [a for k in sorted(nets) for a in nets[k].arrays()]
    opt = Adam(arrays, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(arrays, cfg.learning_rate)

    report = TrainReport(pres.name, asdict(cfg))
    best_total = math.inf
    best = None
    t0 = time.perf_counter()

    with _thread_limit(cfg):
        for step in range(1, cfg.max_steps + 1):
            points = [sample(d, cfg.batch_size, batch_rng) for d in domains]
            loss, tape, loss_var, _ = total_loss(rels, points, weights)
            if not math.isfinite(loss):
                report.diverged = True
                break
            grads = tape.backward(loss_var)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                report.diverged = True
                break
            opt.step(grads)
            report.last_finite_step = step
            report.steps = step

            if step == 1 or step % cfg.eval_every == 0 or step == cfg.max_steps:
                res = evaluate_residuals(rels, heldout)
                if not all(math.isfinite(v) for v in res.values()):
                    report.diverged = True
                    break
                for label, v in res.items():
                    report.history.append((step, label, v))
                total = sum(res.values())
                done = all(v < cfg.target_residual for v in res.values())
                if total < best_total or done:
                    best_total = total
                    best = (step, res, _snapshot(nets))
                log.debug("step %d total residual %.3e", step, total)
                if done:
                    report.converged = True
                    break

    if best is not None:
        report.best_step, report.final, snap = best
        _restore(nets, snap)
    if not cfg.deterministic:
        report.wall_time = time.perf_counter() - t0
    if report.diverged:
        raise TrainingDiverged(report)
    return report, nets


def probe_extra_relations(pres: Presentation, nets: dict, probes, points=None, count=HELDOUT_POINTS, seed=0, domain="sym"):
    """Residuals of relations that were not trained for.

    ``probes`` holds :class:`RelationEq` objects or ``"<expr> = <expr>"`` strings.
    ``points`` optionally maps probe label to a sample batch.
    """
    eqs = [p if isinstance(p, RelationEq) else parse_relation(pres, p) for p in probes]
    rels = compile_relations(pres, nets, relations=eqs)
    rng = substream(seed, "probe")
    batches = []
    for r in rels:
        if points is not None and r.label in points:
            batches.append(points[r.label])
        else:
            batches.append(sample(SampleDomain.named(domain, r.in_width), count, rng))
    return evaluate_residuals(rels, batches)


def heldout_points(pres: Presentation, nets: dict, cfg: TrainConfig) -> dict:
    """Recreate the held-out batches a training run with ``cfg`` evaluated on."""
    rels = compile_relations(pres, nets)
    rng = substream(cfg.seed, "heldout")
    return {r.label: sample(SampleDomain.named(cfg.domain, r.in_width), cfg.heldout_points, rng) for r in rels}


__all__ = [
    "Adam",
    "SGD",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "heldout_points",
    "infer_block_dim",
    "init_nets",
    "probe_extra_relations",
    "substream",
    "train",
]
