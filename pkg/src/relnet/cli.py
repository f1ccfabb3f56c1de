"""Command line: ``relnet train | verify | bracket``.

Exit codes: 0 success (training converged, verification passed); 2 the run
completed but missed its target (training budget exhausted, artifacts still
written, or a verified residual above the threshold); 1 any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .extract import ExtractError, collapse_all, load_rep, save_matrices, verify_matrix_relations
from .knotlab import HOPF, UNKNOT, DiagramError, check_moves, evaluate_bracket, parse_diagram
from .netcore import load_checkpoint, save_checkpoint
from .presentation import BUILTINS, Gen, Identity, PresentationError, RelationEq, builtin, parse_presentation, parse_relation
from .relcomp import CompileError
from .trainer import TrainConfig, TrainingDiverged, init_nets, probe_extra_relations, train

log = logging.getLogger("relnet")

EXIT_OK, EXIT_ERROR, EXIT_NOT_MET = 0, 1, 2
BUILTIN_DIAGRAMS = {"unknot": UNKNOT, "hopf": HOPF}


class UsageError(ValueError):
    pass


def _add_presentation_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=BUILTINS, help="built-in presentation")
    src.add_argument("--file", type=Path, help="presentation source file")
    p.add_argument("--delta", type=float, default=None, help="loop value for temperley_lieb (default 1.0)")


def build_parser():
    parser = argparse.ArgumentParser(prog="relnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit one network per generator to the relations")
    _add_presentation_args(t)
    t.add_argument("--regime", choices=("linear", "affine", "nonlinear"), default="linear")
    t.add_argument(
        "--dim",
        type=int,
        default=2,
        help="input width of the first generator (cartesian products) or dim V (tensor products)",
    )
    t.add_argument("--domain", choices=("sym", "unit"), default="sym")
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--max-steps", type=int, default=20000)
    t.add_argument("--eval-every", type=int, default=100)
    t.add_argument("--target", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int, default=None)
    t.add_argument("--deterministic", action="store_true", help="single-threaded, no wall-clock in the report")
    t.add_argument("--probe", action="append", default=[], metavar="EQ", help="extra relation to evaluate after training")
    t.add_argument("--out", type=Path, default=Path("run"))

    v = sub.add_parser("verify", help="check a matrix representation against a presentation")
    _add_presentation_args(v)
    v.add_argument("--matrix", type=Path, required=True, help="JSON matrix file or whitespace table")
    v.add_argument("--threshold", type=float, default=1e-3)

    b = sub.add_parser("bracket", help="evaluate a closed diagram with trained RT maps")
    b.add_argument("--diagram", required=True, help="diagram file, or 'unknot' / 'hopf'")
    b.add_argument("--checkpoint", type=Path, required=True, help="output directory of an rt_system training run")
    b.add_argument("--check-moves", action="store_true")
    return parser


def load_presentation(args):
    if args.file is not None:
        if args.delta is not None:
            raise UsageError("--delta only applies to --builtin temperley_lieb")
        return parse_presentation(args.file.read_text(encoding="utf-8"), name=args.file.stem)
    params = {}
    if args.builtin == "temperley_lieb":
        params["delta"] = 1.0 if args.delta is None else args.delta
    elif args.delta is not None:
        raise UsageError("--delta only applies to temperley_lieb")
    return builtin(args.builtin, params)


def block_dim_for(pres, dim):
    if dim < 1:
        raise UsageError("--dim must be positive")
    if pres.monoidal == "tensor":
        return dim
    a, b = pres.generators[0].arity
    blocks = a or b
    if dim % blocks:
        raise UsageError(f"--dim {dim} is not divisible by the {blocks} blocks of {pres.generators[0].name}")
    return dim // blocks


def _table(rows, header):
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header)] + [fmt.format(*map(str, r)) for r in rows]
    return "\n".join(lines)


def cmd_train(args):
    pres = load_presentation(args)
    n = block_dim_for(pres, args.dim)
    cfg = TrainConfig(
        optimizer=args.optimizer,
        learning_rate=args.lr,
        batch_size=args.batch,
        max_steps=args.max_steps,
        target_residual=args.target,
        seed=args.seed,
        domain=args.domain,
        deterministic=args.deterministic,
        eval_every=args.eval_every,
        threads=args.threads,
    )
    probes = [parse_relation(pres, text) for text in args.probe]
    nets = init_nets(pres, n, args.regime, args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    try:
        report, nets = train(pres, nets, cfg)
    except TrainingDiverged as exc:
        (out / "report.json").write_text(exc.report.to_json())
        raise

    save_checkpoint(nets, out / "checkpoint.json")
    (out / "report.json").write_text(report.to_json())
    if args.regime != "nonlinear":
        rep = collapse_all(nets)
        save_matrices(rep, out / "matrices.json")
        for name, m in rep.matrices.items():
            np.savetxt(out / f"{name}.txt", m, fmt="%.17g")
    rows = [(label, f"{v:.3e}") for label, v in report.final.items()]
    print(_table(rows, ("relation", "held-out residual")))
    if probes:
        res = probe_extra_relations(pres, nets, probes, seed=args.seed, domain=args.domain)
        (out / "probes.json").write_text(json.dumps(res, indent=1, sort_keys=True))
        print(_table([(k, f"{v:.3e}") for k, v in res.items()], ("probe", "residual")))
    status = "converged" if report.converged else "not converged"
    print(f"{status} after {report.steps} steps (best step {report.best_step}); artifacts in {out}")
    return EXIT_OK if report.converged else EXIT_NOT_MET


def identity_probe(pres):
    """``g = id`` for the first generator with equal in/out arity, if any."""
    for g in pres.generators:
        a, b = g.arity
        if a == b:
            return RelationEq(Gen(g.name), Identity(a), f"probe: {g.name} = id^{a}")
    return None


def cmd_verify(args):
    pres = load_presentation(args)
    rep = load_rep(args.matrix, pres)
    res = verify_matrix_relations(rep, pres)
    rows = [(label, f"{v:.3e}", "ok" if v < args.threshold else "FAIL") for label, v in res.items()]
    probe = identity_probe(pres)
    if probe is not None:
        pv = verify_matrix_relations(rep, pres, [probe])[probe.label]
        rows.append((probe.label, f"{pv:.3e}", "degenerate" if pv < args.threshold else "-"))
    for name, m in rep.matrices.items():
        if m.shape[0] == m.shape[1]:
            rows.append((f"det {name}", f"{np.linalg.det(m):.6g}", "-"))
    print(_table(rows, ("relation", "frobenius", "status")))
    return EXIT_OK if all(v < args.threshold for v in res.values()) else EXIT_NOT_MET


def cmd_bracket(args):
    path = Path(args.diagram)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    elif args.diagram in BUILTIN_DIAGRAMS:
        text = BUILTIN_DIAGRAMS[args.diagram]
    else:
        raise UsageError(f"no diagram file {args.diagram}")
    d = parse_diagram(text)
    nets = load_checkpoint(args.checkpoint / "checkpoint.json")
    missing = {"R", "R_inv", "n", "u"} - set(nets)
    if missing:
        raise UsageError(f"checkpoint lacks rt_system maps: {', '.join(sorted(missing))}")
    value = evaluate_bracket(d, nets)
    print(f"bracket {' '.join(repr(float(x)) for x in value)}")
    if args.check_moves:
        residuals = None
        report_path = args.checkpoint / "report.json"
        if report_path.exists():
            residuals = json.loads(report_path.read_text())["final"]
        rows = []
        for r in check_moves(d, nets, residuals):
            if not r["applicable"]:
                rows.append((r["move"], "n/a", "-", "-", "-"))
                continue
            res = r["residual"]
            bound = "-" if res is None else f"{10 * res:.3e}"
            ok = "-" if res is None else ("ok" if r["delta"] <= 10 * res else "exceeds")
            rows.append((r["move"], repr(r["value"][0]), f"{r['delta']:.3e}", bound, ok))
        print(_table(rows, ("move", "bracket", "delta", "10x residual", "status")))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "verify": cmd_verify, "bracket": cmd_bracket}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
    except (PresentationError, CompileError, ExtractError, DiagramError, UsageError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
