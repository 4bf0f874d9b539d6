"""Command-line entry point: ``polyveil {run,attack,oracle,dp,verify}``.

Every command is deterministic in ``--seed``. Structured results are written
as JSON, tables as CSV; floats use the shortest round-trip representation so
re-running a command reproduces its output byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields, is_dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import attacks, dp_accounting, hardness_oracles, sim_verify
from .linalg_core import BitVector, Permutation, encode_bitstream
from .protocol import ClientFixture, ProtocolParams, Variant, random_inputs, run_protocol
from .sampling import RngStream

__all__ = ["main", "build_parser", "emit_table", "load_matrix", "to_jsonable", "UsageError"]

PROG = "polyveil"
# streams used only by the CLI for drawing test inputs
INPUT_STREAM = (1 << 32) + 100


class UsageError(ValueError):
    """Bad arguments or configuration; maps to exit status 2."""


def to_jsonable(obj):
    """Recursively convert dataclasses, numpy values and permutations to JSON types."""
    if isinstance(obj, Permutation):
        return list(obj.one_based())
    if isinstance(obj, BitVector):
        return list(obj.bits)
    if isinstance(obj, Variant):
        return obj.value
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def emit_json(obj, path: Optional[str]) -> None:
    _write(json.dumps(to_jsonable(obj), indent=2, allow_nan=True) + "\n", path)


def emit_table(rows: Sequence[dict], schema: Sequence[str], path: Optional[str]) -> None:
    """Write ``rows`` as CSV with a header row and LF line endings."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(schema), lineterminator="\n", extrasaction="raise")
    writer.writeheader()
    for row in rows:
        missing = set(schema) - set(row)
        if missing:
            raise ValueError(f"row is missing columns {sorted(missing)}")
        writer.writerow({k: _cell(row[k]) for k in schema})
    _write(buf.getvalue(), path)


def _cell(v):
    v = to_jsonable(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return v


def load_matrix(path: str) -> np.ndarray:
    """Read ``{"m": int, "rows": [[...], ...]}`` (a bare list of rows is also accepted)."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: malformed JSON ({exc.msg})") from None
    rows = data["rows"] if isinstance(data, dict) else data
    A = np.asarray(rows, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"{path}: expected a square matrix")
    if isinstance(data, dict) and "m" in data and int(data["m"]) != A.shape[0]:
        raise UsageError(f"{path}: m = {data['m']} does not match {A.shape[0]} rows")
    return A


# ---------------------------------------------------------------- parser


def _global_parent(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="master seed (default 0)")
    p.add_argument("--out", default=d, help="output path (default stdout)")
    p.add_argument("--config", default=d, help="JSON file supplying defaults for any option")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="suppress the summary line on stderr")
    return p


def _params_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--n", type=int, help="bits per client")
    p.add_argument("--k", type=int, help="number of clients")
    p.add_argument("--K", type=int, help="decoys per client")
    p.add_argument("--alpha-star", type=float, dest="alpha_star", help="signal weight alpha*")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, parents=[_global_parent(False)],
        description="Masked-permutation secure aggregation: protocol runs, attacks, oracles and privacy accounting.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    g = _global_parent(True)
    prm = _params_parent()

    run = sub.add_parser("run", parents=[g, prm], help="run one protocol instance and dump every entity's view",
                         description="Run one protocol instance. A config file may inject bits, decoys "
                                     "(1-based index maps), coefficients and the shuffle permutation.")
    run.add_argument("--variant", choices=[v.value for v in Variant], help="protocol variant (default two-layer)")
    run.add_argument("--coefficients", choices=["dirichlet", "uniform"], help="decoy weight distribution")

    att = sub.add_parser("attack", parents=[g, prm], help="measure an attack's success rate over many trials",
                         description="Run an attack over independent trials and write one CSV row per trial.")
    att.add_argument("attack", choices=["deshuffle", "gaussian-map", "hungarian", "block-threshold", "mc-density"])
    att.add_argument("--trials", type=int, help="number of trials (default 100)")
    att.add_argument("--search", choices=["full", "block"], help="candidate space for gaussian-map (default full)")
    att.add_argument("--samples", type=int, help="tuples per trial for mc-density (default 1000)")

    orc = sub.add_parser("oracle", parents=[g], help="exact small-scale oracles on a JSON matrix",
                         description="Permanent, support set or worked reduction census of a JSON matrix.")
    orc.add_argument("oracle", choices=["permanent", "support", "census"])
    orc.add_argument("--input", help='matrix file {"m": int, "rows": [[...]]}')
    orc.add_argument("--alpha-star", type=float, dest="alpha_star", help="signal weight (census)")
    orc.add_argument("--K", type=int, help="decoys per client (census; only 2 is supported)")

    dp = sub.add_parser("dp", parents=[g], help="privacy accountant",
                        description="Evaluate one privacy framework at a point, or over --grid as a CSV table.")
    dp.add_argument("--framework", choices=list(dp_accounting.Framework.ALL))
    dp.add_argument("--n", type=int)
    dp.add_argument("--K", type=float)
    dp.add_argument("--alpha-star", type=float, dest="alpha_star", help="default 1/(4n)")
    dp.add_argument("--delta", type=float, help="default 1e-6")
    dp.add_argument("--k", type=int, help="number of shuffled reports (shuffle)")
    dp.add_argument("--epsilon", type=float, help="target epsilon (full) or point for delta(eps) (fdp)")
    dp.add_argument("--epsilon0", type=float, help="local epsilon before shuffling")
    dp.add_argument("--grid", type=float, nargs="+", help="K values (k for shuffle, n for full)")
    dp.add_argument("--leading-order", action="store_true", default=None, dest="leading_order",
                    help="drop the (1 - alpha*) factor in the Gaussian shift, the usual leading-order convention")

    ver = sub.add_parser("verify", parents=[g, prm], help="simulator and concentration checks",
                         description="Empirical checks of the aggregate-only simulator and of decoy concentration.")
    ver.add_argument("check", choices=["simulator", "indistinguishability", "concentration"])
    ver.add_argument("--trials", type=int, help="number of trials (default 1000)")
    ver.add_argument("--r-grid", type=float, nargs="+", dest="r_grid", help="radii for concentration")
    return parser


# ---------------------------------------------------------------- config


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _merge(args: argparse.Namespace, cfg: dict, defaults: dict) -> None:
    for key, value in cfg.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _require(args, parser, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        parser.error("the following arguments are required: " + ", ".join("--" + m.replace("_", "-") for m in missing))


# ---------------------------------------------------------------- commands


def _fixtures(args) -> Optional[List[ClientFixture]]:
    decoys, coeffs = getattr(args, "decoys", None), getattr(args, "coefficients_values", None)
    if decoys is None and coeffs is None:
        return None
    if decoys is None or coeffs is None:
        raise UsageError("config must give both decoys and coefficient values")
    if len(decoys) != args.k or len(coeffs) != args.k:
        raise UsageError(f"fixture needs one entry per client (k = {args.k})")
    out = []
    for d, c in zip(decoys, coeffs):
        if len(d) != args.K or len(c) != args.K:
            raise UsageError(f"each client needs K = {args.K} decoys and coefficients")
        out.append(ClientFixture(tuple(Permutation.from_one_based(p) for p in d), tuple(c)))
    return out


def cmd_run(args, parser) -> dict:
    _require(args, parser, "n", "k", "alpha_star")
    if args.K is None and getattr(args, "decoys", None):
        args.K = len(args.decoys[0])
    _require(args, parser, "K")
    params = ProtocolParams(n=args.n, k=args.k, alpha_star=args.alpha_star, K=args.K,
                            variant=Variant(args.variant), coefficients=args.coefficients)
    fixtures = _fixtures(args)
    if getattr(args, "bits", None) is not None:
        inputs = [BitVector.of(b) for b in args.bits]
        if len(inputs) != params.k:
            raise UsageError(f"config gives {len(inputs)} bit vectors for k = {params.k}")
    else:
        inputs = random_inputs(params.n, params.k, RngStream(args.seed, INPUT_STREAM))
    shuffle = None if getattr(args, "shuffle", None) is None else Permutation.from_one_based(args.shuffle)
    tr = run_protocol(inputs, params, args.seed, fixtures=fixtures, shuffle=shuffle)
    out = to_jsonable(tr)
    out["inputs"] = [list(b.bits) for b in inputs]
    out["seed"] = args.seed
    emit_json(out, args.out)
    return {"S": tr.recovered_S, "F": tr.F, "H": tr.H}


def _attack_rows(args) -> List[dict]:
    n, K, a = args.n, args.K, args.alpha_star
    rows = []
    for i in range(args.trials):
        inputs_rng = RngStream(args.seed, INPUT_STREAM, (i,))
        if args.attack == "deshuffle":
            params = ProtocolParams(n=n, k=args.k, alpha_star=a, K=K, variant=Variant.COMPRESSED)
            bits = random_inputs(n, params.k, inputs_rng)
            tr = run_protocol(bits, params, args.seed, trial=i)
            res = attacks.deshuffle_attack(tr.server_view.f, tr.server_view.shuffled_eta, a, n,
                                           method="enumerate" if params.k <= attacks.ENUMERATION_CAP else "pruned",
                                           truth=tr.ground_truth_counts)
            rows.append({"trial": i, "success": bool(res.correct_recovered), "score": len(res.passing_assignments),
                         "unique": res.unique})
            continue
        if args.attack == "mc-density":
            params = ProtocolParams(n=n, k=1, alpha_star=a, K=K)
            bits = random_inputs(n, 1, inputs_rng)
            tr = run_protocol(bits, params, args.seed, trial=i)
            R = tr.noise_aggregator_view.decoy_sums[0] / (1.0 - a)
            res = attacks.mc_density_estimate(R, K, a, args.samples, RngStream(args.seed, INPUT_STREAM + 1, (i,)))
            rows.append({"trial": i, "success": res.hit_count > 0, "score": res.hit_rate,
                         "hit_count": res.hit_count, "ci_low": res.ci_low, "ci_high": res.ci_high})
            continue
        params = ProtocolParams(n=n, k=1, alpha_star=a, K=K)
        bits = random_inputs(n, 1, inputs_rng)
        tr = run_protocol(bits, params, args.seed, trial=i)
        D = tr.aggregator_view.D[0]
        truth = encode_bitstream(bits[0])
        if args.attack == "gaussian-map":
            res = attacks.gaussian_map_attack(D, a, n, K, search=args.search, truth=truth)
            acc = float(np.mean(np.array(attacks.bits_from_permutation(res.guess).bits) == np.array(bits[0].bits)))
        elif args.attack == "hungarian":
            res = attacks.hungarian_attack(D, a, truth=truth)
            acc = float(np.mean(np.array(attacks.bits_from_permutation(res.guess).bits) == np.array(bits[0].bits)))
        else:
            res = attacks.block_threshold_attack(D, a, truth=bits[0].bits)
            acc = res.score
        rows.append({"trial": i, "success": res.success, "score": res.score, "bit_accuracy": acc})
    return rows


ATTACK_COLUMNS = {
    "deshuffle": ["trial", "success", "score", "unique"],
    "mc-density": ["trial", "success", "score", "hit_count", "ci_low", "ci_high"],
    "gaussian-map": ["trial", "success", "score", "bit_accuracy"],
    "hungarian": ["trial", "success", "score", "bit_accuracy"],
    "block-threshold": ["trial", "success", "score", "bit_accuracy"],
}


def cmd_attack(args, parser) -> dict:
    _require(args, parser, "n", "K", "alpha_star")
    if args.attack == "deshuffle":
        _require(args, parser, "k")
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    rows = _attack_rows(args)
    emit_table(rows, ATTACK_COLUMNS[args.attack], args.out)
    return {"success_rate": sum(bool(r["success"]) for r in rows) / len(rows)}


def cmd_oracle(args, parser) -> dict:
    _require(args, parser, "input")
    A = load_matrix(args.input)
    if args.oracle == "permanent":
        value = hardness_oracles.permanent(A)
        emit_json({"m": A.shape[0], "permanent": value}, args.out)
        return {"permanent": value}
    if args.oracle == "support":
        c = hardness_oracles.support_census(A)
        perms = hardness_oracles.support_set(A)
        emit_json({"support_matrix": c.support_matrix.astype(int), "support_size": c.support_size,
                   "permanent": c.permanent_value, "support_set": perms}, args.out)
        return {"support_size": c.support_size}
    _require(args, parser, "alpha_star")
    census = hardness_oracles.worked_reduction_census(A, args.alpha_star, K=args.K or 2)
    rows = [{"candidate": cand, "total_tuples": c.total_tuples, "count": c.count,
             "consistent_tuples": [{"sigmas": s, "alphas": al} for s, al in c.consistent_tuples]}
            for cand, c in census.items()]
    emit_json({"alpha_star": args.alpha_star, "candidates": rows}, args.out)
    return {"candidates_with_hits": sum(r["count"] > 0 for r in rows)}


def cmd_dp(args, parser) -> dict:
    _require(args, parser, "framework", "n")
    fw = args.framework
    if args.grid is not None:
        kwargs = dict(n=args.n, alpha_star=args.alpha_star, delta=args.delta, leading_order=bool(args.leading_order))
        if args.epsilon0 is not None:
            kwargs["epsilon0"] = args.epsilon0
        if args.epsilon is not None:
            kwargs["epsilon"] = args.epsilon
        grid = [int(g) if float(g).is_integer() else g for g in args.grid]
        rows = dp_accounting.dp_table(fw, grid, **kwargs)
        emit_table(rows, dp_accounting.TABLE_COLUMNS[fw], args.out)
        return {"rows": len(rows)}
    if fw != dp_accounting.Framework.FULL and fw != dp_accounting.Framework.SHUFFLE:
        _require(args, parser, "K")
    K = args.K if args.K is not None else 1
    if K is not None and float(K).is_integer():
        K = int(K)
    a = args.alpha_star if args.alpha_star is not None else 1.0 / (4 * args.n)
    q = dp_accounting.DpQuery(n=args.n, K=K, alpha_star=a, delta=args.delta, k=args.k or 1, framework=fw,
                              epsilon0=args.epsilon0, epsilon=args.epsilon, leading_order=bool(args.leading_order))
    rep = dp_accounting.evaluate(q)
    out = {"framework": fw, "n": args.n, "K": K, "alpha_star": a, **rep.as_dict()}
    emit_json(out, args.out)
    return {"epsilon": rep.epsilon}


def cmd_verify(args, parser) -> dict:
    _require(args, parser, "n", "K", "alpha_star")
    if args.check != "concentration":
        _require(args, parser, "k")
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    if args.check == "concentration":
        r_grid = args.r_grid or [0.05, 0.1, 0.2]
        rows = sim_verify.concentration_check(args.n, args.K, args.trials, r_grid, args.seed)
        report = {"check": "concentration", "rows": rows, "passed": all(r["ok"] for r in rows)}
    else:
        params = ProtocolParams(n=args.n, k=args.k, alpha_star=args.alpha_star, K=args.K,
                                variant=Variant.TWO_LAYER_COMPRESSED)
        inputs_A = [BitVector.of(b) for b in (getattr(args, "bits", None) or [])] or \
            random_inputs(args.n, args.k, RngStream(args.seed, INPUT_STREAM))
        if args.check == "simulator":
            res = sim_verify.simulator_vs_real(inputs_A, params, args.trials, args.seed)
            passed = res["p_H"] > sim_verify.KS_THRESHOLD
        else:
            inputs_B = _spread(inputs_A, args.n)
            res = sim_verify.indistinguishability_test(inputs_A, inputs_B, params, args.trials, args.seed)
            passed = res["p_H"] > sim_verify.KS_THRESHOLD and res["p_F"] > sim_verify.KS_THRESHOLD
            res["inputs_B"] = [list(b.bits) for b in inputs_B]
        report = {"check": args.check, "inputs_A": [list(b.bits) for b in inputs_A], **res, "passed": passed}
    emit_json(report, args.out)
    return {"passed": report["passed"]}


def _spread(inputs: Sequence[BitVector], n: int) -> List[BitVector]:
    """Same aggregate, bits dealt round-robin across clients instead."""
    k = len(inputs)
    S = sum(b.count() for b in inputs)
    grid = np.zeros((k, n), dtype=int)
    for i in range(S):
        grid[i % k, i // k] = 1
    return [BitVector(tuple(int(v) for v in row)) for row in grid]


COMMANDS = {"run": cmd_run, "attack": cmd_attack, "oracle": cmd_oracle, "dp": cmd_dp, "verify": cmd_verify}
DEFAULTS = {
    "run": {"variant": "two-layer", "coefficients": "dirichlet"},
    "attack": {"trials": 100, "search": "full", "samples": 1000},
    "oracle": {},
    "dp": {"delta": 1e-6},
    "verify": {"trials": 1000},
}


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if "coefficients" in cfg and isinstance(cfg["coefficients"], list):
            cfg["coefficients_values"] = cfg.pop("coefficients")
        _merge(args, cfg, DEFAULTS[args.command])
        summary = COMMANDS[args.command](args, parser)
    except (UsageError, ValueError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ArithmeticError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet and args.out is not None:
        print(f"{PROG} {args.command}: " + " ".join(f"{k}={v}" for k, v in summary.items()), file=sys.stderr)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    return parse_and_dispatch(argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
