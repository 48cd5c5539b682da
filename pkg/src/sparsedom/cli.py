"""Command-line driver: ``python -m sparsedom <command> [options]``.

Every file written carries ``# key=value`` header lines with the config
hash and the hashes of its inputs, so a chain of artifacts can be checked
for consistency.  Nothing time-dependent is written.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .generators import GENERATORS, generate
from .lattice import InfeasibleConstants, build_lattice, check_lattice, dump_lattice, lattice_digest, parse_lattice
from .operators import FunctionTuple, Kernel, check_pointwise_comparison, dump_ftuple, parse_ftuple
from .space import MetricMeasureSpace, SpaceError, default_dominating, dump_space, parse_space, read_meta
from .sparse import (
    LAB_ALPHA, STRICT_ALPHA, DominationError, build_sparse_domination, check_sparseness, dump_domination,
    verify_domination,
)
from .weights import (
    WeightTuple, ap_characteristic, c_omega, check_duality_identity, dump_weights, parse_exponents,
    parse_weights, verify_sparse_weighted_bound, verify_T_weighted_bound,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ORACLE_CHECK_MAX_N = 16


class ChainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# building blocks shared by the commands


def load_space(cfg: ExperimentConfig) -> tuple[MetricMeasureSpace, dict]:
    path = cfg.path("space", "file")
    if path is not None:
        text = path.read_text()
        return parse_space(text), {"space_file": path.name}
    name = cfg.get("space", "generator")
    params = cfg.generator_params()
    seed = cfg.number("space", "seed", 0, int)
    return generate(name, seed=seed, **params), {"generator": name, "seed": seed,
                                                  **{k: v for k, v in sorted(params.items())}}


def alpha_for(cfg: ExperimentConfig, mode: str) -> float:
    return cfg.number("weights", "alpha", STRICT_ALPHA if mode == "strict" else LAB_ALPHA)


def make_lattice(cfg: ExperimentConfig, space: MetricMeasureSpace):
    return build_lattice(
        space,
        C0=cfg.number("lattice", "C0"),
        A0=cfg.number("lattice", "A0"),
        k_min=cfg.number("lattice", "k_min", kind=int),
        k_max=cfg.number("lattice", "k_max", kind=int),
        tie_break_seed=cfg.number("lattice", "tie_break_seed", kind=int),
        mode=cfg.get("lattice", "mode"),
    )


def make_kernel(cfg: ExperimentConfig, space: MetricMeasureSpace) -> Kernel:
    lam = default_dominating(space, n=cfg.number("kernel", "n"))
    return Kernel(lam, m=cfg.number("kernel", "m", 2, int), family=cfg.get("kernel", "family"),
                  size_const=cfg.number("kernel", "CK", 1.0), delta=cfg.number("kernel", "delta", 1.0))


def random_tuple(space: MetricMeasureSpace, m: int, rng) -> FunctionTuple:
    vals = rng.random((m, space.n)) * space.support_mask
    return FunctionTuple(vals)


def random_weights(space: MetricMeasureSpace, m: int, rng, spread: float) -> WeightTuple:
    return WeightTuple(np.exp(rng.uniform(-spread, spread, size=(m, space.n))))


def check_chain(space: MetricMeasureSpace, paths) -> None:
    """Every artifact naming a space hash must name this one."""
    want = space.digest()
    for p in paths:
        meta = read_meta(Path(p).read_text())
        if "space" in meta and meta["space"] != want:
            raise ChainError(f"{p} was produced for space {meta['space'][:12]}, not {want[:12]}")


def header(cfg: ExperimentConfig, space: MetricMeasureSpace, **extra) -> dict:
    return {"config": cfg.digest(), "space": space.digest(), **extra}


def write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text)
    return p


def csv_text(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def meta_lines(meta: dict) -> list[str]:
    return [f"# {k}={v}" for k, v in meta.items()]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_space(args, cfg) -> int:
    params = {}
    for kv in args.param or []:
        k, _, v = kv.partition("=")
        params[k] = int(v) if v.lstrip("-").isdigit() else float(v)
    space = generate(args.generator, seed=args.seed, **params)
    meta = {"generator": args.generator, "seed": args.seed,
            **{k: v for k, v in sorted(params.items())}}
    p = write(args.out, f"{args.generator}.space", dump_space(space, meta))
    print(p)
    return EXIT_OK


def cmd_lattice(args, cfg) -> int:
    space, _ = load_space(cfg)
    lat = make_lattice(cfg, space)
    rep = check_lattice(lat, space)
    meta = header(cfg, space, mode=lat.mode)
    write(args.out, "lattice.txt", dump_lattice(lat, space, meta))
    lines = meta_lines(meta) + [rep.summary()]
    lines += [f"{k}={v}" for k, v in sorted(rep.stats.items())]
    lines += [f"violation {kind} {detail}" for kind, detail in rep.violations]
    write(args.out, "lattice_report.txt", "\n".join(lines) + "\n")
    rows = [(c.id, c.level, space.ids[c.center], c.radius, len(c.members), int(c.is_doubling))
            for c in lat.cells]
    write(args.out, "lattice_cells.csv", csv_text(rows, ["cell", "level", "center", "radius", "size", "doubling"]))
    print(rep.summary())
    return EXIT_OK if rep.ok else EXIT_FAIL


def _dominate_one(cfg, space, lat, kernel, f):
    alpha = alpha_for(cfg, lat.mode)
    res = build_sparse_domination(
        kernel, f, lat, space, kernel.lam, alpha,
        eta=cfg.number("dominate", "eta", 0.5),
        k_max=cfg.number("dominate", "k_max_layers", 12, int),
        trunc_mode=cfg.get("dominate", "trunc_mode"),
    )
    eta_min = cfg.number("dominate", "eta_min", 0.4)
    sparse_ok = all(check_sparseness(fam, space, eta_min).ok for fam in res.layers)
    cert_ok = all(all(st.checks.values()) for st in res.nodes)
    return res, sparse_ok, cert_ok


def cmd_dominate(args, cfg) -> int:
    space, _ = load_space(cfg)
    if args.lattice:
        check_chain(space, [args.lattice])
        lat = parse_lattice(Path(args.lattice).read_text(), space)
    else:
        lat = make_lattice(cfg, space)
    kernel = make_kernel(cfg, space)
    fpath = args.ftuple or cfg.path("dominate", "ftuple")
    if fpath:
        f = parse_ftuple(Path(fpath).read_text(), space, kernel.m)
    else:
        f = random_tuple(space, kernel.m, np.random.default_rng(args.seed))
    res, sparse_ok, cert_ok = _dominate_one(cfg, space, lat, kernel, f)
    meta = header(cfg, space, lattice=lattice_digest(lat, space))
    write(args.out, "ftuple.txt", dump_ftuple(f, space, meta))
    write(args.out, "domination.txt", dump_domination(res, space, meta))
    check = {}
    if space.n <= ORACLE_CHECK_MAX_N and kernel.m == 2:
        check = verify_domination(kernel, f, res, space)
    ok = sparse_ok and cert_ok and math.isfinite(res.C_dom)
    if check:
        ok &= abs(check["C_dom"] - res.C_dom) <= 1e-9 * (1 + res.C_dom)
    lines = meta_lines(meta) + [
        f"domination: {'pass' if ok else 'FAIL'}",
        f"C_dom={res.C_dom!r}",
        f"layers={len(res.layers)} nodes={len(res.nodes)} depth={res.depth}",
        f"sparseness={'pass' if sparse_ok else 'FAIL'} certificate={'pass' if cert_ok else 'FAIL'}",
    ]
    if check:
        lines.append(f"oracle_C_dom={check['C_dom']!r} worst_point={space.ids[check['worst_point']]}")
    write(args.out, "domination_report.txt", "\n".join(lines) + "\n")
    rows = [(space.ids[x], t, s, r) for x, t, s, r in res.table]
    write(args.out, "domination_points.csv", csv_text(rows, ["point", "T_star", "sparse_sum", "ratio"]))
    print(lines[len(meta)])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_weights(args, cfg) -> int:
    space, _ = load_space(cfg)
    lat = make_lattice(cfg, space)
    exps = parse_exponents(cfg.get("weights", "exponents"))
    rho = cfg.number("weights", "rho", 1.0)
    alpha = alpha_for(cfg, lat.mode)
    wpath = args.weights or cfg.path("weights", "file")
    if wpath:
        w = parse_weights(Path(wpath).read_text(), space, exps.m)
    else:
        w = WeightTuple.ones(exps.m, space.n)
    kernel = make_kernel(cfg, space)
    if kernel.m != exps.m:
        raise ConfigError("kernel m and number of exponents differ")
    f = random_tuple(space, exps.m, np.random.default_rng(args.seed))
    res, _, _ = _dominate_one(cfg, space, lat, kernel, f)
    char = ap_characteristic(w, exps, rho, space)
    char_lms = ap_characteristic(w, exps, rho, space, "lms")
    cw = c_omega(w, exps, alpha, space, lat, res.layers)
    meta = header(cfg, space)
    write(args.out, "weights.txt", dump_weights(w, space, meta))
    lines = meta_lines(meta) + [
        f"exponents={list(exps.ps)} p={exps.p!r} regime={exps.regime}",
        f"characteristic={char!r} characteristic_lms={char_lms!r} rho={rho!r}",
        f"C_omega={cw['value']!r} effective={cw['effective']!r} argmax_cell={cw['argmax']} alpha={alpha!r}",
    ]
    write(args.out, "weights_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines[len(meta):]))
    return EXIT_OK if math.isfinite(char) and math.isfinite(cw["value"]) else EXIT_FAIL


def _verify_trial(job):
    cfg_text, base, space_text, lat_text, t, seed = job
    cfg = _cfg_from_text(cfg_text, base)
    space = parse_space(space_text)
    lat = parse_lattice(lat_text, space)
    kernel = make_kernel(cfg, space)
    exps = parse_exponents(cfg.get("weights", "exponents"))
    rng = np.random.default_rng([seed, t])
    f = random_tuple(space, kernel.m, rng)
    res, sparse_ok, cert_ok = _dominate_one(cfg, space, lat, kernel, f)
    alpha = alpha_for(cfg, lat.mode)
    root = lat.cell(res.root)
    cmp = check_pointwise_comparison(kernel, space, f, root, lat, kernel.lam, cfg.get("dominate", "trunc_mode"))
    row = {"trial": t, "C_dom": res.C_dom, "layers": len(res.layers), "nodes": len(res.nodes),
           "sparse_ok": sparse_ok, "cert_ok": cert_ok, "comparison_ratio": cmp["sup_ratio"]}
    if kernel.m == 2 and space.n <= ORACLE_CHECK_MAX_N:
        ref = verify_domination(kernel, f, res, space)["C_dom"]
        row["oracle_ok"] = abs(ref - res.C_dom) <= 1e-9 * (1 + res.C_dom)
    if exps.m == kernel.m:
        w = random_weights(space, exps.m, rng, cfg.number("verify", "weight_spread", 1.0))
        sp_b = verify_sparse_weighted_bound(res.layers, f, w, exps, alpha, space, lat,
                                            cfg.number("verify", "c_slack", 64.0))
        t_b = verify_T_weighted_bound(kernel, f, w, exps, lat, space, kernel.lam, alpha, res,
                                      cfg.number("verify", "c_slack", 64.0))
        row.update(sparse_ratio=sp_b["ratio"], T_ratio=t_b["ratio"])
        if exps.p > 1:
            i = int(rng.integers(1, exps.m + 1))
            row["duality_err"] = check_duality_identity(w, exps, i, cfg.number("weights", "rho", 1.0),
                                                        space)["max_rel_err"]
    return row


def _cfg_from_text(text, base):
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    return ExperimentConfig(parser, Path(base))


def cmd_verify(args, cfg) -> int:
    space, _ = load_space(cfg)
    if args.artifacts:
        check_chain(space, sorted(p for p in Path(args.artifacts).iterdir() if p.is_file()))
    lat = make_lattice(cfg, space)
    lrep = check_lattice(lat, space)
    trials = cfg.number("verify", "trials", 10, int)
    seed = args.seed if args.seed is not None else cfg.number("verify", "seed", 0, int)
    jobs = [(cfg.canonical(), str(cfg.base), dump_space(space), dump_lattice(lat, space), t, seed)
            for t in range(trials)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_verify_trial, jobs))
    else:
        rows = [_verify_trial(j) for j in jobs]
    rows.sort(key=lambda r: r["trial"])

    slack = cfg.number("verify", "c_slack", 64.0)
    checks = {
        "lattice": lrep.ok,
        "sparseness": all(r["sparse_ok"] for r in rows),
        "stopping_certificate": all(r["cert_ok"] for r in rows),
        "domination_finite": all(math.isfinite(r["C_dom"]) for r in rows),
        "pointwise_comparison_finite": all(math.isfinite(r["comparison_ratio"]) for r in rows),
    }
    if rows and "oracle_ok" in rows[0]:
        checks["domination_oracle"] = all(r["oracle_ok"] for r in rows)
    if rows and "sparse_ratio" in rows[0]:
        checks["sparse_weighted_bound"] = all(r["sparse_ratio"] <= slack for r in rows)
        checks["T_weighted_bound"] = all(r["T_ratio"] <= slack for r in rows)
    if rows and "duality_err" in rows[0]:
        checks["duality_identity"] = all(r["duality_err"] <= 1e-9 for r in rows)

    meta = header(cfg, space, lattice=lattice_digest(lat, space), seed=seed, trials=trials)
    fields = sorted({k for r in rows for k in r}, key=lambda k: (k != "trial", k))
    write(args.out, "verify.csv", csv_text([[r.get(k, "") for k in fields] for r in rows], fields))
    write(args.out, "cdom_distribution.csv", csv_text([(r["trial"], r["C_dom"]) for r in rows], ["trial", "C_dom"]))
    lines = meta_lines(meta)
    for name, ok in checks.items():
        lines.append(f"{name}: {'pass' if ok else 'FAIL'}")
    for key in ("C_dom", "comparison_ratio", "sparse_ratio", "T_ratio", "duality_err"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            lines.append(f"{key}: min={float(min(vals))!r} max={float(max(vals))!r}")
    write(args.out, "verify_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines[len(meta):]))
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style experiment config")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--mode", choices=["strict", "lab"], default=None)
    common.add_argument("--jobs", type=int, default=1)

    ap = argparse.ArgumentParser(prog="sparsedom", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-space", parents=[common], help="write a fixture space")
    g.add_argument("generator", choices=sorted(GENERATORS))
    g.add_argument("--param", action="append", metavar="KEY=VALUE")
    sub.add_parser("lattice", parents=[common], help="build and validate a lattice")
    d = sub.add_parser("dominate", parents=[common], help="sparse domination for one function tuple")
    d.add_argument("--ftuple")
    d.add_argument("--lattice")
    w = sub.add_parser("weights", parents=[common], help="weight characteristics and C_omega")
    w.add_argument("--weights")
    v = sub.add_parser("verify", parents=[common], help="end-to-end checks over random trials")
    v.add_argument("--artifacts", help="directory of earlier outputs to check against this space")
    return ap


COMMANDS = {"gen-space": cmd_gen_space, "lattice": cmd_lattice, "dominate": cmd_dominate,
            "weights": cmd_weights, "verify": cmd_verify}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        if args.mode:
            cfg.set("lattice", "mode", args.mode)
        if args.command == "gen-space" and args.seed is None:
            args.seed = 0
        if args.command in ("dominate", "weights") and args.seed is None:
            args.seed = cfg.number("verify", "seed", 0, int)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ChainError, SpaceError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleConstants, DominationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
