"""Command-line interface: `crystalopt <group> <action> [options]`.

Structured results go to stdout as JSON (or to --out).  Every --out file gets
a sidecar `<out>.manifest.json` recording the command, parameters, potential
hash, package version, seed and a timestamp; the result file itself carries
no timestamp, so identical manifests give byte-identical results.

Exit codes: 0 success, 2 a validation or acceptance check failed,
1 an error, 64 bad usage.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import metadata

import numpy as np

from . import decomp, embed, lattice, paths, potential, relax, topology, verify
from . import energy as en
from .configuration import Configuration, read_xyz, write_xyz
from .errors import CrystalError

EXIT_OK, EXIT_ERROR, EXIT_FAILED, EXIT_USAGE = 0, 1, 2, 64


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _dumps(doc) -> str:
    return json.dumps(verify._clean(doc), sort_keys=True, indent=1)


def _load_potential(args):
    """Potential from --potential, or the canonical tuned pair and triple at --alpha."""
    if getattr(args, "potential", None):
        with open(args.potential) as fh:
            text = fh.read()
        pair, triple = potential.loads(text)
        if triple is None:
            triple = potential.ZeroTriple(pair.alpha)
        return pair, triple, hashlib.sha256(text.encode()).hexdigest()
    pair = potential.build_canonical_pair(args.alpha)
    triple = potential.build_canonical_triple(args.alpha)
    return pair, triple, hashlib.sha256(potential.dumps(pair, triple).encode()).hexdigest()


def _emit(args, doc, potential_hash=None, text=None):
    """Print or write a result; written results get a manifest beside them."""
    body = _dumps(doc) if text is None else text
    out = getattr(args, "out", None)
    if not out:
        sys.stdout.write(body if body.endswith("\n") else body + "\n")
        return
    with open(out, "w") as fh:
        fh.write(body if body.endswith("\n") else body + "\n")
    _write_manifest(args, potential_hash)


def _write_manifest(args, potential_hash=None):
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {"command": " ".join(sys.argv[1:]) or f"{args.group} {args.action}",
                "parameters": params, "potential_sha256": potential_hash,
                "version": _version(), "seed": getattr(args, "seed", None),
                "timestamp": datetime.now(timezone.utc).isoformat()}
    with open(args.out + ".manifest.json", "w") as fh:
        fh.write(_dumps(manifest) + "\n")


# ---------------------------------------------------------------------------
# lattice


def cmd_lattice_gen(args):
    sites = lattice.generate(args.kind, args.radius, center=tuple(args.center))
    cfg = Configuration(sites.cart)
    if args.out:
        write_xyz(args.out, cfg, comment_fields={"kind": args.kind, "radius": repr(args.radius)})
        _write_manifest(args)
    else:
        write_xyz(sys.stdout, cfg, comment_fields={"kind": args.kind, "radius": repr(args.radius)})
    return EXIT_OK


def cmd_lattice_shells(args):
    table = lattice.shells(args.kind, args.rmax)
    rows = [{"radius": table.radius(k), "squared_key": k, "count": table.counts[k]} for k in table.keys]
    if args.json:
        _emit(args, {repr(r["radius"]): r["count"] for r in rows})
    else:
        lines = [f"{r['radius']:.12f}  {r['count']}" for r in rows]
        _emit(args, None, text="\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# potential


def cmd_potential_build(args):
    pair = potential.build_canonical_pair(
        args.alpha, potential.CanonicalOptions(bridge_end=args.bridge_end, tune=not args.no_tune))
    triple = potential.build_canonical_triple(args.alpha, args.penalty)
    text = potential.dumps(pair, triple)
    _emit(args, None, hashlib.sha256(text.encode()).hexdigest(), text)
    return EXIT_OK


def cmd_potential_validate(args):
    pair, triple, h = _load_potential(args)
    rep = potential.validate(pair, triple, args.grid_step)
    _emit(args, rep.to_dict(), h)
    return EXIT_OK if rep.ok else EXIT_FAILED


def cmd_potential_tune(args):
    pair, triple, _ = _load_potential(args)
    tuned = potential.tune_equilibrium(pair, tol=args.tol)
    text = potential.dumps(tuned, triple)
    _emit(args, None, hashlib.sha256(text.encode()).hexdigest(), text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# energy, classify, embed


def cmd_energy_eval(args):
    pair, triple, h = _load_potential(args)
    cfg = read_xyz(args.xyz)
    e = en.energy(cfg, pair, triple, args.r_cut)
    doc = e.to_dict(cfg.ids if args.per_particle else None)
    if not args.per_particle:
        doc.pop("per_particle")
    _emit(args, doc, h)
    return EXIT_OK


def _classify(args, cfg):
    graph = topology.bond_graph(cfg, args.alpha)
    return topology.classify(cfg, graph, args.eps_max, strict=args.strict)


def cmd_classify_run(args):
    cfg = read_xyz(args.xyz)
    cls = _classify(args, cfg)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(cls.to_csv())
    if args.xyz_out:
        cls.write_xyz(args.xyz_out)
    counts = {name: int(np.sum(cls.labels == name)) for name in (topology.CO, topology.TCO, topology.DEFECT)}
    _emit(args, {"n": len(cfg), "alpha": args.alpha, "eps_max": cls.eps_max, "counts": counts,
                 "relations": topology.count_relations(cls.graph, cls), "classes": cls.classes})
    return EXIT_OK


def cmd_embed_grow(args):
    cfg = read_xyz(args.xyz)
    cls = _classify(args, cfg)
    ref = embed.grow_reference(cls, args.site, args.r)
    doc = json.loads(ref.to_json())
    doc["max_orientation_distance"] = ref.max_orientation_distance()
    if ref.complete_simplices.any():
        doc["rigidity"] = embed.rigidity_report(ref, cls.graph, seed=args.seed).to_dict()
    _emit(args, doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# paths


def cmd_paths_enumerate(args):
    found = paths.enumerate_paths(tuple(args.k), renormalize=not args.raw)
    if args.jsonl:
        with open(args.jsonl, "w") as fh:
            paths.write_paths_jsonl(found, fh)
    _emit(args, {"k": args.k, "count": len(found), "generic": paths.is_generic(args.k)
                 if len(found) and found[0].length > math.sqrt(3.0) + 1e-9 else None,
                 "paths": [p.to_dict() for p in found]})
    return EXIT_OK


def cmd_paths_lemma(args):
    bases = lattice.enumerate_bases()
    pick = np.sort(np.random.default_rng(args.seed).choice(len(bases), args.n_bases, replace=False))
    lams = [args.lam] if args.lam else list(paths.lattice_lengths(args.lam_max + 1e-9))
    rows, worst = [], 0.0
    for lam in lams:
        for b in pick:
            for i in range(3):
                lhs, rhs = paths.lemma_lambda_check(lam, bases[b], bases[b][:, i])
                worst = max(worst, abs(lhs - rhs))
                rows.append({"lambda": lam, "basis": int(b), "column": i, "lhs": lhs, "rhs": rhs})
    ok = worst <= args.tol
    _emit(args, {"ok": ok, "max_abs_error": worst, "rows": rows}, None)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_paths_normalization(args):
    if args.k:
        results = [paths.normalization_check(tuple(args.k))]
    else:
        results = []
        for k in verify._endpoints(math.sqrt(3.0), args.k_max):
            res = paths.normalization_check(k)
            if res.generic or args.include_degenerate:
                results.append(res)
            if len(results) >= args.count:
                break
    rows = [{"k": list(r.k), "total": r.total, "generic": r.generic,
             "error": abs(r.total - 1.0) if r.generic else None} for r in results]
    worst = max((row["error"] for row in rows if row["error"] is not None), default=0.0)
    ok = worst <= args.tol
    _emit(args, {"ok": ok, "max_abs_error": worst, "rows": rows})
    return EXIT_OK if ok else EXIT_FAILED


# ---------------------------------------------------------------------------
# decompose


def cmd_decompose_run(args):
    pair, triple, h = _load_potential(args)
    cfg = read_xyz(args.xyz)
    cls = _classify(args, cfg)
    sets = paths.pair_sets(cls, args.long_cap, args.clearance_factor)
    rep = decomp.decompose(cfg, pair, triple, cls, sets)
    _emit(args, rep.to_dict(), h)
    return EXIT_OK if rep.closure_error <= decomp.LEDGER_RTOL else EXIT_FAILED


def cmd_decompose_finebound(args):
    pair, triple, h = _load_potential(args)
    e_star = potential.efcc(pair, triple, 1.0)
    rows = []
    for path in args.xyz:
        cfg = read_xyz(path)
        cls = _classify(args, cfg)
        row = {"file": os.path.basename(path), "n": len(cfg)}
        row.update(decomp.fine_bound_report(cfg, pair, triple, cls, e_star).to_dict())
        rows.append(row)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(decomp.rows_to_csv(rows))
    _emit(args, {"e_star": e_star, "rows": rows}, h)
    return EXIT_OK


# ---------------------------------------------------------------------------
# relax


def cmd_relax_run(args):
    pair, triple, h = _load_potential(args)
    cfg = read_xyz(args.xyz)
    opts = relax.RelaxOptions(method=args.method, force_tol=args.force_tol, max_steps=args.max_steps,
                              step_init=args.step_init, seed=args.seed)
    res = relax.relax(cfg, pair, triple, opts)
    if args.xyz_out:
        write_xyz(args.xyz_out, res.final, comment_fields={"energy": repr(res.energy_trace[-1])})
    _emit(args, {"converged": res.converged, "steps": res.steps, "message": res.message,
                 "max_force": res.max_force, "min_distance": res.min_distance,
                 "energy_initial": res.energy_trace[0], "energy_final": res.energy_trace[-1],
                 "energy_trace": res.energy_trace if args.trace else None}, h)
    return EXIT_OK if res.converged else EXIT_FAILED


def cmd_relax_upper_bound(args):
    pair, triple, h = _load_potential(args)
    e_star = potential.efcc(pair, triple, 1.0)
    # Rows are independent; map keeps them in input order whatever the worker count.
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = [r for chunk in pool.map(
            lambda R: relax.experiment_upper_bound(pair, triple, [R], e_star), args.radii) for r in chunk]
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(decomp.rows_to_csv(rows))
    _emit(args, {"e_star": e_star, "rows": rows}, h)
    return EXIT_OK


def cmd_relax_fcc_vs_hcp(args):
    pair, triple, h = _load_potential(args)
    res = relax.experiment_fcc_vs_hcp(pair, triple, args.R, args.interior)
    _emit(args, res, h)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify_all(args):
    results = verify.run_all(args.threads)
    sys.stderr.write(verify.summary_table(results) + "\n")
    _emit(args, None, text=verify.dumps(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


# ---------------------------------------------------------------------------
# Parser


def _common_potential(p):
    p.add_argument("--potential", help="potential JSON (default: canonical tuned potential at --alpha)")
    p.add_argument("--alpha", type=float, default=0.05, help="well width alpha (default: %(default)s)")


def _common_classify(p):
    p.add_argument("--eps-max", type=float, default=None,
                   help="registration threshold (default: 10 * alpha)")
    p.add_argument("--strict", action="store_true", help="fail on ambiguous registrations")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    top = Parser(prog="crystalopt", description="Close-packed crystal energy toolkit.", formatter_class=fmt)
    groups = top.add_subparsers(dest="group", required=True, parser_class=Parser)

    def action(group, name, func, help_text):
        p = group.add_parser(name, help=help_text, formatter_class=fmt)
        p.add_argument("--out", help="write the result here (plus a manifest sidecar)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads for independent work items")
        p.set_defaults(func=func)
        return p

    g = groups.add_parser("lattice", help="lattice sites and shells").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "gen", cmd_lattice_gen, "lattice ball as extended XYZ")
    p.add_argument("--kind", choices=lattice.KINDS, default=lattice.FCC)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--center", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p = action(g, "shells", cmd_lattice_shells, "coordination shells up to --rmax")
    p.add_argument("--kind", choices=lattice.KINDS, default=lattice.FCC)
    p.add_argument("--rmax", type=float, required=True)
    p.add_argument("--json", action="store_true", help="JSON {radius: count}")

    g = groups.add_parser("potential", help="build, validate, tune").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "build", cmd_potential_build, "canonical potential JSON")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bridge-end", type=float, default=1.70)
    p.add_argument("--penalty", type=float, default=None, help="three-body amplitude (default: 2/alpha)")
    p.add_argument("--no-tune", action="store_true", help="skip the equilibrium tuning of the tail")
    p = action(g, "validate", cmd_potential_validate, "check the localized-potential conditions")
    _common_potential(p)
    p.add_argument("--grid-step", type=float, default=None, help="grid step (default: alpha/10)")
    p = action(g, "tune", cmd_potential_tune, "tune the tail so the renormalized slope at 1 vanishes")
    _common_potential(p)
    p.add_argument("--tol", type=float, default=1e-8)

    g = groups.add_parser("energy", help="energy evaluation").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "eval", cmd_energy_eval, "total and per-particle energy of an XYZ file")
    _common_potential(p)
    p.add_argument("--xyz", required=True)
    p.add_argument("--r-cut", type=float, default=None, help="pair cutoff (default: potential cutoff)")
    p.add_argument("--per-particle", action="store_true")

    g = groups.add_parser("classify", help="CO / TCO / DEFECT labels").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "run", cmd_classify_run, "classify every particle")
    p.add_argument("--xyz", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    _common_classify(p)
    p.add_argument("--csv", help="per-particle table")
    p.add_argument("--xyz-out", help="XYZ with a site_class column")

    g = groups.add_parser("embed", help="reference configurations").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "grow", cmd_embed_grow, "grow a lattice reference around a regular site")
    p.add_argument("--xyz", required=True)
    p.add_argument("--site", type=int, required=True, help="particle id of the seed")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0, help="pair sampling seed for the rigidity report")
    _common_classify(p)

    g = groups.add_parser("paths", help="admissible lattice paths").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "enumerate", cmd_paths_enumerate, "paths from 0 to k (integer fcc coordinates)")
    p.add_argument("--k", type=int, nargs=3, required=True)
    p.add_argument("--raw", action="store_true", help="report raw weights without renormalization")
    p.add_argument("--jsonl", help="one path per line")
    p = action(g, "check-lemma-lambda", cmd_paths_lemma, "basis-coefficient identity per length")
    p.add_argument("--lam", type=float, default=None, help="one length (default: all up to --lam-max)")
    p.add_argument("--lam-max", type=float, default=3.0)
    p.add_argument("--n-bases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p = action(g, "check-normalization", cmd_paths_normalization, "sum of path weights per endpoint")
    p.add_argument("--k", type=int, nargs=3, default=None)
    p.add_argument("--k-max", type=float, default=4.0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--include-degenerate", action="store_true")
    p.add_argument("--tol", type=float, default=1e-12)

    g = groups.add_parser("decompose", help="energy ledger").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "run", cmd_decompose_run, "structural, elastic and defect energy parts")
    _common_potential(p)
    _common_classify(p)
    p.add_argument("--xyz", required=True)
    p.add_argument("--long-cap", type=float, default=paths.LONG_CAP)
    p.add_argument("--clearance-factor", type=float, default=paths.CLEARANCE_FACTOR)
    p = action(g, "finebound", cmd_decompose_finebound, "measured constant of the fine energy bound")
    _common_potential(p)
    _common_classify(p)
    p.add_argument("--xyz", nargs="+", required=True)
    p.add_argument("--csv")

    g = groups.add_parser("relax", help="minimization and experiments").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    p = action(g, "run", cmd_relax_run, "relax an XYZ configuration")
    _common_potential(p)
    p.add_argument("--xyz", required=True)
    p.add_argument("--method", choices=relax.METHODS, default=relax.FIRE)
    p.add_argument("--force-tol", type=float, default=1e-8)
    p.add_argument("--max-steps", type=int, default=100_000)
    p.add_argument("--step-init", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="include the energy trace")
    p.add_argument("--xyz-out")
    p = action(g, "upper-bound", cmd_relax_upper_bound, "energy per particle of fcc balls")
    _common_potential(p)
    p.add_argument("--radii", type=float, nargs="+", default=[3.0, 4.0, 5.0, 6.0, 8.0])
    p.add_argument("--csv")
    p = action(g, "fcc-vs-hcp", cmd_relax_fcc_vs_hcp, "interior energies of fcc and hcp balls")
    _common_potential(p)
    p.add_argument("--R", type=float, default=6.0)
    p.add_argument("--interior", type=float, default=None, help="interior radius (default: R/3)")

    g = groups.add_parser("verify", help="acceptance suite").add_subparsers(
        dest="action", required=True, parser_class=Parser)
    action(g, "all", cmd_verify_all, "run every acceptance criterion")
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # Reader closed early (e.g. piped into head); silence the flush at exit.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (CrystalError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"crystalopt: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
