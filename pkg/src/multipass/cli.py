"""Command-line front end: ``multipass <subcommand> ...``.

Exit codes: 0 on success, 2 when a library precondition or input check
fails (a JSON error object goes to stderr), 64 on usage errors.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .critical import (
    SublevelPath,
    compute_delta0,
    connect_negative_sublevel,
    default_delta,
    verify_localmin_property,
)
from .critical.localmin import qq_c0
from .critical.structure import check_octopole_nondegeneracy, octopole_kernel_vectors, qq_structure
from .errors import MultipassError, ParseError
from .interaction import interaction_expansion
from .io import (
    dumps,
    family_from_dict,
    load_config,
    load_model,
    load_molecule,
    load_toy,
    multipoles_from_any,
    read_json,
)
from .mountainpass import DiscretePath, minmax_optimize, relax_to_minimum, surgery, transition_state
from .multipole import MultipoleSet, compute_multipoles, direct_coulomb
from .so3 import Rotation, haar_matrices
from .toyquantum import check_vdw_positivity, cvdw_batch, dress_path

EXIT_USAGE = 64
EXIT_DOMAIN = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _rotation_arg(text):
    try:
        return Rotation.parse(text)
    except ParseError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _nm_arg(text):
    try:
        n, m = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected n,m (for example 2,2)") from None
    return n, m


def _sweep_arg(text):
    try:
        a, b, k = text.split(":")
        a, b, k = float(a), float(b), int(k)
    except ValueError:
        raise argparse.ArgumentTypeError("expected L1:L2:steps") from None
    if k < 1 or a <= 0 or b <= 0:
        raise argparse.ArgumentTypeError("sweep needs positive L values and at least one step")
    return a, b, k


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# canonical multipoles for the critical-point subcommands


def canonical_multipoles(order) -> MultipoleSet:
    """Unit dipole along e1, linear quadrupole diag(2,-1,-1), or the tetrahedral octopole |eps_ijk|."""
    if order == 1:
        return MultipoleSet.from_tensors(D=[1.0, 0.0, 0.0])
    if order == 2:
        return MultipoleSet.from_tensors(Q=np.diag([2.0, -1.0, -1.0]))
    if order == 3:
        O = np.zeros((3, 3, 3))
        for i, j, k in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            O[i, j, k] = 1.0
        return MultipoleSet.from_tensors(O=O)
    raise ParseError(f"no canonical multipole of order {order}; pass --pair files")


def _pair(args, n, m):
    if args.pair:
        return multipoles_from_any(args.pair[0]), multipoles_from_any(args.pair[1])
    return canonical_multipoles(n), canonical_multipoles(m)


# ---------------------------------------------------------------------------
# subcommands


def cmd_multipoles(args):
    ms = compute_multipoles(load_molecule(args.file), args.order)
    out = ms.to_dict()
    out["max_order"] = args.order
    for key, n in (("D", 1), ("Q", 2), ("O", 3), ("H", 4)):
        if n > args.order:
            out.pop(key)
    _emit(dumps(out), args.out)


def cmd_interact(args):
    d1, d2 = load_molecule(args.file1), load_molecule(args.file2)
    U, V = args.U.matrix, args.V.matrix
    if args.sweep:
        a, b, k = args.sweep
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["L", "value", "direct_coulomb"])
        for L in np.geomspace(a, b, k + 1) if k else [a]:
            _, val = interaction_expansion(d1, d2, U, V, float(L), args.order)
            w.writerow([f"{L:.17g}", f"{val:.17g}", f"{direct_coulomb(d1, d2, U, V, float(L)):.17g}"])
        _emit(buf.getvalue(), args.out)
        return
    if args.L is None:
        raise UsageError("interact: --L or --sweep is required")
    table, val = interaction_expansion(d1, d2, U, V, args.L, args.order)
    _emit(dumps({"L": args.L, "order": args.order, "U": args.U.to_list(), "V": args.V.to_list(),
                 "table": table.to_dict(), "value": val}), args.out)


def cmd_critical_scan(args):
    n, m = args.nm
    m1, m2 = _pair(args, n, m)
    rep = verify_localmin_property(n, m, m1, m2, delta=args.delta, samples=args.samples, seed=args.seed)
    _emit(dumps(rep.to_dict()), args.out)


def cmd_critical_connect(args):
    n, m = args.nm
    m1, m2 = _pair(args, n, m)
    a = load_config(args.from_cfg, default_L=1.0)
    b = load_config(args.to_cfg, default_L=1.0)
    delta = args.delta if args.delta is not None else 0.5 * compute_delta0(n, m, m1, m2)
    path: SublevelPath = connect_negative_sublevel(n, m, m1, m2, (a.U.matrix, a.V.matrix),
                                                  (b.U.matrix, b.V.matrix), delta)
    _emit(path.to_csv(), args.out)


def cmd_critical_qq(args):
    m1, m2 = _pair(args, 2, 2)
    st = qq_structure(m1.Q, m2.Q, args.U)
    out = st.to_dict()
    out["c0"] = qq_c0(m1.Q, m2.Q)
    out["default_delta"], out["default_delta_rule"] = default_delta(2, 2, m1, m2)
    out["delta0"] = compute_delta0(2, 2, m1, m2)
    _emit(dumps(out), args.out)


def cmd_critical_octopole(args):
    ms = multipoles_from_any(args.file) if args.file else canonical_multipoles(3)
    ok = check_octopole_nondegeneracy(ms.O)
    out = {"O": ms.O, "nondegenerate": ok,
           "kernel_vectors": [v.tolist() for v in octopole_kernel_vectors(ms.O)] if ok else []}
    _emit(dumps(out), args.out)


def cmd_mountain_pass(args):
    me = load_model(args.model)
    a, b = load_config(args.from_cfg), load_config(args.to_cfg)
    if args.relax:
        a, b = relax_to_minimum(me, a).tau, relax_to_minimum(me, b).tau
    path = DiscretePath.geodesic(a, b, args.nodes)
    path, history = minmax_optimize(me, path, iters=args.iters)
    surg = None
    if args.surgery_L is not None:
        path, surg = surgery(me, path, args.surgery_L)
    ts = transition_state(me, path)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "path.csv").write_text(path.to_csv())
    (out_dir / "surgery.json").write_text(dumps(surg.to_dict() if surg else {"noop": True}))
    (out_dir / "transition_state.json").write_text(dumps(ts.to_dict()))
    sys.stdout.write(dumps({"max_energy": path.max_energy, "accepted_iterations": len(history) - 1,
                            "nodes": len(path), "files": ["path.csv", "surgery.json", "transition_state.json"]}))


def cmd_vdw_toy(args):
    a, b = load_toy(args.a), load_toy(args.b)
    rep = check_vdw_positivity(a, b, samples=args.samples, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    Us, Vs = haar_matrices(args.samples, rng), haar_matrices(args.samples, rng)
    avg = cvdw_batch(a, b, Us, Vs, averaged=True)
    out = rep.to_dict()
    out.update({"ok": rep.ok, "gap_a": a.gap, "gap_b": b.gap, "ground_rank_a": a.rank, "ground_rank_b": b.rank,
                "averaged_cvdw_mean": float(avg.mean()), "averaged_cvdw_min": float(avg.min())})
    _emit(dumps(out), args.out)


def cmd_dress(args):
    obj = read_json(args.family)
    fam, x0, x1 = family_from_dict(obj, str(args.family))
    if x0 is None:
        x0 = np.linalg.eigh(fam(0.0))[1][:, 0]
    if x1 is None:
        x1 = np.linalg.eigh(fam(1.0))[1][:, 0]
    path = dress_path(fam, x0, x1, args.eps)
    _emit(path.to_csv(), args.out)


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="multipass", description="Multipolar interaction landscapes and mountain-pass paths.")
    p.add_argument("--version", action="version", version=f"multipass {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("multipoles", help="multipole tensors of a point-charge molecule")
    s.add_argument("file")
    s.add_argument("--order", type=int, default=4, choices=[1, 2, 3, 4])
    s.add_argument("--out")
    s.set_defaults(func=cmd_multipoles)

    s = sub.add_parser("interact", help="multipolar interaction of two molecules")
    s.add_argument("file1")
    s.add_argument("file2")
    s.add_argument("--L", type=float)
    s.add_argument("--U", type=_rotation_arg, default=Rotation())
    s.add_argument("--V", type=_rotation_arg, default=Rotation())
    s.add_argument("--order", type=int, default=5, choices=[2, 3, 4, 5])
    s.add_argument("--sweep", type=_sweep_arg, help="L1:L2:steps, geometric spacing, CSV output")
    s.add_argument("--out")
    s.set_defaults(func=cmd_interact)

    crit = sub.add_parser("critical", help="critical points of F^(n,m) on SO(3) x SO(3)")
    csub = crit.add_subparsers(dest="critical_command", parser_class=_Parser)

    def pair_opts(s, nm=True):
        s.add_argument("--pair", nargs=2, metavar=("FILE1", "FILE2"),
                       help="molecule or multipole files; default: canonical tensors")
        if nm:
            s.add_argument("--nm", type=_nm_arg, required=True)
        s.add_argument("--out")

    s = csub.add_parser("scan", help="search for near-critical points with F > -delta")
    pair_opts(s)
    s.add_argument("--delta", type=float)
    s.add_argument("--samples", type=int, default=100000)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_critical_scan)

    s = csub.add_parser("connect", help="path inside {F < -delta} between two orientations")
    pair_opts(s)
    s.add_argument("--from", dest="from_cfg", required=True)
    s.add_argument("--to", dest="to_cfg", required=True)
    s.add_argument("--delta", type=float)
    s.set_defaults(func=cmd_critical_connect)

    s = csub.add_parser("qq", help="quadrupole-quadrupole eigenvalue-pairing structure")
    pair_opts(s, nm=False)
    s.add_argument("--U", type=_rotation_arg, default=None)
    s.set_defaults(func=cmd_critical_qq)

    s = csub.add_parser("octopole", help="octopole non-degeneracy and kernel directions")
    s.add_argument("file", nargs="?")
    s.add_argument("--out")
    s.set_defaults(func=cmd_critical_octopole)

    s = sub.add_parser("mountain-pass", help="min-max path, surgery and transition state")
    s.add_argument("--model", required=True)
    s.add_argument("--from", dest="from_cfg", required=True)
    s.add_argument("--to", dest="to_cfg", required=True)
    s.add_argument("--nodes", type=int, default=64)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--surgery-L", dest="surgery_L", type=float)
    s.add_argument("--relax", action="store_true", help="relax both endpoints to local minima first")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_mountain_pass)

    s = sub.add_parser("vdw-toy", help="positivity of the toy van der Waals coefficient")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_vdw_toy)

    s = sub.add_parser("dress", help="ground-state dressing of a Hamiltonian path")
    s.add_argument("--family", required=True)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_dress)
    return p


def _thread_limit():
    value = os.environ.get("MULTIPASS_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"MULTIPASS_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage())
        with _thread_limit():
            args.func(args)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return EXIT_USAGE
    except MultipassError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return EXIT_DOMAIN
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}, sort_keys=True) + "\n")
        return EXIT_DOMAIN
    return 0


if __name__ == "__main__":
    sys.exit(main())
