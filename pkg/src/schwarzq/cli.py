"""Command-line entry point: reproduce the benchmark tables, run custom
configurations, and execute the invariant suite."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, schwarz, tables
from .export import write_rows_csv
from .fem import Coefficient, MeshSpec, assemble_stiffness
from .qsvt import InnerProductConfig, solve_inner_product
from .reference import load_reference, tolerances
from .spectral import precond_spectrum, unpreconditioned_kappa

__all__ = ["main", "ExperimentConfig"]


@dataclasses.dataclass
class ExperimentConfig:
    """Validated description of one custom pipeline run."""

    d: int
    L: int
    N_s: tuple[int, ...]
    delta: float
    precond: str = "as2"        # as1 | as2 | hyb
    local: str = "exact"        # exact | bpx
    coarse: str = "nodal"       # nodal | pou | off
    tol: float = 1e-8
    qsvt: dict | None = None    # {eps, runs, shots, seed}
    out: str | None = None

    def __post_init__(self):
        self.N_s = tuple(int(n) for n in self.N_s)
        self.mesh = MeshSpec(self.d, self.L, self.N_s, self.delta)  # validates
        if self.precond not in ("as1", "as2", "hyb"):
            raise ValueError(f"unknown preconditioner flavor {self.precond!r}")
        if self.local not in ("exact", "bpx"):
            raise ValueError(f"unknown local solver {self.local!r}")
        if self.coarse not in ("nodal", "pou", "off"):
            raise ValueError(f"unknown coarse option {self.coarse!r}")
        if self.precond == "hyb" and self.coarse == "off":
            raise ValueError("hybrid flavor requires a coarse space")
        if self.qsvt is not None and self.d != 1:
            raise ValueError("the sampled inner-product pipeline is one-dimensional")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        doc["N_s"] = tuple(doc.get("N_s", doc.pop("N", ())))
        return cls(**doc)


def _provenance(extra=None) -> dict:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        ).stdout.strip() or "unknown"
    except Exception:
        rev = "unknown"
    doc = {
        "package_version": __version__,
        "git_hash": rev,
        "tolerances": tolerances(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        doc.update(extra)
    return doc


def _print_table(result: dict) -> bool:
    cols = result["columns"]
    print(f"\n{result['name']}  (config {result['config']})")
    header = f"{'row':>12} " + " ".join(f"{c:>22}" for c in cols)
    print(header)
    all_ok = True
    for row in result["rows"]:
        parts = [f"{row['label']:>12}"]
        for c in cols:
            cell = row["cells"][c]
            ok = cell["pass"]
            all_ok &= ok
            parts.append(
                f"{cell['value']:>10.6g}/{cell['ref']:<6g}{'PASS' if ok else 'FAIL'}"
            )
        print(" ".join(parts))
    if "footnote" in result:
        print(f"note: {result['footnote']}")
    return all_ok


def _table_rows_for_csv(result: dict) -> list[dict]:
    rows = []
    for row in result["rows"]:
        flat = {"row": row["label"]}
        reports = row.get("reports", {})
        for c in result["columns"]:
            cell = row["cells"][c]
            flat[c] = cell["value"]
            flat[f"{c}_ref"] = cell["ref"]
            flat[f"{c}_pass"] = cell["pass"]
        for name, rep in reports.items():
            if hasattr(rep, "lambda_min"):
                flat[f"{name}_lambda_min"] = rep.lambda_min
                flat[f"{name}_lambda_max"] = rep.lambda_max
        rows.append(flat)
    return rows


def cmd_table(args) -> int:
    kw = {}
    if args.which == 4:
        kw = {"runs": args.runs, "shots": args.shots, "seed": args.seed,
              "eps": args.eps}
    result = tables.compute_table(args.which, threads=args.threads, **kw)
    ok = _print_table(result)
    outdir = Path(args.out) if args.out else Path.cwd()
    outdir.mkdir(parents=True, exist_ok=True)
    write_rows_csv(outdir / f"{result['name']}.csv", _table_rows_for_csv(result))
    prov = _provenance({"table": result["name"], "config": result["config"]})
    (outdir / f"{result['name']}_provenance.json").write_text(json.dumps(prov, indent=1))
    print(f"{'all cells PASS' if ok else 'some cells FAIL'}; "
          f"wrote {outdir / (result['name'] + '.csv')}")
    return 0 if ok else 1


def _solve_report(cfg: ExperimentConfig) -> dict:
    mesh = cfg.mesh
    rho = Coefficient.identity(mesh)
    A = assemble_stiffness(mesh, rho)
    layout = schwarz.build_layout(mesh)
    doc = {"config": {k: v for k, v in dataclasses.asdict(cfg).items() if k != "qsvt"}}
    doc["unpreconditioned"] = unpreconditioned_kappa(A, tol=cfg.tol).as_row()
    if cfg.coarse == "off" and cfg.precond == "as2":
        flavor = "as1"
    else:
        flavor = cfg.precond
    pre = schwarz.build_preconditioner(
        A, layout, flavor=flavor, local=cfg.local,
        use_coarse=cfg.coarse != "off",
        coarse_kind=cfg.coarse if cfg.coarse != "off" else "nodal",
    )
    doc["preconditioned"] = precond_spectrum(A, pre, tol=cfg.tol).as_row()
    doc["flavor_tag"] = pre.flavor_tag
    if cfg.qsvt is not None:
        q = dict(cfg.qsvt)
        rep = solve_inner_product(InnerProductConfig(
            L=cfg.L, N1=cfg.N_s[0], delta=cfg.delta,
            eps=q.get("eps", 1e-6), runs=q.get("runs", 100),
            shots=q.get("shots", 10**6), seed=q.get("seed", 1234),
        ))
        doc["qsvt"] = rep.to_json_dict()
    return doc


def cmd_solve(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        if args.N is None or args.d is None or args.L is None or args.delta is None:
            raise SystemExit("solve needs --config or all of --d --L --N --delta")
        qsvt = None
        if args.qsvt:
            qsvt = {"eps": args.eps, "runs": args.runs, "shots": args.shots,
                    "seed": args.seed}
        cfg = ExperimentConfig(
            d=args.d, L=args.L, N_s=tuple(int(x) for x in args.N.split(",")),
            delta=args.delta, precond=args.precond, local=args.local,
            coarse=args.coarse, tol=args.tol, qsvt=qsvt, out=args.out,
        )
    doc = _solve_report(cfg)
    doc["provenance"] = _provenance()
    text = json.dumps(doc, indent=1)
    if cfg.out:
        Path(cfg.out).write_text(text)
        print(f"wrote {cfg.out}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# invariant suite

def _invariant_checks():
    import scipy.sparse as sp

    from .bpx import build_bpx
    from .circuits import RegisterLayout, prepare_rhs_state, prolongation_tensor, \
        rhs_state_to_coefficients
    from .encoding import compose_concat_columns, compose_product, encode_dilation
    from .fem import assemble_rhs, coefficient_block_expanded, factorize_gradient
    from .qsvt import build_inverse_poly

    rng = np.random.default_rng(7)

    def factorization():
        worst = 0.0
        for d, L, N, delta in [(1, 3, (2,), 0.125), (2, 3, (2, 2), 0.125)]:
            mesh = MeshSpec(d, L, N, delta)
            vals = rng.uniform(0.5, 3.0, mesh.n_elems)
            rho = Coefficient.isotropic(mesh, vals)
            A = assemble_stiffness(mesh, rho)
            C = factorize_gradient(mesh)
            D = coefficient_block_expanded(mesh, rho)
            R = (A - C.T @ (D @ C)).toarray()
            worst = max(worst, np.abs(R).max() / np.abs(A.toarray()).max())
        return worst <= 1e-12, f"max rel defect {worst:.2e}"

    def split_factor():
        mesh = MeshSpec(1, 3, (2,), 0.125)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = schwarz.build_layout(mesh)
        pre = schwarz.build_preconditioner(A, layout, flavor="as2", coarse_kind="nodal")
        Ft = pre.dense_factor()
        H = np.column_stack([pre.apply(e) for e in np.eye(mesh.n_dofs)])
        err = np.abs(Ft @ Ft.T - H).max()
        x, y = rng.standard_normal(mesh.n_dofs), rng.standard_normal(pre.total_cols)
        adj = abs(pre.apply_Ftilde(y) @ x - y @ pre.apply_Ftilde_T(x))
        return err <= 1e-12 and adj <= 1e-13, f"|FF^T - H| {err:.2e}, adjoint {adj:.2e}"

    def gradient_switch():
        mesh = MeshSpec(2, 3, (2, 2), 0.125)
        layout = schwarz.build_layout(mesh)
        ok = all(
            schwarz.local_gradient_identity_check(mesh, layout, i)
            for i in range(layout.n_subdomains)
        )
        return ok, "prolong-then-gradient equals gradient-then-prolong"

    def multilevel_nesting():
        F = build_bpx(4, 1)
        ok = True
        for (s, I_lL), (s2, I_next) in zip(F.blocks[:-1], F.blocks[1:]):
            from .bpx import embedding_1d
            l = int(round(np.log2(I_lL.shape[1] + 1)))
            ok &= (I_lL - I_next @ embedding_1d(l)).nnz == 0
        return ok, "level embeddings compose"

    def lanczos_vs_dense():
        from .spectral import extreme_eigs_sym
        M = rng.standard_normal((80, 80))
        M = M @ M.T + 1e-3 * np.eye(80)
        rep = extreme_eigs_sym(lambda x: M @ x, 80, tol=1e-10)
        ev = np.linalg.eigvalsh(M)
        err = max(abs(rep.lambda_min - ev[0]) / ev[0],
                  abs(rep.lambda_max - ev[-1]) / ev[-1])
        return err <= 1e-6, f"extreme-eig error {err:.2e}"

    def circuit_prolongation():
        mesh = MeshSpec(2, 2, (2, 2), 0.25)
        layout = schwarz.build_layout(mesh)
        reg = RegisterLayout.from_mesh(mesh)
        ok = True
        for i, multi in enumerate(layout.multi_indices):
            be = prolongation_tensor(reg, multi)
            classical = schwarz.dg_prolongation(layout, i).toarray()
            ok &= np.array_equal(be.encoded(), classical)
        return ok, "register permutations reproduce the classical extensions"

    def encoding_laws():
        Ma, Mb = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
        a = encode_dilation(Ma, 2.0 * np.linalg.norm(Ma, 2))
        bb = encode_dilation(Mb, 1.5 * np.linalg.norm(Mb, 2))
        prod = compose_product(a, bb)
        err1 = np.abs(prod.encoded() - Ma @ Mb).max()
        cat = compose_concat_columns([a, bb])
        err2 = np.abs(cat.encoded() - np.hstack([Ma, Mb])).max()
        ok = (err1 <= 1e-11 and err2 <= 1e-11
              and prod.alpha == a.alpha * bb.alpha
              and cat.alpha == np.sqrt(a.alpha**2 + bb.alpha**2))
        return ok, f"product {err1:.2e}, concat {err2:.2e}"

    def polynomial():
        poly = build_inverse_poly(4.0, 1e-8)
        x = np.linspace(0.25, 1.0, 400)
        err = np.abs(x * poly(x) / poly.inv_scale - 1.0).max()
        xg = np.linspace(-1, 1, 1001)
        odd = np.abs(poly(xg) + poly(-xg)).max()
        return err <= 1e-8 and odd <= 1e-14, f"window error {err:.2e}, oddness {odd:.2e}"

    def rhs_state():
        mesh = MeshSpec(1, 3, (2,), 0.125)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = schwarz.build_layout(mesh)
        pre = schwarz.build_preconditioner(A, layout, flavor="as2", coarse_kind="nodal")
        b = assemble_rhs(mesh, 1.0)
        state, norms = prepare_rhs_state(pre, b)
        y = pre.apply_Ftilde_T(b)
        err = np.abs(rhs_state_to_coefficients(state, pre) - y / np.linalg.norm(y)).max()
        wsum = abs(np.linalg.norm(state) - 1.0)
        return err <= 1e-13 and wsum <= 1e-13, f"state error {err:.2e}"

    def spectrum_bound():
        mesh = MeshSpec(2, 3, (2, 2), 0.125)
        A = assemble_stiffness(mesh, Coefficient.identity(mesh))
        layout = schwarz.build_layout(mesh)
        pre = schwarz.build_preconditioner(A, layout, flavor="as2", coarse_kind="pou")
        rep = precond_spectrum(A, pre, tol=1e-9)
        bound = layout.coloring_constant + 1
        return rep.lambda_max <= bound + 1e-8, \
            f"lambda_max {rep.lambda_max:.4f} <= {bound}"

    return [
        ("factorization identity", factorization),
        ("split factor and adjoint", split_factor),
        ("gradient/prolongation switch", gradient_switch),
        ("multilevel nesting", multilevel_nesting),
        ("extreme eigenvalues vs dense", lanczos_vs_dense),
        ("circuit prolongation equality", circuit_prolongation),
        ("encoding composition laws", encoding_laws),
        ("inversion polynomial", polynomial),
        ("right-hand-side state", rhs_state),
        ("preconditioned spectrum bound", spectrum_bound),
    ]


def cmd_check(args) -> int:
    failures = 0
    for name, fn in _invariant_checks():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failures += not ok
    print(f"{failures} failure(s)" if failures else "all invariants hold")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="schwarzq",
        description="Domain-decomposition preconditioning benchmarks with an "
                    "emulated block-encoded QSVT solve",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_table = sub.add_parser("table", help="reproduce one of the benchmark tables")
    p_table.add_argument("which", type=int, choices=(1, 2, 3, 4))
    p_table4 = sub.add_parser("table4", help="alias of `table 4`")
    for p in (p_table, p_table4):
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="row-level parallelism (default SCHWARZQ_THREADS)")
        p.add_argument("--L", type=int, default=4)
        p.add_argument("--N1", type=int, default=None, help="unused; rows are fixed")
        p.add_argument("--delta", type=float, default=0.0625)
        p.add_argument("--runs", type=int, default=None)
        p.add_argument("--shots", type=int, default=None)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--seed", type=int, default=1234)
        p.set_defaults(func=cmd_table)
    p_table4.set_defaults(which=4)

    p_solve = sub.add_parser("solve", help="run a custom configuration")
    p_solve.add_argument("--config", default=None, help="JSON configuration file")
    p_solve.add_argument("--d", type=int, default=None)
    p_solve.add_argument("--L", type=int, default=None)
    p_solve.add_argument("--N", default=None, help="comma-separated subdomain counts")
    p_solve.add_argument("--delta", type=float, default=None)
    p_solve.add_argument("--precond", choices=("as1", "as2", "hyb"), default="as2")
    p_solve.add_argument("--local", choices=("exact", "bpx"), default="exact")
    p_solve.add_argument("--coarse", choices=("nodal", "pou", "off"), default="nodal")
    p_solve.add_argument("--tol", type=float, default=1e-8)
    p_solve.add_argument("--qsvt", action="store_true",
                         help="also run the sampled inner-product pipeline (1D)")
    p_solve.add_argument("--eps", type=float, default=1e-6)
    p_solve.add_argument("--runs", type=int, default=100)
    p_solve.add_argument("--shots", type=int, default=10**6)
    p_solve.add_argument("--seed", type=int, default=1234)
    p_solve.add_argument("--out", default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("check", help="run the invariant suite")
    p_check.set_defaults(func=cmd_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
