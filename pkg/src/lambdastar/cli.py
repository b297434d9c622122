"""Command-line front end: branch tracing, probes, identity suites, reports.

Verbs: branch, lambda-star, probe, identities, system-curve, lemma-check.
Configuration comes from defaults, an optional config file (flat key=value
or JSON), and CLI flags, in increasing precedence; the effective config is
echoed into every output file.  Branch data is CSV, nested reports are JSON,
and the optional diagram is a self-contained SVG (no plotting dependency).

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import branch as br
from . import deflation as defl
from . import identities as ident
from . import system as syst
from .errors import RejectedInputError, ToolkitError
from .nonlinearities import (
    classify,
    default_grid_R,
    default_grid_S,
    find_k,
    find_mu_R,
    find_mu_S,
    from_spec,
    strict_convexity_check,
    supercritical_check,
    superlinearity_ratio,
    verify_antiderivative,
)
from .operators import RadialGrid

BRANCH_HEADER = "index,lambda,gamma,sigma,arclength,sup_u,sup_v,eta1,newton_iters,residual"


@dataclass
class RunConfig:
    problem: str = "q"          # q | navier | dirichlet | system
    nl: str = "exp"
    nl_g: str = ""              # system second nonlinearity; empty = same as nl
    dim: int = 2
    grid: int = 128
    lam: float = math.nan       # --lambda for probe/identities
    lambda_init: float = 0.1
    sigma: float = 1.0
    sigmas: str = "0.25,0.5,1.0,2.0,4.0"
    ds: float = math.nan
    steps: int = 200
    tol_newton: float = 1e-10
    tol_eig: float = 1e-8
    seed: int = 0
    k_starts: int = 20
    eps: float = 1.0
    mu: float = 0.5
    lemma_n: int = 3
    sigma_conv: float = 0.9
    c_sigma: float = math.nan
    t_max: float = 4.0
    output: str = ""
    format: str = "csv"
    plot: str = ""

    def as_dict(self):
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value):
    t = _FIELD_TYPES[key]
    if t == "int" or t is int:
        return int(value)
    if t == "float" or t is float:
        return float(value)
    return str(value)


def load_config_file(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    raw = {}
    stripped = text.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(text)
    else:
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise RejectedInputError(f"config line without '=': {line!r}")
            key, _, val = line.partition("=")
            raw[key.strip()] = val.strip()
    out = {}
    for key, val in raw.items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise RejectedInputError(f"unknown config key {key!r}")
        out[key] = _coerce(key, val)
    return out


def fmt(x) -> str:
    """17 significant digits: exact binary round-trip."""
    return format(float(x), ".17g")


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_json(cfg: RunConfig, payload: dict) -> None:
    doc = {"config": cfg.as_dict(), **payload}
    text = json.dumps(doc, indent=2, default=_json_default) + "\n"
    if cfg.output:
        atomic_write(cfg.output, text)
    else:
        sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _config_header(cfg: RunConfig) -> list:
    return [f"# {k}={v}" for k, v in sorted(cfg.as_dict().items())]


# ----------------------------------------------------------------------
# builders

def _mk_scalar_spec(cfg: RunConfig) -> br.ProblemSpec:
    order = {"q": "second", "navier": "navier", "dirichlet": "dirichlet"}[cfg.problem]
    return br.ProblemSpec(order, cfg.dim, from_spec(cfg.nl), RadialGrid(cfg.dim, cfg.grid))


def _mk_system_spec(cfg: RunConfig) -> syst.SystemSpec:
    nl_f = from_spec(cfg.nl)
    nl_g = from_spec(cfg.nl_g) if cfg.nl_g else from_spec(cfg.nl)
    return syst.SystemSpec(cfg.dim, nl_f, nl_g, RadialGrid(cfg.dim, cfg.grid))


def _branch_rows(cfg: RunConfig):
    """Row tuples for the branch CSV (strings, empties where not applicable)."""
    rows = []
    ds = None if math.isnan(cfg.ds) else cfg.ds
    if cfg.problem == "system":
        ray = syst.trace_ray(_mk_system_spec(cfg), cfg.sigma,
                             lambda_init=cfg.lambda_init, ds=ds,
                             n_steps=cfg.steps, tol=cfg.tol_newton)
        for i, p in enumerate(ray.points):
            rows.append((str(i), fmt(p.lam), fmt(p.gamma), fmt(cfg.sigma),
                         fmt(p.arclength), fmt(p.sup_u), fmt(p.sup_v), "",
                         str(p.newton_iters), fmt(p.residual)))
        fold = ray.fold.lambda_star if ray.fold else None
    else:
        spec = _mk_scalar_spec(cfg)
        b = br.continue_branch(spec, cfg.lambda_init, ds=ds,
                               n_steps=cfg.steps, tol=cfg.tol_newton)
        for i, p in enumerate(b.points):
            rows.append((str(i), fmt(p.lam), "", "", fmt(p.arclength),
                         fmt(p.sup_norm), "", fmt(p.eta1) if p.eta1 is not None else "",
                         str(p.newton_iters), fmt(p.residual)))
        fold = b.fold.lambda_star if b.fold else None
    return rows, fold


def _branch_svg(rows, fold, width=640, height=440):
    pts = [(float(r[1]), float(r[5])) for r in rows]
    if not pts:
        return "<svg xmlns='http://www.w3.org/2000/svg' width='10' height='10'/>"
    xs, ys = zip(*pts)
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0
    pad = 50

    def X(x):
        return pad + (x - x0) / dx * (width - 2 * pad)

    def Y(y):
        return height - pad - (y - y0) / dy * (height - 2 * pad)

    pl = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in pts)
    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
        f"<rect width='{width}' height='{height}' fill='white'/>",
        f"<line x1='{pad}' y1='{height-pad}' x2='{width-pad}' y2='{height-pad}' stroke='black'/>",
        f"<line x1='{pad}' y1='{pad}' x2='{pad}' y2='{height-pad}' stroke='black'/>",
        f"<text x='{width//2}' y='{height-12}' font-size='13'>lambda</text>",
        f"<text x='12' y='{height//2}' font-size='13' transform='rotate(-90 12 {height//2})'>sup u</text>",
        f"<polyline points='{pl}' fill='none' stroke='steelblue' stroke-width='1.5'/>",
    ]
    if fold is not None:
        yf = max((y for x, y in pts if abs(x - fold) < 0.05 * dx), default=y1)
        parts.append(f"<circle cx='{X(fold):.2f}' cy='{Y(yf):.2f}' r='5' "
                     f"fill='none' stroke='crimson' stroke-width='2'/>")
        parts.append(f"<text x='{X(fold)+8:.2f}' y='{Y(yf)-8:.2f}' font-size='12' "
                     f"fill='crimson'>fold</text>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----------------------------------------------------------------------
# commands

def cmd_branch(cfg: RunConfig) -> int:
    if not cfg.output:
        raise RejectedInputError("branch needs --output")
    header = _config_header(cfg)
    if cfg.steps == 0:
        rows, fold = [], None
    else:
        rows, fold = _branch_rows(cfg)
    lines = list(header)
    if fold is not None:
        lines.append(f"# fold_lambda={fmt(fold)}")
    lines.append(BRANCH_HEADER)
    lines.extend(",".join(r) for r in rows)
    if cfg.format == "json":
        cols = BRANCH_HEADER.split(",")
        emit_json(cfg, {"fold_lambda": fold,
                        "points": [dict(zip(cols, r)) for r in rows]})
    else:
        atomic_write(cfg.output, "\n".join(lines) + "\n")
    if cfg.plot:
        atomic_write(cfg.plot, _branch_svg(rows, fold))
    return 0


def read_branch_csv(path: str):
    """Read back a branch CSV; returns (comment_lines, header, rows)."""
    comments, rows = [], []
    header = None
    with open(path) as fh:
        for line in fh.read().splitlines():
            if line.startswith("#"):
                comments.append(line)
            elif header is None:
                header = line
            elif line:
                rows.append(line.split(","))
    return comments, header, rows


def write_branch_csv(path: str, comments, header, rows) -> None:
    lines = list(comments) + [header] + [",".join(r) for r in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def cmd_lambda_star(cfg: RunConfig) -> int:
    ds = None if math.isnan(cfg.ds) else cfg.ds
    if cfg.problem == "system":
        spec = _mk_system_spec(cfg)
        ray = syst.trace_ray(spec, cfg.sigma, lambda_init=cfg.lambda_init,
                             ds=ds, n_steps=cfg.steps)
        if ray.fold is None:
            raise ToolkitError("no fold found on the ray")
        lam_c = ray.fold.lambda_star

        def solvable(lam):
            return isinstance(syst.system_minimal(spec, lam, cfg.sigma * lam,
                                                  max_iters=4000, tol=1e-9),
                              syst.SystemPoint)

        lo, hi = cfg.lambda_init, lam_c * 1.5
        while (hi - lo) > 1e-3 * hi:
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if solvable(mid) else (lo, mid)
        lam_b = 0.5 * (lo + hi)
        payload = {"lambda_star": lam_c, "gamma_star": cfg.sigma * lam_c,
                   "sigma": cfg.sigma, "bisection": lam_b,
                   "relative_gap": abs(lam_c - lam_b) / lam_c}
    else:
        spec = _mk_scalar_spec(cfg)
        est = br.estimate_lambda_star(spec, cfg.lambda_init, n_steps=cfg.steps, ds=ds)
        payload = {"lambda_star": est["continuation"], **est}
    emit_json(cfg, payload)
    return 0


def cmd_probe(cfg: RunConfig) -> int:
    if math.isnan(cfg.lam):
        raise RejectedInputError("probe needs --lambda")
    if cfg.problem == "system":
        spec = _mk_system_spec(cfg)
        found = defl.deflated_search(spec, cfg.lam, gamma=cfg.sigma * cfg.lam,
                                     K=cfg.k_starts, seed=cfg.seed)
    else:
        spec = _mk_scalar_spec(cfg)
        found = defl.deflated_search(spec, cfg.lam, K=cfg.k_starts, seed=cfg.seed)
    payload = {
        "parameters": found.parameters,
        "count": found.count,
        "note": found.phrase(),
        "solutions": [{"sup_norm": r.sup_norm, "center": r.center,
                       "eta1": r.eta1, "residual": r.residual,
                       "weak_max": r.weak_max} for r in found.solutions],
        "starts": found.starts,
        "seed": found.seed,
        "diagnostics": found.diagnostics,
    }
    emit_json(cfg, payload)
    return 0


def cmd_identities(cfg: RunConfig) -> int:
    ds = None if math.isnan(cfg.ds) else cfg.ds
    reports = []

    def add(kind, obj):
        d = dataclasses.asdict(obj)
        d["kind"] = kind
        reports.append(d)

    if cfg.problem == "system":
        spec = _mk_system_spec(cfg)
        ray = syst.trace_ray(spec, cfg.sigma, lambda_init=cfg.lambda_init,
                             ds=ds, n_steps=cfg.steps)
        if ray.fold is None:
            raise ToolkitError("no fold found; cannot build a solution pair")
        pair = None
        for frac in (0.7, 0.8, 0.6, 0.5):
            pair = syst.solution_pair(spec, cfg.sigma, frac * ray.fold.lambda_star, ray)
            if pair:
                break
        if pair is None:
            raise ToolkitError("no minimal/second pair could be computed")
        minimal, second = pair
        for rep in ident.system_energy(spec, second, minimal):
            add("identity", rep)
        add("energy_bound", ident.extremal_energy_bound(spec, ray))
        add("scan", ident.nine_scan(C=2.0 * cfg.dim, lam=minimal.lam, sigma=cfg.sigma))
        reports.append({"kind": "threshold", "name": "exp_domination",
                        "value": ident.cal_threshold()})
    else:
        spec = _mk_scalar_spec(cfg)
        b = br.continue_branch(spec, cfg.lambda_init, ds=ds, n_steps=cfg.steps,
                               compute_eta=False)
        if b.fold is None:
            raise ToolkitError("no fold found; cannot build a solution pair")
        lam_t = 0.8 * b.fold.lambda_star
        post = b.points[b.fold.index:]
        seed_pt = min(post, key=lambda p: abs(p.lam - lam_t))
        second = br.newton_solve(spec, seed_pt.lam, seed_pt.u, compute_eta=False)
        minimal = br.minimal_solution(spec, seed_pt.lam, compute_eta=False)
        if spec.fourth_order:
            for rep in ident.pohozaev_fourth(spec, second, minimal):
                add("identity", rep)
            small = br.minimal_solution(spec, b.fold.lambda_star / 100.0,
                                        compute_eta=False)
            c_sigma = None if math.isnan(cfg.c_sigma) else cfg.c_sigma
            scan = ident.T_scan(spec, small.lam, small, cfg.sigma_conv,
                                C_sigma=c_sigma, t_range=(0.0, cfg.t_max))
            add("scan", scan.t_report)
            add("scan", scan.s_report)
            reports.append({"kind": "domination", "name": "T_minus_S",
                            "value": scan.domination_min})
        wr = br.weak_residual(spec, minimal)
        reports.append({"kind": "weak_residual", "name": "minimal_point",
                        "values": list(map(float, wr))})
    emit_json(cfg, {"reports": reports})
    return 0


def cmd_system_curve(cfg: RunConfig) -> int:
    if not cfg.output:
        raise RejectedInputError("system-curve needs --output")
    spec = _mk_system_spec(cfg)
    try:
        sigma_list = [float(s) for s in cfg.sigmas.split(",") if s.strip()]
    except ValueError as exc:
        raise RejectedInputError(f"bad sigma list {cfg.sigmas!r}: {exc}") from None
    ds = None if math.isnan(cfg.ds) else cfg.ds
    curve = syst.upsilon_curve(spec, sigma_list, lambda_init=cfg.lambda_init,
                               ds=ds, n_steps=cfg.steps)
    lines = _config_header(cfg)
    for d in curve.diagnostics:
        lines.append(f"# diagnostic: {d}")
    lines.append("sigma,lambda_star,gamma_star")
    for s, l in zip(curve.sigmas, curve.lambda_stars):
        g = s * l
        lines.append(f"{fmt(s)},{fmt(l)},{fmt(g)}")
    atomic_write(cfg.output, "\n".join(lines) + "\n")
    if cfg.plot:
        rows = [(None, fmt(l), None, None, None, fmt(s * l)) for s, l in
                zip(curve.sigmas, curve.lambda_stars) if math.isfinite(l)]
        atomic_write(cfg.plot, _branch_svg(rows, None))
    return 0


def cmd_lemma_check(cfg: RunConfig) -> int:
    nl = from_spec(cfg.nl)
    grid = default_grid_S() if nl.domain_sup == 1.0 else default_grid_R()
    checks = {}
    checks["classification"] = classify(nl, grid)
    checks["antiderivative_max_rel_err"] = verify_antiderivative(nl)
    t_ref = 0.5 if nl.domain_sup == 1.0 else 1.0
    checks["superlinearity_ratio_at_reference"] = {
        "t": t_ref, "value": float(superlinearity_ratio(nl, t_ref))}
    checks["strictly_convex"] = strict_convexity_check(
        nl, grid[grid > 0][:512] if nl.domain_sup == 1.0 else np.linspace(0, 50, 512))
    if nl.class_tag == "R" and nl.log_convex:
        mu = find_mu_R(nl, cfg.eps)
        checks["mu"] = {"eps": cfg.eps, "value": mu}
        checks["k"] = {"mu": cfg.mu, "N": cfg.lemma_n,
                       "value": find_k(nl, cfg.mu, cfg.lemma_n)}
    elif nl.class_tag == "S":
        checks["mu"] = {"eps": cfg.eps, "value": find_mu_S(nl, cfg.eps)}
    if nl.class_tag == "R" and cfg.dim >= 5:
        res = supercritical_check(nl, cfg.dim, np.geomspace(1e3, 1e5, 64))
        checks["supercritical"] = {"N": cfg.dim, "threshold": res.threshold,
                                   "ok": res.ok, "margin": res.margin}
    emit_json(cfg, {"nonlinearity": nl.name, "checks": checks})
    return 0


COMMANDS = {
    "branch": cmd_branch,
    "lambda-star": cmd_lambda_star,
    "probe": cmd_probe,
    "identities": cmd_identities,
    "system-curve": cmd_system_curve,
    "lemma-check": cmd_lemma_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lambdastar",
        description="Branch continuation and verification for parametrized "
                    "semilinear problems on the unit ball.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="config file (key=value lines or JSON)")
        sp.add_argument("--problem", choices=["q", "navier", "dirichlet", "system"])
        sp.add_argument("--nl", help='nonlinearity: "exp", "power:p=..", "mems:p=.."')
        sp.add_argument("--nl-g", dest="nl_g", help="second nonlinearity (system)")
        sp.add_argument("--dim", type=int)
        sp.add_argument("--grid", type=int, help="interior node count M")
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--lambda-init", dest="lambda_init", type=float)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--sigmas", help="comma list for system-curve")
        sp.add_argument("--ds", type=float)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--tol-newton", dest="tol_newton", type=float)
        sp.add_argument("--tol-eig", dest="tol_eig", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--k", dest="k_starts", type=int, help="deflated starts")
        sp.add_argument("--eps", type=float)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--lemma-n", dest="lemma_n", type=int)
        sp.add_argument("--sigma-conv", dest="sigma_conv", type=float)
        sp.add_argument("--c-sigma", dest="c_sigma", type=float)
        sp.add_argument("--t-max", dest="t_max", type=float)
        sp.add_argument("--output", "-o")
        sp.add_argument("--format", choices=["csv", "json"])
        sp.add_argument("--plot")
    return p


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        for key, val in load_config_file(args.config).items():
            setattr(cfg, key, val)
    for key in _FIELD_TYPES:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except RejectedInputError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
