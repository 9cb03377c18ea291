"""Command line front end: ``roughflow <command> [flags]``.

Every command writes a CSV (17 significant digits, byte-stable for a fixed
config) and a JSON summary with keys command, config, metrics, verdicts,
version and wall_ms.  Exit status: 0 success, 2 invalid input, 3 numerical
failure (divergence, non-convergence, step-size or conditioning errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, RoughFlowError

COMMANDS = ("lift", "sew-convergence", "solve", "deriv-check", "taylor", "driver-flow",
            "gamma", "ibp-check")

DEFAULTS = {
    "driver": "smooth:sin", "hurst": 0.5, "grid_n": 1024, "seed": 0, "field": "scalar-linear",
    "x0": None, "tol": 1e-10, "out": None, "summary": None, "alpha": None,
}

COMMAND_DEFAULTS = {
    "lift": {"dim": None},
    "sew-convergence": {"levels": [4, 5, 6, 7, 8]},
    "solve": {"scheme": "picard", "study": False, "levels": None},
    "deriv-check": {"epsilons": [1e-1, 1e-2, 1e-3, 1e-4]},
    "taylor": {"family": "scaled-driver", "order": 2,
               "epsilons": [1e-1, 10 ** -1.5, 1e-2, 10 ** -2.5, 1e-3]},
    "driver-flow": {"n": 2, "grid_n": 256, "dt": 1e-2, "steps": 100, "scheme": "rk4",
                    "h_spec": "0:0,0;1:1,0.5"},
    "gamma": {},
    "ibp-check": {"driver": "fbm", "field": "sin-bounded", "grid_n": 256, "s": 0.1,
                  "n_samples": 10000, "observable": "first"},
}


# ------------------------------------------------------------------ config

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughflow", description="Controlled rough path numerics.")
    p.add_argument("--version", action="version", version=f"roughflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with config fields")
        sp.add_argument("--driver", help="smooth:<id> or fbm")
        sp.add_argument("--hurst", type=float)
        sp.add_argument("--alpha", type=float, help="Hoelder exponent of the rough path")
        sp.add_argument("--grid-n", dest="grid_n", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--field")
        sp.add_argument("--x0", type=lambda s: [float(v) for v in s.split(",")])
        sp.add_argument("--tol", type=float)
        sp.add_argument("--out", help="CSV output path")
        sp.add_argument("--summary", help="JSON summary path (default: next to --out)")
        floats = lambda s: [float(v) for v in s.split(",")]
        ints = lambda s: [int(v) for v in s.split(",")]
        if name == "lift":
            sp.add_argument("--dim", type=int)
        if name in ("sew-convergence", "solve"):
            sp.add_argument("--levels", type=ints)
        if name == "solve":
            sp.add_argument("--scheme", choices=["picard", "davie"])
            sp.add_argument("--study", action="store_true", default=None)
        if name in ("deriv-check", "taylor"):
            sp.add_argument("--epsilons", type=floats)
        if name == "taylor":
            sp.add_argument("--family", choices=["scaled-driver", "drift", "field-scaling"])
            sp.add_argument("--order", type=int)
        if name == "driver-flow":
            sp.add_argument("--n", type=int, help="sphere dimension")
            sp.add_argument("--dt", type=float)
            sp.add_argument("--steps", type=int)
            sp.add_argument("--scheme", choices=["euler", "rk4"])
            sp.add_argument("--h-spec", dest="h_spec",
                            help="piecewise-linear breakpoints 's:v1,v2;s:v1,v2'")
        if name == "ibp-check":
            sp.add_argument("--s", type=float)
            sp.add_argument("--n-samples", dest="n_samples", type=int)
            sp.add_argument("--observable", choices=["first", "sin-first"])
    return p


def build_config(argv) -> dict:
    args = _parser().parse_args(argv)
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[args.command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config file: {exc}") from None
        unknown = set(loaded) - set(cfg) - {"command"}
        if unknown:
            raise InputError(f"unknown config fields: {', '.join(sorted(unknown))}")
        cfg.update({k: v for k, v in loaded.items() if k != "command"})
    for k, v in vars(args).items():
        if k not in ("config", "command") and v is not None:
            cfg[k] = v
    cfg["command"] = args.command
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    n = cfg["grid_n"]
    if not isinstance(n, int) or n < 8 or n > 2 ** 14 or n & (n - 1):
        raise InputError("grid_n must be a power of two in [2^3, 2^14]")
    if not (1 / 3 < float(cfg["hurst"]) <= 1):
        raise InputError("hurst outside (1/3, 1]")
    if not float(cfg["tol"]) > 0:
        raise InputError("tol must be positive")
    seed = cfg["seed"]
    if not isinstance(seed, int) or not (0 <= seed < 2 ** 64):
        raise InputError("seed must be an unsigned 64-bit integer")
    drv = cfg["driver"]
    if not (drv == "fbm" or (isinstance(drv, str) and drv.startswith("smooth:"))):
        raise InputError(f"driver must be 'fbm' or 'smooth:<id>', got {drv!r}")
    if cfg["alpha"] is not None and not (1 / 3 < cfg["alpha"] <= 0.5):
        raise InputError("alpha outside (1/3, 1/2]")


# ----------------------------------------------------------------- helpers

def _fmt(v) -> str:
    from .roughpath import _fmt as f
    return f(v)


def _write_rows(path, header, rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _alpha(cfg) -> float:
    if cfg["alpha"] is not None:
        return float(cfg["alpha"])
    if cfg["driver"] == "fbm":
        return min(float(cfg["hurst"]), 0.5)
    return 0.5


def build_driver(cfg, dim: int | None):
    from . import registry
    from .roughpath import Grid, lift_piecewise_linear, sample_gaussian_driver
    grid = Grid.uniform(cfg["grid_n"])
    if cfg["driver"] == "fbm":
        samples = sample_gaussian_driver(float(cfg["hurst"]), dim or 2, grid, cfg["seed"])
    else:
        name = cfg["driver"].split(":", 1)[1]
        samples = registry.smooth_driver(name, grid.nodes)
        if dim is not None and samples.shape[1] != dim:
            raise InputError(f"driver {name!r} has dimension {samples.shape[1]} but {dim} is needed")
    return lift_piecewise_linear(samples, grid, _alpha(cfg))


def _x0(cfg, dim: int) -> np.ndarray:
    if cfg["x0"] is None:
        return np.ones(dim) / np.sqrt(dim)
    x0 = np.asarray(cfg["x0"], dtype=float)
    if x0.shape != (dim,):
        raise InputError(f"x0 must have {dim} components")
    return x0


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else str(v)
    return v


# ---------------------------------------------------------------- commands

def cmd_lift(cfg, out: Path):
    from .roughpath import (chen_defect, chen_defect_sampled, geometric_defect,
                            geometric_defect_sampled, holder_norm, write_csv)
    X = build_driver(cfg, cfg["dim"])
    small = X.n <= 1024
    chen = chen_defect(X) if small else chen_defect_sampled(X, seed=cfg["seed"])
    geo = geometric_defect(X) if small else geometric_defect_sampled(X, seed=cfg["seed"])
    write_csv(out, X)
    metrics = {"chen_defect": chen, "geometric_defect": geo, "audit": "full" if small else "sampled",
               "holder_norm_x": holder_norm(X.x, X.grid, X.alpha).norm, "alpha": X.alpha}
    return metrics, {"chen": chen <= 1e-12, "geometric": geo <= 1e-10}


def cmd_sew(cfg, out: Path):
    from .studies import young_germ_study
    res = young_germ_study(tuple(cfg["levels"]))
    res.write_csv(out)
    return ({"slope": res.slope, "r2": res.r2, "final_error": float(res.metrics[-1])},
            {"slope_1_pm_0.15": abs(res.slope - 1.0) <= 0.15})


def cmd_solve(cfg, out: Path):
    from . import rde, registry
    from .controlled import from_reference
    from .studies import davie_vs_picard_study
    F = registry.field(cfg["field"])
    X = build_driver(cfg, F.ncols)
    x0 = _x0(cfg, F.dim)
    if cfg["scheme"] == "picard":
        sol = rde.solve_picard(F, from_reference(X), x0, tol=float(cfg["tol"]))
    else:
        sol = rde.solve_davie(F, X, x0)
    xs = sol.values
    _write_rows(out, ["t"] + [f"x{a + 1}" for a in range(F.dim)],
                ([t] + list(row) for t, row in zip(X.grid.nodes, xs)))
    deriv_gap = float(np.max(np.abs(sol.x.zprime - F(xs))))
    metrics = {"endpoint": xs[-1], "derivative_identity_gap": deriv_gap,
               "scheme": cfg["scheme"]}
    verdicts = {"derivative_identity": deriv_gap <= 1e-8}
    if cfg["scheme"] == "picard":
        d = sol.diagnostics
        metrics.update(residual=d["residual"], patches=len(d["patches"]),
                       iterations=d["iterations"], contraction=d["contraction"])
        verdicts["fixed_point_residual"] = d["residual"] < float(cfg["tol"])
    if cfg["study"]:
        top = int(np.log2(X.n))
        levels = cfg["levels"] or list(range(top - 5, top))
        res = davie_vs_picard_study(F, X, x0, tuple(levels), tol=float(cfg["tol"]))
        res.write_csv(_sibling(out, "_study.csv"))
        target = 3 * X.alpha - 1 - 0.1
        metrics.update(study_slope=res.slope, study_r2=res.r2, study_target=target)
        verdicts["davie_order"] = res.slope >= target
    return metrics, verdicts


def cmd_deriv(cfg, out: Path):
    from . import rde, registry
    from .controlled import compose_smooth, from_reference
    from .oneform import random_sin_field
    from .studies import convergence_study
    F = registry.field(cfg["field"])
    X = build_driver(cfg, F.ncols)
    x0 = _x0(cfg, F.dim)
    tol = min(float(cfg["tol"]), 1e-12)
    y = from_reference(X)
    h = compose_smooth(np.sin, lambda z: np.einsum("ka,ab->kab", np.cos(z), np.eye(z.shape[1])), y)
    dF = random_sin_field(F.dim, F.ncols, cfg["seed"], 0.3)
    base = rde.solve_picard(F, y, x0, tol=tol).x
    v = rde.directional_derivative_y(F, y, x0, h, tol=tol)
    w = rde.directional_derivative_F(F, y, x0, dF, tol=tol)
    fam = rde.perturbed(F, dF)
    eps = np.asarray(cfg["epsilons"], dtype=float)
    rows, metrics, verdicts = [], {}, {}
    for label, solve, deriv in (
        ("y", lambda e: rde.solve_picard(F, y + h * e, x0, tol=tol).x, v),
        ("F", lambda e: rde.solve_picard(fam.at(e), y, x0, tol=tol).x, w),
    ):
        ratios = np.array([rde.full_norm(solve(e) - base - deriv * e) / e for e in eps])
        rows += [(label, e, r) for e, r in zip(eps, ratios)]
        res = convergence_study(eps, ratios)
        metrics[f"slope_{label}"] = res.slope
        metrics[f"r2_{label}"] = res.r2
        verdicts[f"fd_slope_{label}"] = res.slope >= 0.9
    _write_rows(out, ["direction", "epsilon", "remainder_ratio"], rows)
    return metrics, verdicts


def cmd_taylor(cfg, out: Path):
    import jax.numpy as jnp
    from . import rde, registry
    eps = tuple(cfg["epsilons"])
    order = int(cfg["order"])
    fam = cfg["family"]
    metrics, verdicts = {}, {}
    if fam == "scaled-driver":
        X = build_driver(cfg, 1)
        x0 = _x0(cfg, 1)
        res = rde.taylor_expand(lambda e, x: e * x[:, None], X, x0, order, epsilons=eps)
        g = X.x[:, 0] - X.x[0, 0]
        closed = [np.full_like(g, x0[0]), x0[0] * g, x0[0] * g ** 2 / 2][: order + 1]
    elif fam == "drift":
        X = build_driver(cfg, None)
        x0 = _x0(cfg, 1)
        ell = X.dim
        res = rde.taylor_expand(lambda e, x: 0.0 * x[:, None] * jnp.ones((1, ell)), X, x0, order,
                                drift=lambda e, x: jnp.ones((1, 1)) + 0.0 * x[:, None],
                                lam=X.grid.nodes, epsilons=eps)
        closed = [x0[0] + X.grid.nodes] + [np.zeros(X.n + 1)] * order
    else:
        F = registry.field(cfg["field"])
        X = build_driver(cfg, F.ncols)
        x0 = _x0(cfg, F.dim)
        f = F.fn
        res = rde.taylor_expand(lambda e, x: (1.0 + e) * f(x), X, x0, order, epsilons=eps)
        closed = None
    _write_rows(out, ["epsilon", "residual"], zip(res.epsilons, res.residuals))
    cols = ["t"] + [f"Z{k}_{a + 1}" for k in range(order + 1) for a in range(res.terms[0].vshape[0])]
    _write_rows(_sibling(out, "_terms.csv"), cols,
                ([t] + [v for k in range(order + 1) for v in res.terms[k].z[i]]
                 for i, t in enumerate(X.grid.nodes)))
    metrics["residual_slope"] = res.slope
    metrics["residuals"] = res.residuals
    positive = res.residuals > 0
    verdicts["residual_order"] = bool(res.slope >= order + 0.9) if positive.all() else bool(
        np.max(res.residuals) <= 1e-12)
    if closed is not None:
        errs = [float(np.max(np.abs(res.terms[k].z[:, 0] - closed[k]))) for k in range(order + 1)]
        metrics["closed_form_errors"] = errs
        verdicts["closed_form"] = max(errs) <= 1e-6
    return metrics, verdicts


def _parse_h(spec: str, nodes: np.ndarray, n: int) -> np.ndarray:
    try:
        pts = []
        for part in spec.split(";"):
            s, vals = part.split(":")
            pts.append((float(s), [float(v) for v in vals.split(",")]))
    except ValueError:
        raise InputError(f"cannot parse h-spec {spec!r}; expected 's:v1,v2;...'") from None
    pts.sort()
    if any(len(v) != n for _, v in pts):
        raise InputError(f"every h breakpoint needs {n} values")
    if pts[0][0] != 0.0 or any(v != 0 for v in pts[0][1]):
        raise InputError("h must start at 0: the first breakpoint has to be '0:" + ",".join(["0"] * n) + "'")
    s = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    return np.column_stack([np.interp(nodes, s, v[:, a]) for a in range(n)])


def cmd_driver_flow(cfg, out: Path):
    from .manifold import flow_integrate, sphere_brownian_path
    from .roughpath import Grid
    n = int(cfg["n"])
    if n < 1:
        raise InputError("sphere dimension n must be at least 1")
    d = n + 1
    grid = Grid.uniform(cfg["grid_n"])
    start = np.zeros(d)
    start[-1] = 1.0
    y0 = sphere_brownian_path(grid, cfg["seed"], start)
    h = _parse_h(cfg["h_spec"], grid.nodes, n)
    res = flow_integrate(y0, h, float(cfg["dt"]), int(cfg["steps"]), cfg["scheme"])
    rows = ([t, s] + list(p.z[i]) for t, p in zip(res.times, res.paths)
            for i, s in enumerate(grid.nodes))
    _write_rows(out, ["flow_time", "s"] + [f"y{a + 1}" for a in range(d)], rows)
    _write_rows(_sibling(out, "_diagnostics.csv"),
                ["flow_time", "max_constraint_violation", "frame_orthonormality_defect"],
                zip(res.times, res.constraint, res.frame_defect))
    fixed = all(np.array_equal(p.z[0], y0.z[0]) for p in res.paths)
    metrics = {"max_constraint_violation": float(res.constraint.max()),
               "max_frame_defect": float(res.frame_defect.max()), "start_fixed": fixed,
               "displacement": float(np.max(np.abs(res.paths[-1].z - y0.z)))}
    return metrics, {"sphere_constraint": metrics["max_constraint_violation"] <= 1e-6,
                     "frame_orthonormal": metrics["max_frame_defect"] <= 1e-6,
                     "start_fixed": fixed}


def cmd_gamma(cfg, out: Path):
    from . import registry
    from .malliavin import malliavin_covariance
    F = registry.field(cfg["field"])
    X = build_driver(cfg, F.ncols)
    cov = malliavin_covariance(F, X, _x0(cfg, F.dim))
    g = cov.gamma
    _write_rows(out, ["i", "j", "gamma"],
                ((i, j, float(g[i, j])) for i in range(g.shape[0]) for j in range(g.shape[1])))
    return ({"gamma": g, "symmetry_defect": cov.symmetry_defect, "min_eigenvalue": cov.min_eigenvalue},
            {"symmetric": cov.symmetry_defect <= 1e-12, "psd": cov.min_eigenvalue >= -1e-10})


def cmd_ibp(cfg, out: Path):
    from . import registry
    from .malliavin import ibp_reversibility_mc, write_mc_csv
    F = registry.field(cfg["field"])
    if F.ncols < 2:
        raise InputError(f"field {cfg['field']!r} has a one-dimensional driver; rotations need two")
    if cfg["driver"] != "fbm":
        raise InputError("ibp-check needs an isotropic random driver: use --driver fbm")
    obs = (lambda x: x[:, 0]) if cfg["observable"] == "first" else (lambda x: np.sin(x[:, 0]))
    rep = ibp_reversibility_mc(F, obs, obs, float(cfg["s"]), int(cfg["n_samples"]),
                               float(cfg["hurst"]), cfg["grid_n"], cfg["seed"],
                               x0=None if cfg["x0"] is None else _x0(cfg, F.dim))
    write_mc_csv(out, rep)
    metrics = rep.summary()
    return metrics, {"identity_3se": rep.consistent(), "exchangeable_3se": rep.exchangeable(),
                     "lhs_nonnegative": bool(np.all(rep.lhs_terms >= 0))}


HANDLERS = {
    "lift": cmd_lift, "sew-convergence": cmd_sew, "solve": cmd_solve, "deriv-check": cmd_deriv,
    "taylor": cmd_taylor, "driver-flow": cmd_driver_flow, "gamma": cmd_gamma, "ibp-check": cmd_ibp,
}


def run(cfg: dict) -> dict:
    """Execute a validated config; returns the JSON summary (also written to disk)."""
    t0 = time.perf_counter()
    out = Path(cfg["out"] or f"roughflow-{cfg['command']}.csv")
    metrics, verdicts = HANDLERS[cfg["command"]](cfg, out)
    summary = {
        "command": cfg["command"], "config": _jsonable(cfg), "metrics": _jsonable(metrics),
        "verdicts": _jsonable(verdicts), "version": __version__,
        "wall_ms": int(round(1000 * (time.perf_counter() - t0))),
    }
    path = Path(cfg["summary"]) if cfg["summary"] else out.with_suffix(".json")
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main(argv=None) -> int:
    from .errors import ScaleRangeError
    try:
        cfg = build_config(sys.argv[1:] if argv is None else argv)
        summary = run(cfg)
    except (InputError, ScaleRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RoughFlowError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
