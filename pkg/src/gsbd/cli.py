"""Command-line interface.

Subcommands: ``solve`` (one staggered minimization), ``sweep`` (Gamma
sweep over a schedule), ``densify`` (approximation-pipeline sweeps),
``check`` (invariant suites), ``alpha`` (print the surface calibration).
Configuration is line-oriented ``key = value``; ``--set key=value`` flags
override config entries.  Exit codes: 0 success, 1 usage error, 2 input
parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io as gio
from .energies import Schedule, alpha_constant, make_model
from .errors import GsbdError, ParseError, VersionMismatch
from .grids import Grid, ScalarField
from .harness import (
    DENSIFY_COLUMNS,
    ROUGH_COLUMNS,
    SWEEP_COLUMNS,
    SweepSpec,
    densify_sweep,
    gamma_sweep,
    rough_sweep,
    run_checks,
    write_csv,
)
from .problems import PROBLEM_BUILDERS, slit_facets, tapered_slit_field
from .solver import alternate_minimize

USAGE_ERROR = 1
PARSE_ERROR = 2
NUMERICAL_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        cfg.update(gio.parse_config(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ParseError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def _model_from_config(cfg: dict):
    kwargs = {}
    if "p" in cfg:
        kwargs["p"] = float(cfg["p"])
    if "q" in cfg:
        kwargs["q"] = float(cfg["q"])
    if "a" in cfg:
        kwargs["a"] = float(cfg["a"])
    if "degradation" in cfg:
        kwargs["degradation"] = cfg["degradation"]
    if "psi_r" in cfg:
        kwargs["psi_r"] = float(cfg["psi_r"])
    if "lame_lambda" in cfg or "lame_mu" in cfg:
        kwargs["lame"] = (float(cfg.get("lame_lambda", 0.0)),
                          float(cfg.get("lame_mu", 0.5)))
    return make_model(**kwargs)


def _floats(text: str):
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_alpha(args) -> int:
    cfg = _load_config(args)
    model = _model_from_config(cfg)
    print(format(alpha_constant(model), ".12g"))
    return 0


def cmd_check(args) -> int:
    suites = tuple(args.suite) if args.suite else ("grid", "crack", "korn")
    results = run_checks(suites)
    failed = 0
    for r in results:
        tag = "pass" if r.passed else "FAIL"
        detail = f"  ({r.detail})" if r.detail else ""
        print(f"[{tag}] {r.suite}/{r.name}{detail}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return NUMERICAL_ERROR
    print(f"all {len(results)} checks passed")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    problem_id = cfg.get("problem", "1d-bar")
    if problem_id not in PROBLEM_BUILDERS:
        raise ParseError(f"unknown problem {problem_id!r}")
    model = _model_from_config(cfg)
    load = float(cfg.get("U", 1.0))
    eps = float(cfg.get("eps", 1.0 / 32))
    eta = float(cfg["eta"]) if "eta" in cfg else eps**2
    cells = int(cfg.get("cells_per_eps", 8))
    mp = PROBLEM_BUILDERS[problem_id](load, eps, eta, model=model, cells_per_eps=cells)
    candidates = [alternate_minimize(mp.problem)]
    if cfg.get("two_start", "1") not in ("0", "false", "no"):
        candidates.append(alternate_minimize(mp.seeded()))
    best = min(candidates, key=lambda r: r.trace.last.total)
    rows = [
        {
            "outer": row.outer,
            "bulk": row.bulk,
            "regularization": row.regularization,
            "extra": row.extra,
            "total": row.total,
            "min_v": row.min_v,
            "max_u": row.max_u,
            "inner_iterations": row.inner_iterations,
        }
        for row in best.trace.rows
    ]
    out = cfg.get("out", "solve_trace.csv")
    write_csv(out, ["outer", "bulk", "regularization", "extra", "total", "min_v",
                    "max_u", "inner_iterations"], rows)
    last = best.trace.last
    print(f"converged total={last.total:.8g} (reference {mp.reference:.8g}, "
          f"{mp.reference_kind}) min_v={last.min_v:.4g} rows -> {out}")
    heatmap = cfg.get("heatmap", "")
    if heatmap and best.v.grid.dim == 2:
        gio.save_ppm(heatmap, best.v)
        print(f"phase heatmap -> {heatmap}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    problem_id = cfg.get("problem", "1d-bar")
    if problem_id not in PROBLEM_BUILDERS:
        raise ParseError(f"unknown problem {problem_id!r}")
    model = _model_from_config(cfg)
    schedule = Schedule(tuple(gio.parse_schedule(cfg.get("schedule", "0.125,0.0625,0.03125"))))
    schedule.validate_ratios(model.p)
    spec = SweepSpec(
        problem=problem_id,
        load=float(cfg.get("U", 1.0)),
        schedule=schedule,
        model=model,
        cells_per_eps=int(cfg.get("cells_per_eps", 8)),
        two_start=cfg.get("two_start", "1") not in ("0", "false", "no"),
    )
    rows = gamma_sweep(spec)
    out = cfg.get("out", "sweep.csv")
    write_csv(out, SWEEP_COLUMNS, rows)
    print(f"{len(rows)} rows -> {out}")
    return 0


def _densify_inputs(cfg):
    cells = int(cfg.get("cells", 384))
    grid = Grid(np.zeros(2), 1.0 / cells, (cells, cells))
    if "field" in cfg and cfg["field"] != "builtin:slit":
        u = gio.load_field(cfg["field"])
        grid = u.grid
    else:
        u = tapered_slit_field(
            grid,
            x_lo=float(cfg.get("slit_lo", 0.05)),
            x_hi=float(cfg.get("slit_hi", 0.95)),
            amplitude=float(cfg.get("slit_amplitude", 0.05)),
            background=float(cfg.get("slit_background", 0.3)),
            ramp=float(cfg.get("slit_ramp", 0.3)),
        )
    if "crack" in cfg:
        facets = gio.load_crack(cfg["crack"], grid=grid)
    else:
        facets = slit_facets(
            grid,
            x_lo=float(cfg.get("slit_lo", 0.05)),
            x_hi=float(cfg.get("slit_hi", 0.95)),
            amplitude=float(cfg.get("slit_amplitude", 0.05)),
        )
    return u, facets


def cmd_densify(args) -> int:
    cfg = _load_config(args)
    mode = cfg.get("mode", "full")
    thetas = _floats(cfg.get("theta_list", "0.1"))
    ks = _floats(cfg.get("k_list", "96"))
    u, facets = _densify_inputs(cfg)
    out = cfg.get("out", "densify.csv")
    if mode == "rough":
        from .grids import pad_field

        def padded(k):
            margin = int(np.ceil(12 * np.sqrt(2) / k / u.grid.spacing)) + 1
            return pad_field(u, margin, mode=cfg.get("halo", "reflect"))

        rows = rough_sweep(padded, facets, thetas, ks, domain=u.grid.domain())
        write_csv(out, ROUGH_COLUMNS, rows)
    elif mode == "full":
        eps_list = _floats(cfg.get("eps_list", "0.1"))
        rows = densify_sweep(u, facets, eps_list, thetas, ks)
        write_csv(out, DENSIFY_COLUMNS, rows)
    else:
        raise ParseError(f"unknown densify mode {mode!r}")
    print(f"{len(rows)} rows -> {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="gsbd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", cmd_solve),
        ("sweep", cmd_sweep),
        ("densify", cmd_densify),
        ("check", cmd_check),
        ("alpha", cmd_alpha),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="override a configuration key (repeatable)",
        )
        if name == "check":
            p.add_argument(
                "--suite", action="append", choices=("grid", "crack", "korn"),
                help="run only the named suite (repeatable)",
            )
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ParseError, VersionMismatch, FileNotFoundError) as exc:
        print(f"gsbd: input error: {exc}", file=sys.stderr)
        return PARSE_ERROR
    except GsbdError as exc:
        print(f"gsbd: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
