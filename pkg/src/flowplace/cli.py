"""Command-line front end.

Each subcommand reads one JSON config, runs the corresponding pipeline
stage, and writes its artifacts into the output directory under fixed
names.  Reports are CSV/JSON plus a rendered PNG; everything is
deterministic for a fixed config and seed.

Exit codes: 0 success, 2 input or config problem, 3 mathematically
infeasible request (divergent horizon, unreachable target).
"""

import argparse
import json
import sys

import numpy as np

from . import plots
from .control import MULTIPLICATION, min_energy_control, simulate_forward
from .errors import (
    ConfigError,
    DivergentHorizonError,
    FlowplaceError,
    SingularGramianError,
    UnreachableTargetError,
)
from .field import (
    CLAMP_TO_BOUNDARY,
    Domain,
    FlowConfig,
    analytic_field,
    load_snapshots,
    mean_field,
)
from .gramian import (
    controllability_gramian,
    infinite_controllability_gramian,
    infinite_observability_gramian,
    l2_norm,
    observability_gramian,
    residence_time,
    stability_certificate,
    support_measure,
)
from .partition import (
    ScalarField,
    build_partition,
    cellset_from_spec,
    read_field_csv,
    write_field_csv,
)
from .placement import (
    ACTUATOR,
    SENSOR,
    CandidateSpec,
    enumerate_candidates,
    rank_placements,
    score_candidate,
)
from .transfer import (
    MONTE_CARLO,
    build_operator,
    evolve,
    load_operator,
    save_operator,
)

_BOUNDARIES = (CLAMP_TO_BOUNDARY, "absorb-outside")


def _fail(msg):
    raise ConfigError(msg)


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    except FileNotFoundError:
        _fail(f"cannot open {path}")
    except OSError as exc:
        _fail(f"cannot open {path}: {exc}")
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        _fail(f"{path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        _fail(f"{path} must hold a JSON object")
    return cfg


def _domain_from_config(cfg):
    dom = cfg.get("domain")
    if dom is None:
        return None
    if not (isinstance(dom, (list, tuple)) and len(dom) == 4):
        _fail("domain must be [xmin, ymin, xmax, ymax]")
    return Domain(*(float(v) for v in dom))


def _field_from_config(cfg):
    block = cfg.get("field")
    if not isinstance(block, dict):
        _fail("config needs a 'field' object (analytic or snapshots)")
    boundary = cfg.get("boundary", CLAMP_TO_BOUNDARY)
    if boundary not in _BOUNDARIES:
        _fail(f"boundary must be one of {_BOUNDARIES}, got {boundary!r}")
    if "analytic" in block:
        dom = _domain_from_config(cfg)
        if dom is None:
            _fail("analytic fields need a 'domain' entry")
        nx = int(block.get("nx", 33))
        ny = int(block.get("ny", 33))
        return analytic_field(block["analytic"], dom, nx, ny, boundary_policy=boundary)
    if "snapshots" in block:
        paths = block["snapshots"]
        if not isinstance(paths, list) or not paths:
            _fail("'snapshots' must be a non-empty list of CSV paths")
        try:
            snaps = load_snapshots(paths, boundary_policy=boundary)
        except FileNotFoundError as exc:
            _fail(f"cannot open {exc.filename}")
        field = mean_field(snaps)
        dom = _domain_from_config(cfg)
        if dom is not None and dom != field.domain:
            _fail(
                "configured domain does not match the snapshot grid "
                f"({dom} vs {field.domain})"
            )
        return field
    _fail("field object needs 'analytic' or 'snapshots'")


def _partition_from_config(cfg, domain):
    dims = cfg.get("partition")
    if not (isinstance(dims, (list, tuple)) and len(dims) == 2):
        _fail("config needs 'partition': [px, py]")
    return build_partition(domain, int(dims[0]), int(dims[1]))


def _seed(cfg, args):
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _operator_from_config(cfg, args):
    path = cfg.get("operator")
    if path is not None:
        try:
            op = load_operator(path)
        except FileNotFoundError:
            _fail(f"cannot open {path}")
        dims = cfg.get("partition")
        if dims is not None and (op.partition.px, op.partition.py) != tuple(dims):
            _fail(
                f"operator file has a {op.partition.px}x{op.partition.py} "
                f"partition but config says {dims[0]}x{dims[1]}"
            )
        if "dt" in cfg and float(cfg["dt"]) != op.dt:
            _fail(f"operator file has dt={op.dt} but config says dt={cfg['dt']}")
        return op
    return _build_from_config(cfg, args)


def _build_from_config(cfg, args):
    field = _field_from_config(cfg)
    partition = _partition_from_config(cfg, field.domain)
    if "dt" not in cfg:
        _fail("config needs 'dt' to build an operator")
    dt = float(cfg["dt"])
    flow_cfg = None
    if "dt_integrate" in cfg or "integrator" in cfg:
        flow_cfg = FlowConfig(
            float(cfg.get("dt_integrate", dt / 10.0)),
            cfg.get("integrator", "rk4"),
        )
    return build_operator(
        field,
        partition,
        dt,
        samples_per_cell=int(cfg.get("samples_per_cell", 100)),
        seed=_seed(cfg, args),
        cfg=flow_cfg,
        sampling=cfg.get("sampling", MONTE_CARLO),
    )


def _steps_from_config(cfg, dt):
    has_k = "K" in cfg
    has_tau = "tau" in cfg
    if has_k == has_tau:
        _fail("config needs exactly one of 'K' or 'tau'")
    if has_k:
        k = cfg["K"]
        if not isinstance(k, int) or k < 0:
            _fail(f"K must be a nonnegative integer, got {k!r}")
        return k
    tau = float(cfg["tau"])
    if tau < 0:
        _fail(f"tau must be >= 0, got {tau}")
    return int(round(tau / dt))


def _named_set(cfg, partition, name):
    sets = cfg.get("sets", {})
    if name not in sets:
        _fail(f"config defines no set named {name!r}")
    return cellset_from_spec(partition, sets[name])


def _density_from_spec(spec, partition, cfg, op=None, rho0=None, steps=None):
    if not isinstance(spec, dict) or len(spec) != 1:
        _fail(f"density spec must be a one-key object, got {spec!r}")
    ((kind, val),) = spec.items()
    if kind == "uniform":
        return ScalarField(partition, np.full(partition.n_cells, float(val)))
    if kind == "indicator":
        cells = _named_set(cfg, partition, val)
        out = np.zeros(partition.n_cells)
        out[cells.indices] = 1.0
        return ScalarField(partition, out)
    if kind == "complement-indicator":
        cells = _named_set(cfg, partition, val)
        out = np.ones(partition.n_cells)
        out[cells.indices] = 0.0
        return ScalarField(partition, out)
    if kind == "csv":
        try:
            return read_field_csv(partition, val)
        except FileNotFoundError:
            _fail(f"cannot open {val}")
    if kind == "free-evolution":
        if op is None or rho0 is None or steps is None:
            _fail("'free-evolution' is only valid for a control target")
        return evolve(op, rho0, steps, "pf")
    _fail(f"unknown density spec kind {kind!r}")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def _out(args, name):
    return f"{args.out}/{name}"


def cmd_build(args):
    cfg = _load_config(args.config)
    op = _build_from_config(cfg, args)
    save_operator(op, _out(args, "operator.txt"))
    row_sums = np.asarray(op.matrix.sum(axis=1)).ravel()
    summary = {
        "n_cells": op.n_cells,
        "dt": op.dt,
        "nnz": int(op.matrix.nnz),
        "seed": op.seed,
        "sampling": op.sampling,
        "samples_per_cell": op.samples_per_cell,
        "leak": {
            "min": float(op.leak.min()),
            "max": float(op.leak.max()),
            "mean": float(op.leak.mean()),
        },
        "row_sum_max_deviation": float(np.abs(row_sums + op.leak - 1.0).max()),
    }
    _write_json(_out(args, "build_summary.json"), summary)
    print(f"operator: {op.n_cells} cells, nnz={summary['nnz']}, "
          f"max leak={summary['leak']['max']:.4f}")
    return 0


def cmd_gramian(args):
    cfg = _load_config(args.config)
    op = _operator_from_config(cfg, args)
    block = cfg.get("gramian")
    if not isinstance(block, dict):
        _fail("config needs a 'gramian' object")
    kind = block.get("kind", "controllability")
    if kind not in ("controllability", "observability"):
        _fail(f"gramian kind must be controllability or observability, got {kind!r}")
    if "source" not in block:
        _fail("gramian config needs 'source': a set name")
    source = _named_set(cfg, op.partition, block["source"])
    horizon = block.get("horizon", "finite")

    if horizon == "finite":
        k = _steps_from_config(cfg, op.dt)
        quad = block.get("quadrature", "left")
        if kind == "controllability":
            g = controllability_gramian(op, source, k, quadrature=quad)
        else:
            g = observability_gramian(op, source, k, quadrature=quad)
    elif horizon == "infinite":
        tol = float(block.get("tol", 1e-8))
        max_steps = int(block.get("max_steps", 100000))
        method = block.get("method", "sum")
        if kind == "controllability":
            g = infinite_controllability_gramian(op, source, tol, max_steps, method)
        else:
            g = infinite_observability_gramian(op, source, tol, max_steps, method)
    else:
        _fail(f"horizon must be finite or infinite, got {horizon!r}")

    eps = block.get("support_eps")
    sidecar = {
        "kind": g.kind,
        "dt": g.dt,
        "horizon_steps": g.horizon_steps,
        "source": cfg["sets"][block["source"]],
        "support_measure": support_measure(g, eps),
        "l2_norm": l2_norm(g),
        "residual": g.residual,
    }
    if "residence_set" in block:
        probe = _named_set(cfg, op.partition, block["residence_set"])
        sidecar["residence_time"] = residence_time(g, probe)
    write_field_csv(g.field, _out(args, "gramian.csv"))
    _write_json(_out(args, "gramian.json"), sidecar)
    plots.save_heatmap(
        g.field,
        _out(args, "gramian.png"),
        title=f"{g.kind} occupation field",
        mark=source,
    )
    print(f"{g.kind} gramian: support={sidecar['support_measure']:.6g}, "
          f"norm={sidecar['l2_norm']:.6g}")
    return 0


def cmd_place(args):
    cfg = _load_config(args.config)
    op = _operator_from_config(cfg, args)
    block = cfg.get("place")
    if not isinstance(block, dict):
        _fail("config needs a 'place' object")
    mode = block.get("mode", ACTUATOR)
    if mode not in (ACTUATOR, SENSOR):
        _fail(f"place mode must be actuator or sensor, got {mode!r}")
    k = _steps_from_config(cfg, op.dt)

    patch = block.get("patch")
    explicit = [
        _named_set(cfg, op.partition, name) for name in block.get("candidates", [])
    ]
    if patch is None and not explicit:
        _fail("place config needs 'patch': [w, h] and/or 'candidates': [names]")
    spec = CandidateSpec(
        patch_w=None if patch is None else int(patch[0]),
        patch_h=None if patch is None else int(patch[1]),
        stride=int(block.get("stride", 1)),
        explicit_sets=tuple(explicit),
    )
    eps = block.get("eps")
    scores = [
        score_candidate(op, cand, k, mode=mode, eps=eps)
        for cand in enumerate_candidates(op.partition, spec)
    ]
    ranked = rank_placements(
        scores,
        support_tie_tol=float(block.get("support_tie_tol", 0.02)),
        norm_direction=block.get("norm_direction", "max"),
    )
    report = {
        "mode": mode,
        "K": k,
        "dt": op.dt,
        "results": [
            {
                "rank": s.rank,
                "support": s.support,
                "norm": s.norm,
                "cells": [int(i) for i in s.candidate.indices],
            }
            for s in ranked
        ],
    }
    _write_json(_out(args, "placement.json"), report)
    best = ranked[0]
    if mode == ACTUATOR:
        background = controllability_gramian(op, best.candidate, k).field
    else:
        background = observability_gramian(op, best.candidate, k).field
    plots.save_placement_map(
        ranked,
        _out(args, "placement.png"),
        background=background,
        title=f"{mode} candidates (best occupation field shaded)",
    )
    print(f"ranked {len(ranked)} candidates; best support={best.support:.6g}, "
          f"norm={best.norm:.6g}")
    return 0


def cmd_control(args):
    cfg = _load_config(args.config)
    op = _operator_from_config(cfg, args)
    block = cfg.get("control")
    if not isinstance(block, dict):
        _fail("config needs a 'control' object")
    if "B" not in block:
        _fail("control config needs 'B': a set name")
    actuation = _named_set(cfg, op.partition, block["B"])
    k = _steps_from_config(cfg, op.dt)
    if "rho0" not in block or "target" not in block:
        _fail("control config needs 'rho0' and 'target' density specs")
    rho0 = _density_from_spec(block["rho0"], op.partition, cfg)
    target = _density_from_spec(
        block["target"], op.partition, cfg, op=op, rho0=rho0, steps=k
    )
    result = min_energy_control(
        op,
        rho0,
        target,
        actuation,
        k,
        method=block.get("method", MULTIPLICATION),
    )
    sched = result.schedule
    _write_json(
        _out(args, "schedule.json"),
        {"B": {"cells": [int(i) for i in actuation.indices]}, "dt": op.dt, "K": k},
    )
    with open(_out(args, "schedule.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,cell,value\n")
        for step in range(sched.steps):
            for cell in actuation.indices:
                fh.write(f"{step},{cell},{float(sched.u[step, cell])!r}\n")
    _write_json(
        _out(args, "steering.json"),
        {
            "target_error": result.target_error,
            "energy": result.energy,
            "method": result.method,
        },
    )
    plots.save_density_row(
        [rho0, target, result.terminal],
        ["initial", "target", "terminal"],
        _out(args, "control.png"),
    )
    print(f"steering energy={result.energy:.6g}, "
          f"target error={result.target_error:.3e} ({result.method})")
    return 0


def cmd_stability(args):
    cfg = _load_config(args.config)
    op = _operator_from_config(cfg, args)
    block = cfg.get("stability")
    if not isinstance(block, dict):
        _fail("config needs a 'stability' object")
    if "v0" not in block:
        _fail("stability config needs 'v0': a density spec")
    v0 = _density_from_spec(block["v0"], op.partition, cfg)
    delta = None
    if "delta" in block:
        delta = _named_set(cfg, op.partition, block["delta"])
    report = stability_certificate(
        op,
        v0,
        tol=float(block.get("tol", 1e-8)),
        max_steps=int(block.get("max_steps", 100000)),
        delta_set=delta,
    )
    _write_json(
        _out(args, "stability.json"),
        {
            "classification": report.classification,
            "residual": report.residual,
            "min_value": report.min_value,
            "steps": report.steps,
        },
    )
    write_field_csv(report.solution, _out(args, "stability_field.csv"))
    plots.save_heatmap(
        report.solution,
        _out(args, "stability.png"),
        title=f"occupation sum ({report.classification})",
        mark=delta,
    )
    print(f"{report.classification} (residual={report.residual:.3e}, "
          f"steps={report.steps})")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="flowplace",
        description="Transfer-operator gramians, placement ranking, and "
        "minimum-energy steering for advective flows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "build": (cmd_build, "build a transfer operator and summary"),
        "gramian": (cmd_gramian, "occupation field of a cell set"),
        "place": (cmd_place, "rank actuator or sensor candidates"),
        "control": (cmd_control, "synthesize a minimum-energy schedule"),
        "stability": (cmd_stability, "run the occupation-sum certificate"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the JSON run config")
        p.add_argument("-o", "--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DivergentHorizonError, UnreachableTargetError, SingularGramianError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: cannot open {exc.filename}", file=sys.stderr)
        return 2
    except (FlowplaceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
