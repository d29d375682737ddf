"""Command-line experiment driver.

Usage::

    rigidlab {energy,recover,scaling,nullspace,heatflow} [--config PATH] [--out DIR]
             [--seed N] [--threads N]

Exit codes: 0 success, 2 invalid configuration or arguments, 3 a pipeline
stage failed (outputs written so far are kept).
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
COMMANDS = ("energy", "recover", "scaling", "nullspace", "heatflow")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class StageFailure(Exception):
    """Raised by a command after writing partial output."""


def _pmap(fn, items, threads: int):
    """Ordered map, optionally over a thread pool; results do not depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def xi_field(seed: int, index: int, d: int):
    """Piola test field of family member ``index``, drawn from ``rng([seed, index, 7])``."""
    import numpy as np

    from .fields import random_ambient_field

    return random_ambient_field(d, np.random.default_rng([seed, index, 7]))


# -- commands ----------------------------------------------------------------

ENERGY_HEADER = ("map_id", "energy_Ep", "energy_e", "degree", "piola_residual", "h_norm", "h_prime_norm", "ratio_max")


def energy_rows(cfg, threads: int = 1):
    """Per-member energy, degree and Piola summary rows (library entry point of ``energy``)."""
    from .errors import RigidlabError
    from .families import build_family, mesh_for
    from .maps import degree, energy_Ep
    from .piola import almost_harmonic_parts, piola_residual

    mesh = mesh_for(cfg)
    members = build_family(cfg, mesh)
    p = cfg.p
    bound = cfg.pipeline.resolved(mesh.manifold.inj_radius).clamp_bound

    def one(item):
        i, m = item
        try:
            E, e = energy_Ep(m.map, p)
            deg = degree(m.map)
            xi = xi_field(cfg.seed, i, mesh.vertices.shape[1])(mesh.vertices)
            res = piola_residual(m.map, xi)
            parts = almost_harmonic_parts(m.map, bound, p)
            return (m.map_id, E, e, deg, res, parts.h_norm, parts.h_prime_norm, parts.ratio_max), None
        except RigidlabError as exc:
            return None, f"{m.map_id}: {type(exc).__name__}: {exc}"

    return _pmap(one, list(enumerate(members)), threads)


def cmd_energy(cfg, out, threads):
    from .io import write_csv, write_json

    results = energy_rows(cfg, threads)
    rows = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    write_csv(out / "energy.csv", ENERGY_HEADER, rows)
    level = cfg.resolution if cfg.resolution is not None else _default_res(cfg)
    records = [
        {"mesh_level": level, "map_id": r[0], "residual": r[4], "h_norm": r[5], "ratio_max": r[7]} for r in rows
    ]
    write_json(out / "piola.json", records)
    if errors:
        raise StageFailure("; ".join(errors))


def _default_res(cfg):
    from .mesh import DEFAULT_RESOLUTION

    return DEFAULT_RESOLUTION[cfg.manifold]


def cmd_recover(cfg, out, threads):
    import numpy as np

    from .errors import RigidlabError
    from .families import build_family, mesh_for
    from .io import write_json
    from .maps import metric_deficit, save_map
    from .plotting import plot_face_scalar
    from .rigidity import nearest_isometry

    mesh = mesh_for(cfg)
    members = build_family(cfg, mesh)
    reports = _pmap(lambda m: nearest_isometry(m.map, cfg.pipeline), members, threads)
    failed = []
    for m, rep in zip(members, reports):
        save_map(m.map, out / f"map_{m.map_id}.json")
        write_json(out / f"report_{m.map_id}.json", {"map_id": m.map_id, **rep.to_dict()})
        try:
            deficit = np.linalg.norm(metric_deficit(m.map), axis=(1, 2))
            plot_face_scalar(mesh, deficit, out / f"deficit_{m.map_id}.svg", title=f"metric deficit, {m.map_id}", label="|f*g - g|")
        except RigidlabError:
            pass  # the report already records why this map is degenerate
        if not rep.ok:
            failed.append(f"{m.map_id}: stage {rep.failed_stage} ({rep.message})")
    if failed:
        raise StageFailure("; ".join(failed))


def scaling_results(cfg, threads: int = 1):
    """Scaling study per family member (library entry point of ``scaling``)."""
    from .families import build_family, mesh_for
    from .rigidity import scaling_study

    mesh = mesh_for(cfg)
    members = [m for m in build_family(cfg, mesh) if m.field is not None]
    if not members:
        from .errors import ConfigError

        raise ConfigError("scaling needs a perturbation family (random_smooth or killing)")
    eps = [float(e) for e in cfg.family.epsilons]
    res = _pmap(lambda m: scaling_study(mesh, m.field, m.base, eps, cfg.p), members, threads)
    return members, res


def cmd_scaling(cfg, out, threads):
    from .io import write_csv, write_json
    from .plotting import plot_scaling
    from .rigidity import ScalingResult

    members, results = scaling_results(cfg, threads)
    summary = []
    for m, r in zip(members, results):
        write_csv(out / f"scaling_{m.map_id}.csv", ScalingResult.header, r.rows)
        summary.append({"map_id": m.map_id, "slope": r.slope, "max_ratio": r.max_ratio})
    write_json(out / "scaling_summary.json", {"members": summary, "max_ratio": max(s["max_ratio"] for s in summary)})
    plot_scaling(results, out / "scaling.svg", title=f"{cfg.manifold}, p = {cfg.p:g}")


def cmd_nullspace(cfg, out, threads):
    from .families import mesh_for
    from .io import write_csv, write_json
    from .killing import korn_nullspace
    from .plotting import plot_spectrum

    mesh = mesh_for(cfg)
    res = korn_nullspace(mesh, cfg.nullspace.n_eigs, cfg.nullspace.gap)
    write_csv(out / "eigenvalues.csv", ("index", "eigenvalue"), [(i + 1, w) for i, w in enumerate(res.eigenvalues)])
    write_json(
        out / "nullspace.json",
        {
            "manifold": cfg.manifold,
            "resolution": mesh.resolution,
            "mesh_hash": mesh.mesh_hash,
            "null_dim": res.null_dim,
            "max_angle_deg": res.max_angle_deg,
            "eigenvalues": res.eigenvalues,
            "basis": [b.vectors for b in res.aligned],
        },
    )
    plot_spectrum(res.eigenvalues, res.null_dim, out / "spectrum.svg", title=f"Korn spectrum, {cfg.manifold}")
    if cfg.nullspace.export_mesh:
        mesh.write_off(out / "mesh.off")
        mesh.write_obj(out / "mesh.obj")
    if res.null_dim != mesh.manifold.killing_dim:
        raise StageFailure(f"nullspace dimension {res.null_dim} != {mesh.manifold.killing_dim}")


def heatflow_history(cfg):
    """Monitor rows of the flow from the first family member (library entry point of ``heatflow``)."""
    import math

    from .families import build_family, mesh_for
    from .heatflow import default_dt, initial_state, step

    mesh = mesh_for(cfg)
    f = build_family(cfg, mesh)[0].map
    pc = cfg.pipeline
    dt = default_dt(mesh) if pc.dt is None else pc.dt
    n = cfg.heatflow.steps or max(1, math.ceil(pc.t1 / dt - 1e-9))
    every = cfg.heatflow.monitor_every
    state = initial_state(f, cfg.p)
    for k in range(n):
        state = step(state, dt, pc.scheme, monitor=(k + 1) % every == 0 or k == n - 1)
    return state.history


def cmd_heatflow(cfg, out, threads):
    from .heatflow import MONITOR_COLUMNS
    from .io import write_csv
    from .plotting import plot_monitor

    hist = heatflow_history(cfg)
    write_csv(out / "heatflow.csv", MONITOR_COLUMNS, [[r[c] for c in MONITOR_COLUMNS] for r in hist])
    plot_monitor(hist, out / "heatflow.svg", title=f"heat flow, {cfg.manifold}")


_HANDLERS = {
    "energy": cmd_energy,
    "recover": cmd_recover,
    "scaling": cmd_scaling,
    "nullspace": cmd_nullspace,
    "heatflow": cmd_heatflow,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigidlab", description="Rigidity experiments on the sphere and the flat torus.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=(_HANDLERS[name].__doc__ or "").strip() or None)
        sp.add_argument("--config", type=str, default=None, help="YAML experiment config")
        sp.add_argument("--out", type=str, default=None, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for family members and BLAS")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))

    from pathlib import Path

    from .config import config_from_dict, load_config
    from .errors import ConfigError, RigidlabError
    from .io import write_json

    try:
        cfg = load_config(args.config) if args.config else config_from_dict({})
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", {k: v for k, v in cfg.to_dict().items() if k != "output_dir"})
    try:
        _HANDLERS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageFailure, RigidlabError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
