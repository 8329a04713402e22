"""Command-line front end.

    ctcr-consensus analyze  --topology FILE
    ctcr-consensus curves   --topology FILE --p 2 --d 0.8 --tau-max 5
    ctcr-consensus map      --topology FILE --p 2 --d 0.8 --tau-max 5 --grid 0.02
    ctcr-consensus domroot  --topology FILE --p 2 --d 0.8 --tau-max 5 --grid 0.02
    ctcr-consensus simulate --topology FILE --p 2 --d 0.8 --tau1 0.5 --tau2 0.5
    ctcr-consensus schedule --topology FILE --p 2 --d 0.8 --tau1 1 --tau2 2.5

Exit status: 0 on success, 1 on bad input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ctcr_map import STABLE, stability_map
from .dde_sim import SimConfig, consensus_metrics, simulate
from .errors import InputError, NumericalError
from .export import atomic_write, csv_text, curves_svg, json_text, map_svg, surface_svg
from .factorization import Gains, factorize, factors_to_json, jordan_transform
from .qpr_roots import dominant_surface
from .scheduler import feasible_cells, recommend_delays
from .sds_curves import DEFAULT_RESOLUTION, kernel_and_offspring, trace_building_curves
from .topology import load_topology_file, weighted_adjacency

COMMANDS = ("analyze", "curves", "map", "domroot", "simulate", "schedule")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _workers() -> int:
    raw = os.environ.get("CTCR_THREADS")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"CTCR_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise InputError("CTCR_THREADS must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctcr-consensus", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--topology", required=True, help="edge-list or JSON topology file")
    p.add_argument("--p", type=float, default=2.0, help="proportional gain P")
    p.add_argument("--d", type=float, default=0.8, help="derivative gain D")
    p.add_argument("--tau-max", type=float, default=5.0)
    p.add_argument("--grid", type=float, default=0.02, help="raster step h")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION,
                   help="SDS grid points per axis")
    p.add_argument("--tau1", type=float, default=None)
    p.add_argument("--tau2", type=float, default=None)
    p.add_argument("--t-end", type=float, default=200.0, help="simulation horizon")
    p.add_argument("--dt", type=float, default=None, help="simulation step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=float, default=None, help="scheduler margin (default 3h)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--format", action="append", choices=("csv", "json", "svg"),
                   help="output format; repeat for several (default csv)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


class _Run:
    def __init__(self, args, argv):
        self.args = args
        self.out = Path(args.out)
        self.formats = sorted(set(args.format or ["csv"]))
        self.files: list[str] = []
        self.stages: dict[str, float] = {}
        self.argv = list(argv)

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.stages[name] = round(time.perf_counter() - self.t0, 6)

        return _Timer()

    def write(self, name: str, text: str):
        atomic_write(self.out / name, text)
        self.files.append(name)

    def manifest(self):
        a = self.args
        doc = {
            "tool": "ctcr-consensus",
            "version": __version__,
            "command": a.command,
            "argv": self.argv,
            "inputs": {"topology": str(a.topology)},
            "parameters": {
                "P": a.p, "D": a.d, "tau_max": a.tau_max, "h": a.grid,
                "resolution": a.resolution, "seed": a.seed, "tau1": a.tau1, "tau2": a.tau2,
                "t_end": a.t_end, "dt": a.dt, "margin": a.margin,
            },
            "output_dir": str(self.out),
            "formats": self.formats,
            "files": sorted(self.files + ["manifest.json"]),
            "wall_clock_s": self.stages,
        }
        atomic_write(self.out / "manifest.json", json_text(doc))


def _need_delays(args):
    if args.tau1 is None or args.tau2 is None:
        raise InputError(f"{args.command} requires --tau1 and --tau2")
    if args.tau1 < 0 or args.tau2 < 0:
        raise InputError("--tau1/--tau2 must be nonnegative")
    return args.tau1, args.tau2


def _validate(args):
    if not args.tau_max > 0:
        raise InputError("--tau-max must be positive")
    if not args.grid > 0:
        raise InputError("--grid must be positive")
    if args.resolution < 360:
        raise InputError("--resolution must be at least 360")
    if not Path(args.topology).is_file():
        raise InputError(f"--topology: file not found: {args.topology}")


def _setup(run: _Run):
    a = run.args
    with run.stage("topology"):
        top = load_topology_file(a.topology)
        adj = weighted_adjacency(top)
        factors = factorize(adj, Gains(a.p, a.d))
    return top, adj, factors


def _curves(run, factors):
    a = run.args
    out = []
    with run.stage("curves"):
        for f in factors:
            bc = trace_building_curves(f, a.resolution)
            out.append((bc, kernel_and_offspring(bc, f, a.tau_max)))
    return out


def cmd_analyze(run: _Run) -> str:
    top, adj, factors = _setup(run)
    lines = [f"agents: {top.n}", f"in-degrees: {list(top.in_degrees)}",
             f"spanning tree: {'yes' if adj.spanning_tree else 'no'}", "eigenvalues:"]
    for e in adj.spectrum:
        lam = e.value
        lines.append(f"  {lam.real:+.6f}" + (f" {lam.imag:+.6f}i" if e.kind == "complex" else ""))
    lines.append(f"factors: {len(factors)}")
    for f in factors:
        lines.append(f"  {f.kind:22s} order {f.order}  lambda = {f.lam.real:+.6f}{f.lam.imag:+.6f}i")
    if "csv" in run.formats:
        rows = [(e.value.real, e.value.imag, e.kind, int(e.representative)) for e in adj.spectrum]
        run.write("spectrum.csv", csv_text(["re", "im", "kind", "representative"], rows))
    if "json" in run.formats:
        run.write("analysis.json", json_text({
            "n": top.n, "spanning_tree": adj.spanning_tree, "C": adj.C,
            "eigenvalues": [[e.value.real, e.value.imag] for e in adj.spectrum]}))
        run.write("factors.json", factors_to_json(factors) + "\n")
    return "\n".join(lines)


def cmd_curves(run: _Run) -> str:
    _, _, factors = _setup(run)
    traced = _curves(run, factors)
    lines = []
    if "csv" in run.formats:
        rows = []
        for k, (_, dsc) in enumerate(traced):
            for bid, c in enumerate(dsc.curves):
                nu1 = c.tau1 * c.omega
                nu2 = c.tau2 * c.omega
                for i in range(len(c)):
                    rows.append((k, bid, c.branch, c.shift[0], c.shift[1], nu1[i], nu2[i], c.omega[i],
                                 c.tau1[i], c.tau2[i], int(c.rt1[i]), int(c.rt2[i])))
        run.write("curves.csv", csv_text(
            ["factor", "branch_id", "building_branch", "j1", "j2", "nu1", "nu2", "omega",
             "tau1", "tau2", "RT1", "RT2"], rows))
    if "json" in run.formats:
        run.write("curves.json", json_text([
            {"factor": k, "kind": dsc.qp.kind, "branches": dsc.branches, "discarded": bc.discarded,
             "accepted": bc.accepted, "kernel_pieces": len(dsc.kernel),
             "offspring_pieces": len(dsc.offspring)} for k, (bc, dsc) in enumerate(traced)]))
    if "svg" in run.formats:
        run.write("curves.svg", curves_svg([d for _, d in traced], run.args.tau_max))
    for k, (bc, dsc) in enumerate(traced):
        lines.append(f"factor {k} ({dsc.qp.kind}): {dsc.branches} building branch(es), "
                     f"{len(dsc.kernel)} kernel / {len(dsc.offspring)} offspring piece(s), "
                     f"{bc.discarded} bracket(s) discarded")
    return "\n".join(lines)


def _map(run, factors, adj):
    traced = _curves(run, factors)
    a = run.args
    with run.stage("map"):
        smap = stability_map(factors, a.tau_max, a.grid, curves=[d for _, d in traced],
                             consensus_possible=adj.spanning_tree and adj.unit_multiplicity == 1)
    return smap


def _write_map(run, smap):
    names = smap.class_names()
    if "csv" in run.formats:
        rows = []
        for i2, t2 in enumerate(smap.axis):
            for i1, t1 in enumerate(smap.axis):
                rows.append((t1, t2, int(smap.total[i2, i1]), names[i2, i1]))
        run.write("map.csv", csv_text(["tau1", "tau2", "NU_total", "class"], rows))
    if "json" in run.formats:
        run.write("map.json", json_text({
            "tau_max": smap.tau_max, "h": smap.h, "consensus_possible": smap.consensus_possible,
            "stable_cells": int(np.sum(smap.classes == STABLE)),
            "marginal_cells": int(np.sum(smap.classes == 2)),
            "cells": int(smap.classes.size)}))
    if "svg" in run.formats:
        run.write("map.svg", map_svg(smap))


def cmd_map(run: _Run) -> str:
    _, adj, factors = _setup(run)
    smap = _map(run, factors, adj)
    _write_map(run, smap)
    frac = float(np.mean(smap.classes == STABLE))
    msg = [f"stable fraction of [0, {smap.tau_max:g}]^2: {frac:.4f}",
           f"consensus possible: {'yes' if smap.consensus_possible else 'no'}"]
    if run.args.tau1 is not None and run.args.tau2 is not None:
        msg.append(f"({run.args.tau1:g}, {run.args.tau2:g}): {smap.classify(run.args.tau1, run.args.tau2)}")
    return "\n".join(msg)


def _write_surface(run, surf, name="surface"):
    if "csv" in run.formats:
        rows = []
        for i2, t2 in enumerate(surf.axis):
            for i1, t1 in enumerate(surf.axis):
                rows.append((t1, t2, surf.real[i2, i1], surf.imag[i2, i1], int(surf.factor[i2, i1])))
        run.write(f"{name}.csv", csv_text(["tau1", "tau2", "re_sdom", "im_sdom", "factor"], rows))
    if "svg" in run.formats:
        run.write(f"{name}.svg", surface_svg(surf))


def cmd_domroot(run: _Run) -> str:
    a = run.args
    _, _, factors = _setup(run)
    with run.stage("surface"):
        surf = dominant_surface(factors, a.tau_max, a.grid, workers=_workers())
    _write_surface(run, surf)
    if "json" in run.formats:
        run.write("surface.json", json_text({"missing": surf.missing, "h": surf.h, "tau_max": surf.tau_max}))
    best = np.unravel_index(np.nanargmin(surf.real), surf.real.shape)
    return (f"min Re(s_dom) = {np.nanmin(surf.real):.6g} at "
            f"({surf.axis[best[1]]:.4g}, {surf.axis[best[0]]:.4g}); {len(surf.missing)} missing cell(s)")


def cmd_simulate(run: _Run) -> str:
    a = run.args
    tau1, tau2 = _need_delays(a)
    top, adj, _ = _setup(run)
    config = SimConfig(t_end=a.t_end, dt=a.dt, seed=a.seed)
    with run.stage("simulate"):
        traj = simulate(top, Gains(a.p, a.d), tau1, tau2, config)
    T = None
    if adj.spanning_tree:
        T = jordan_transform(adj.C, adj.spectrum)
    m = consensus_metrics(traj, T)
    if "csv" in run.formats:
        run.write("trajectory.csv", traj.to_csv())
    metrics = {
        "settling_time": m.settling_time, "consensus_value": m.consensus_value,
        "final_relative_spread": m.final_relative_spread, "diverged": m.diverged,
        "initial_spread": float(m.spread[0]), "final_spread": float(m.spread[-1]),
        "xi_final": m.xi_final, "disagreement_decay": m.disagreement_decay, "dt": traj.dt,
    }
    if "json" in run.formats or "csv" in run.formats:
        run.write("metrics.json", json_text(metrics))
        run.write("config.json", config.to_json() + "\n")
    settle = "none" if m.settling_time is None else f"{m.settling_time:.2f} s"
    return (f"dt = {traj.dt:g} s, diverged: {'yes' if m.diverged else 'no'}, settling time: {settle}, "
            f"final relative spread: {m.final_relative_spread:.3e}")


def cmd_schedule(run: _Run) -> str:
    a = run.args
    tau1, tau2 = _need_delays(a)
    _, adj, factors = _setup(run)
    smap = _map(run, factors, adj)
    margin = 3 * a.grid if a.margin is None else a.margin
    with run.stage("surface"):
        # Re(s_dom) is only needed on the cells the search can pick
        from .qpr_roots import DominantSurface

        n = len(smap.axis)
        blank = DominantSurface(smap.tau_max, smap.h, smap.axis, np.zeros((n, n)), np.zeros((n, n)),
                                np.zeros((n, n), dtype=int))
        mask = feasible_cells(smap, blank, (tau1, tau2), margin)
        surf = dominant_surface(factors, a.tau_max, a.grid, workers=_workers(), mask=mask)
    rec = recommend_delays(smap, surf, (tau1, tau2), margin)
    run.write("recommendation.json", rec.to_json() + "\n")
    if "svg" in run.formats:
        run.write("schedule.svg", map_svg(smap, {"current": rec.current, "recommended": rec.recommended}))
    return (f"current ({tau1:g}, {tau2:g}) Re(s_dom) = {rec.re_current:.5g}; recommended "
            f"({rec.recommended[0]:.4g}, {rec.recommended[1]:.4g}) Re(s_dom) = {rec.re_recommended:.5g} "
            f"[{rec.rationale}]")


HANDLERS = {
    "analyze": cmd_analyze, "curves": cmd_curves, "map": cmd_map,
    "domroot": cmd_domroot, "simulate": cmd_simulate, "schedule": cmd_schedule,
}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _validate(args)
        session = _Run(args, argv)
        summary = HANDLERS[args.command](session)
        session.manifest()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
