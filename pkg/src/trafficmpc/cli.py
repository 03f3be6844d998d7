"""Command line front end: config parsing, presets, and file emission.

Subcommands: simulate, identify, compare, feasibility, validate.  Scenarios
come from a JSON config file or one of the built-in presets; all randomness
flows through the configured seed, so identical (config, seed) pairs emit
byte-identical files.  Set TRAFFICMPC_LOG to adjust verbosity.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import analysis, flow
from .bounds import (BoundsError, bounds_from_truth, bounds_to_config,
                     load_bounds)
from .dynamics import demand_vector
from .identification import run_identification
from .network import (Network, NetworkError, load_network, make_paper_grid,
                      network_to_config, validate_network)

log = logging.getLogger("trafficmpc")

_KNOWN_KEYS = {"command", "network", "demand", "demand_profile", "controller",
               "controllers", "horizon", "x0", "seed", "out", "bounds",
               "max_steps"}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    command: str
    network: dict
    demand: object = 0.0
    controller: dict = field(default_factory=lambda: {"id": "one-step-mpc"})
    controllers: Optional[list] = None
    horizon: int = 300
    x0: object = 0.0
    seed: int = 0
    out: Optional[str] = None
    bounds: Optional[dict] = None
    max_steps: int = 2000


def parse_config(data, command: Optional[str] = None) -> ScenarioConfig:
    """Validate a config mapping (or JSON text) into a ScenarioConfig.
    Unknown keys are rejected so typos fail loudly."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    unknown = set(data) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cmd = command or data.get("command")
    if not cmd:
        raise ConfigError("missing field: command")
    cfg = ScenarioConfig(command=cmd, network=data.get("network", {}))
    if not cfg.network:
        raise ConfigError("missing field: network")
    for key in ("demand", "controller", "controllers", "x0", "seed", "out",
                "bounds", "max_steps"):
        if key in data:
            setattr(cfg, key, data[key])
    if "horizon" in data:
        cfg.horizon = int(data["horizon"])
        if cfg.horizon < 1:
            raise ConfigError("invariant violated: horizon >= 1")
    profile = data.get("demand_profile", "constant")
    if profile != "constant":
        log.warning("non-constant demand profiles are experimental")
    dm = np.asarray(cfg.demand if not isinstance(cfg.demand, dict)
                    else list(cfg.demand.values()), dtype=float)
    if np.any(dm < 0):
        raise ConfigError("invariant violated: demand nonnegative")
    if cfg.command in ("simulate", "compare") and "controller" in data and \
            "id" not in data["controller"]:
        raise ConfigError("missing field: controller.id")
    return cfg


def preset_config(name: str) -> ScenarioConfig:
    """Built-in scenarios on the four-intersection grid of the experiments
    (demand 0.93, unit initial queues)."""
    base = {"network": {"generator": "paper-grid"}, "demand": 0.93,
            "x0": 1.0, "horizon": 300, "seed": 0}
    if name == "grid":
        return parse_config({**base, "command": "simulate",
                             "controller": {"id": "one-step-mpc"}})
    if name == "fig3":
        return parse_config({**base, "command": "identify", "horizon": 500,
                             "bounds": {"delta": 0.1}})
    if name == "fig4":
        return parse_config({
            **base, "command": "compare",
            "controllers": [{"id": "one-step-mpc"}, {"id": "max-pressure"},
                            {"id": "prop-fair"}, {"id": "fixed-time"}]})
    raise ConfigError(f"unknown preset {name!r}; expected fig3, fig4 or grid")


def _load_net(cfg: ScenarioConfig) -> Network:
    src = cfg.network
    if "file" in src:
        path = Path(src["file"])
        if not path.exists():
            raise ConfigError(f"network file not found: {path}")
        return load_network(path)
    if src.get("generator") == "paper-grid":
        params = {k: v for k, v in src.items() if k != "generator"}
        return make_paper_grid(**params)
    raise ConfigError("network needs a 'file' or generator 'paper-grid'")


def _resolve_bounds(cfg: ScenarioConfig, net: Network, lam):
    spec = cfg.bounds or {"delta": 0.1}
    if "file" in spec:
        return load_bounds(net, spec["file"])
    return bounds_from_truth(net, lam, delta=float(spec.get("delta", 0.1)))


def _outdir(cfg: ScenarioConfig) -> Path:
    out = Path(cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_trajectory(path, net: Network, xs: np.ndarray,
                      movements=None) -> None:
    idx = range(net.n_x) if movements is None else movements
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [net.movement_label(q) for q in idx])
        for t, row in enumerate(xs):
            w.writerow([t] + [repr(float(row[q])) for q in idx])


def run_scenario(cfg: ScenarioConfig) -> int:
    """Execute one scenario and emit its files.  Returns the exit status."""
    net = _load_net(cfg)
    out = _outdir(cfg)

    if cfg.command == "validate":
        report = validate_network(net)
        (out / "validation.txt").write_text(
            "ok\n" if not report else "\n".join(report) + "\n")
        for line in report:
            click.echo(f"violation: {line}")
        if report:
            return 1
        click.echo(f"network ok: {net.n_links} links, {net.n_x} movements, "
                   f"{net.n_u} phases")
        return 0

    lam = demand_vector(net, cfg.demand)

    if cfg.command == "feasibility":
        cert = flow.check_demand_feasible(net, lam)
        q = flow.solve_flow(net, lam)
        payload = {"feasible": cert.feasible, "margin": cert.margin,
                   "node_margins": cert.node_margins,
                   "flows": {lid: q.q[k]
                             for lid, k in net.link_index.items()}}
        (out / "feasibility.json").write_text(json.dumps(payload, indent=2))
        click.echo(f"feasible: {cert.feasible} (margin {cert.margin:.6g})")
        return 0

    if cfg.command == "simulate":
        policy = analysis.make_controller(
            net, cfg.controller["id"],
            **{k: v for k, v in cfg.controller.items() if k != "id"},
            **({"seed": cfg.seed} if cfg.controller["id"] == "one-step-mpc"
               and "seed" not in cfg.controller else {}))
        logrec = analysis.run_closed_loop(
            net, policy, cfg.x0, lam, cfg.horizon,
            controller=cfg.controller["id"], seed=cfg.seed)
        _write_trajectory(out / "trajectory.csv", net, logrec.x)
        analysis.metrics_to_csv(analysis.compute_metrics(logrec),
                                out / "metrics.csv",
                                controller=cfg.controller["id"])
        m = analysis.compute_metrics(logrec)
        (out / "summary.txt").write_text(
            f"controller: {cfg.controller['id']}\n"
            f"steps: {logrec.steps}\n"
            f"avg norm2_sq: {float(m['norm2_sq'][1:].mean())!r}\n"
            f"final norm_inf: {float(m['norm_inf'][-1])!r}\n"
            f"throughput: {float(m['throughput'][-1])!r}\n")
        click.echo(f"simulated {logrec.steps} steps; "
                   f"files in {out}")
        return 0

    if cfg.command == "identify":
        b0 = _resolve_bounds(cfg, net, lam)
        res = run_identification(net, b0, cfg.x0, lam,
                                 max_steps=cfg.max_steps, record=True)
        with open(out / "telemetry.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "target", "value", "driven", "mode"])
            for e in res.events:
                w.writerow([e["step"], e["target"], repr(e["value"]),
                            int(e["driven"]), e["mode"]])
        (out / "bounds.json").write_text(
            json.dumps(bounds_to_config(net, res.bounds), indent=2))
        # continue under the one-step MPC with the learned parameters
        remaining = max(cfg.horizon - res.steps, 0)
        policy = analysis.make_controller(net, "one-step-mpc", seed=cfg.seed)
        cont = analysis.run_closed_loop(net, policy, res.state.x, lam,
                                        remaining, controller="one-step-mpc")
        xs = np.vstack([res.trajectory, cont.x[1:]]) if remaining else \
            res.trajectory
        _write_trajectory(out / "trajectory.csv", net, xs)
        watch = [q for q in range(net.n_x)
                 if net.links[net.from_link[q]].id == "20"]
        if watch:
            _write_trajectory(out / "queues_link20.csv", net, xs,
                              movements=watch)
        (out / "summary.txt").write_text(
            f"converged: {res.converged}\n"
            f"identification steps: {res.steps}\n"
            f"estimates: {len(res.events)}\n"
            f"unresolved: {res.unresolved}\n")
        verdict = "converged" if res.converged else "incomplete"
        click.echo(f"identification {verdict} in {res.steps} steps; "
                   f"files in {out}")
        return 0 if res.converged else 3

    if cfg.command == "compare":
        specs = cfg.controllers or [{"id": "one-step-mpc"},
                                    {"id": "max-pressure"},
                                    {"id": "prop-fair"},
                                    {"id": "fixed-time"}]
        controllers = {}
        for c in specs:
            params = {k: v for k, v in c.items() if k != "id"}
            if c["id"] == "one-step-mpc":
                params.setdefault("seed", cfg.seed)
            controllers[c["id"]] = analysis.make_controller(
                net, c["id"], **params)
        results = analysis.compare_policies(net, lam, cfg.x0, controllers,
                                            cfg.horizon)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "metric", "value", "controller"])
            for name, r in results.items():
                for t, v in enumerate(r["norm2_sq"]):
                    w.writerow([t, "norm2_sq", repr(float(v)), name])
        lines = [f"{'controller':<16}{'avg norm2_sq':>16}{'peak':>16}"]
        for name, r in results.items():
            lines.append(f"{name:<16}{r['avg_norm2_sq']:>16.6g}"
                         f"{r['peak_norm2_sq']:>16.6g}")
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
        click.echo("\n".join(lines))
        return 0

    raise ConfigError(f"unknown command {cfg.command!r}")


def _build_config(command, config, preset, seed, out) -> ScenarioConfig:
    if config and preset:
        raise ConfigError("pass either --config or --preset, not both")
    if config:
        path = Path(config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = parse_config(path.read_text(), command=command)
    elif preset:
        cfg = preset_config(preset)
        cfg.command = command
    else:
        raise ConfigError("one of --config or --preset is required")
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.out = out
    return cfg


def _common(fn):
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Output directory (default: ./out).")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Seed for solver restarts and sampling.")(fn)
    fn = click.option("--preset", type=click.Choice(["fig3", "fig4", "grid"]),
                      default=None, help="Built-in scenario.")(fn)
    fn = click.option("--config", type=click.Path(), default=None,
                      help="JSON scenario config.")(fn)
    return fn


@click.group()
def main():
    """Signalized traffic network simulation, identification and control."""
    logging.basicConfig(
        level=os.environ.get("TRAFFICMPC_LOG", "WARNING").upper())


def _run(command, config, preset, seed, out):
    try:
        cfg = _build_config(command, config, preset, seed, out)
        status = run_scenario(cfg)
    except (ConfigError, NetworkError, BoundsError, flow.FlowError) as e:
        raise click.ClickException(str(e))
    if status != 0:
        raise SystemExit(status)


for _name, _help in [("simulate", "Run one controller in closed loop."),
                     ("identify", "Identify C and R, then keep controlling."),
                     ("compare", "Run several controllers side by side."),
                     ("feasibility", "Check demand against the network."),
                     ("validate", "Check a network description.")]:
    def _make(name=_name, helptext=_help):
        @main.command(name=name, help=helptext)
        @_common
        def _cmd(config, preset, seed, out):
            _run(name, config, preset, seed, out)
        return _cmd
    _make()
