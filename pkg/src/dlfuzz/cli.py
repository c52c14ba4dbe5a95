"""Command line entry points: fuzz, replay, score, oracle.

Exit codes: 0 success, 2 usage/config error, 3 bad input data.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .errors import CollidedObservation, ConfigError, DlfuzzError, ParseError
from .feedback import feedback
from .fuzzer import CampaignConfig, judge, run_campaign, write_report
from .generation import GenConfig
from .oracle import OracleConfig, evaluate
from .road_network import MAP_IDS, get_map
from .scenario import dumps_observation, loads_observation, loads_scenario
from .simulator import SimConfig, simulate

log = logging.getLogger("dlfuzz")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
PARTIAL = ".partial"
_NESTED = {"sim": SimConfig, "oracle_cfg": OracleConfig, "gen": GenConfig}
_OVERRIDES = ("seed", "map_id", "policy", "mode", "oracle", "iterations")


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("DLFUZZ_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config key{'s' if len(unknown) > 1 else ''} in {where}: {', '.join(unknown)}")
    kw = {}
    for k, v in doc.items():
        kw[k] = _build(_NESTED[k], v, f"{where}.{k}") if cls is CampaignConfig and k in _NESTED else v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path=None, overrides=None):
    """CampaignConfig from an optional JSON file, then CLI overrides on top."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(_read(path))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    doc = dict(doc)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        doc[k] = v
        if k == "iterations":
            doc["wall_clock"] = None
        if k == "map_id":
            doc[k] = _map_id(v)
    if "map_id" in doc and isinstance(doc["map_id"], str):
        doc["map_id"] = _map_id(doc["map_id"])
    return _build(CampaignConfig, doc, "config")


def _map_id(name):
    m = str(name).upper()
    if m not in MAP_IDS:
        raise ConfigError(f"unknown map {name!r}")
    return m


def _overrides(args):
    return {k: getattr(args, k, None) for k in _OVERRIDES}


# ---------------------------------------------------------------------------


def cmd_fuzz(args):
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out or "dlfuzz-out")
    out.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL
    marker.write_text("campaign in progress\n")

    def progress(rec):
        log.info("iteration %d %s %s", rec.iteration, rec.operator, rec.verdict)

    report = run_campaign(cfg, progress)
    write_report(report, out)
    from .plotting import campaign_figures

    campaign_figures(report, out)
    marker.unlink()
    print(json.dumps({"out": str(out), "iterations": report.iterations, "dls": len(report.dls),
                      "collisions": report.collisions}))
    return EXIT_OK


def _graph_for(map_id, fallback):
    return get_map(_map_id(map_id or fallback))


def cmd_replay(args):
    cfg = load_config(args.config, _overrides(args))
    scenario = loads_scenario(_read(args.scenario))
    graph = get_map(_map_id(scenario.map_id))
    obs = simulate(scenario, graph, cfg.policy, cfg.sim)
    verdict = None
    result = {"policy": cfg.policy, "collision": obs.collision_flag, "collided_pair": obs.collided_pair}
    if not obs.collision_flag:
        verdict = judge(obs, cfg)
        result.update(verdict.to_dict())
        result.pop("graphs")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "observation.json").write_text(dumps_observation(obs))
    if args.svg is not None:
        path = Path(args.svg) if args.svg else Path(args.out or ".") / (Path(args.scenario).stem + ".svg")
        path.parent.mkdir(parents=True, exist_ok=True)
        regions = [] if obs.collision_flag else feedback(obs, graph).regions
        from .plotting import replay_figure

        replay_figure(obs, graph, verdict, regions, path)
        result["svg"] = str(path)
    print(json.dumps(result))
    return EXIT_OK


def cmd_score(args):
    cfg = load_config(args.config, {})
    obs = loads_observation(_read(args.observation))
    graph = _graph_for(args.map_id, obs.map_id or "M1")
    fb = feedback(obs, graph, cfg.alpha, cfg.n_ti)
    print(json.dumps(fb.to_dict()))
    return EXIT_OK


def cmd_oracle(args):
    cfg = load_config(args.config, {"oracle": args.oracle})
    obs = loads_observation(_read(args.observation))
    if obs.collision_flag:
        raise CollidedObservation(f"collision between {obs.collided_pair}")
    if cfg.oracle == "waitfor":
        graph = get_map(_map_id(args.map_id)) if args.map_id else None
        verdict = evaluate(obs, cfg.oracle_cfg, graph)
    else:
        verdict = judge(obs, cfg)
    print(json.dumps(verdict.to_dict()))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dlfuzz", description="Deadlock fuzzing for multi-AV scenarios.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file mirroring CampaignConfig")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="master rng seed")
        sp.add_argument("--map", dest="map_id", help="map id (m1..m4)")
        sp.add_argument("--policy", help="AV policy name")
        sp.add_argument("--mode", choices=("stclocker", "random_baseline"))
        sp.add_argument("--oracle", choices=("waitfor", "naive_timer"))
        sp.add_argument("--iterations", type=int, help="iteration budget")

    f = sub.add_parser("fuzz", help="run a campaign")
    common(f)
    f.set_defaults(func=cmd_fuzz)

    r = sub.add_parser("replay", help="simulate and judge one scenario file")
    r.add_argument("scenario")
    common(r)
    r.add_argument("--svg", nargs="?", const="", default=None, metavar="PATH",
                   help="write a trajectory figure (default: <out>/<scenario>.svg)")
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("score", help="feedback scores of an observation file")
    s.add_argument("observation")
    common(s)
    s.set_defaults(func=cmd_score)

    o = sub.add_parser("oracle", help="deadlock verdict of an observation file")
    o.add_argument("observation")
    common(o)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParseError, KeyError) as exc:
        print(f"error: {_msg(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except DlfuzzError as exc:
        print(f"error: {_msg(exc)}", file=sys.stderr)
        return EXIT_DATA


def _msg(exc):
    return exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)


if __name__ == "__main__":
    sys.exit(main())
