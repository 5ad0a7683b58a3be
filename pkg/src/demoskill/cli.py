"""Command-line surface: gen-demos, ground, learn, adapt, execute, evaluate, bank."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import simenv, traceio
from .bank import KnowledgeBank
from .config import PipelineConfig
from .errors import DemoskillError
from .pipeline import (adapt_task, evaluate_templates, ground_demo,
                       learn_from_demos, run_task)
from .reasoner import RemoteReasoner
from .scripted import ScriptedReasoner
from .serde import geometric_to_json, pose_to_json


def _add_config_args(parser):
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--epsilon", type=float, help="contact threshold [m]")
    parser.add_argument("--gamma", type=float, help="min hand path per window [m]")
    parser.add_argument("--adapter-iterations", type=int, dest="adapter_iterations")
    parser.add_argument("--grid-m", type=int, dest="grid_m")
    parser.add_argument("--grid-n", type=int, dest="grid_n")
    parser.add_argument("--region-samples", type=int, dest="region_samples",
                        help="cell selections sampled per perspective")
    parser.add_argument("--candidates", type=int, dest="grasp_candidates")
    parser.add_argument("--failure-rounds", type=int, dest="failure_rounds")
    parser.add_argument("--fault-rate", type=float, dest="fault_rate")
    parser.add_argument("--seed", type=int)


def _add_reasoner_args(parser):
    parser.add_argument("--reasoner", choices=["scripted", "remote"], default="scripted")
    parser.add_argument("--reasoner-url", help="remote chat endpoint URL")
    parser.add_argument("--reasoner-model", default="default")
    parser.add_argument("--reasoner-key", help="bearer token for the remote endpoint")


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if getattr(args, "config", None) \
        else PipelineConfig()
    overrides = {}
    for field in ("epsilon", "gamma", "adapter_iterations", "grid_m", "grid_n",
                  "region_samples", "grasp_candidates", "failure_rounds",
                  "fault_rate", "seed"):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    return cfg.replace(**overrides) if overrides else cfg


def make_reasoner(args):
    if getattr(args, "reasoner", "scripted") == "remote":
        if not args.reasoner_url:
            raise DemoskillError("--reasoner-url is required for the remote backend")
        return RemoteReasoner(args.reasoner_url, model=args.reasoner_model,
                              api_key=args.reasoner_key)
    return ScriptedReasoner()


def cmd_gen_demos(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noise = simenv.DemoNoise(pose_sigma_m=args.pose_sigma, cloud_sigma_m=args.cloud_sigma)
    written = []
    for i in range(args.count):
        seed = args.seed_base + i
        demo = simenv.generate_demo(args.template, seed=seed, noise=noise)
        trace_path = out / f"{demo.trace.demo_id}.trace.jsonl"
        traceio.write_trace(demo.trace, trace_path)
        gt_path = out / f"{demo.trace.demo_id}.gt.json"
        gt_path.write_text(json.dumps(demo.ground_truth, indent=2) + "\n")
        written.append(str(trace_path))
    print("\n".join(written))
    return 0


def cmd_ground(args):
    cfg = load_config(args)
    reasoner = make_reasoner(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for trace_path in args.traces:
        trace = traceio.read_trace(trace_path)
        grounded = ground_demo(trace, reasoner, cfg)
        dest = out / f"{trace.demo_id}.grounding.json"
        traceio.write_grounding(dest, trace.demo_id, grounded.task,
                                grounded.segments, grounded.interactions)
        print(dest)
        if args.figures:
            from .grounding import interaction_distance_series
            from .report import render_distance_series
            series = {oid: interaction_distance_series(trace, oid)
                      for oid in trace.object_ids()}
            fig_path = out / f"{trace.demo_id}.distances.png"
            render_distance_series(series, cfg.epsilon, fig_path)
            print(fig_path)
    return 0


def cmd_learn(args):
    cfg = load_config(args)
    reasoner = make_reasoner(args)
    bank = KnowledgeBank(args.bank)
    traces = [traceio.read_trace(p) for p in args.traces]
    renderer = None
    if args.figures:
        from .report import render_scene_figure
        fig_dir = Path(args.bank) / "figures"
        fig_dir.mkdir(parents=True, exist_ok=True)
        counter = {"n": 0}

        def renderer(scene):
            counter["n"] += 1
            return render_scene_figure(scene, fig_dir / f"interaction_{counter['n']}.png")

    info = learn_from_demos(traces, reasoner, cfg, bank, image_renderer=renderer)
    print(json.dumps(info, indent=2))
    return 0


def _require_bank(path) -> KnowledgeBank:
    root = Path(path)
    if not root.exists():
        raise DemoskillError(
            f"bank {root} does not exist; run `demoskill learn --bank {root} ...` first")
    return KnowledgeBank(root)


def cmd_adapt(args):
    cfg = load_config(args)
    reasoner = make_reasoner(args)
    bank = _require_bank(args.bank)
    world = simenv.build_world(args.template, seed=args.world_seed, unseen=args.unseen)
    task = args.task or world.meta["task_text"]
    steps, pairs, rounds = adapt_task(world, task, bank, reasoner, cfg)
    payload = {
        "task": task,
        "steps": steps,
        "adaptation_rounds": rounds,
        "subtasks": [{
            "subtask": p.subtask,
            "grasp_object": p.grasp_object,
            "master_id": p.master_id,
            "regions": geometric_to_json(p.regions),
            "program": geometric_to_json(p.program) if p.program else None,
        } for p in pairs],
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(args.out)
    else:
        print(text)
    return 0


def cmd_execute(args):
    cfg = load_config(args)
    reasoner = make_reasoner(args)
    bank = _require_bank(args.bank)
    world = simenv.build_world(args.template, seed=args.world_seed, unseen=args.unseen)
    task = args.task or world.meta["task_text"]
    outcome = run_task(world, task, bank, reasoner, cfg,
                       rng=np.random.default_rng(cfg.seed))
    payload = {
        "task": task,
        "steps": outcome.steps,
        "success": bool(outcome.success),
        "adaptation_rounds": outcome.adaptation_rounds,
        "subtasks": [{
            "events": sub.events,
            "rounds_used": sub.rounds_used,
            "aborted": sub.aborted,
            "score": sub.plan.score if sub.plan else None,
            "grasp": pose_to_json(sub.plan.grasp) if sub.plan else None,
        } for sub in outcome.subtask_outcomes],
    }
    print(json.dumps(payload, indent=2))
    return 0 if outcome.success else 1


def cmd_evaluate(args):
    cfg = load_config(args)
    reasoner = make_reasoner(args)
    templates = args.templates or list(simenv.TEMPLATES)
    out_dir = Path(args.out)
    banks_dir = out_dir / "banks"

    def bank_factory(template):
        return KnowledgeBank(banks_dir / template)

    rows = evaluate_templates(templates, bank_factory, reasoner, cfg,
                              demo_count=args.demos, eval_seeds=args.seeds)
    from .report import write_report
    report = write_report(rows, out_dir)
    print(report["text"], end="")
    print(f"csv: {report['csv']}")
    print(f"chart: {report['chart']}")
    return 0


def cmd_bank(args):
    bank = _require_bank(args.bank)
    if args.show:
        try:
            record = bank.get_plan(args.show)
            print(json.dumps({"kind": "plan", "key": record.key,
                              "value": record.value}, indent=2))
        except KeyError:
            from .serde import skill_to_json
            record = bank.get_skill(args.show)
            print(json.dumps({"kind": "skill", "key": record.key,
                              "value": skill_to_json(record.value)}, indent=2))
        return 0
    print(json.dumps({"counts": bank.counts(), "entries": bank.entries()}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demoskill",
        description="Learn manipulation skills from demonstration traces, adapt "
                    "them to new scenes, and execute them in a kinematic sim world.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="generate synthetic demonstration traces")
    p.add_argument("--template", required=True, choices=simenv.TEMPLATES)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--seed", dest="seed_base", type=int, default=0)
    p.add_argument("--pose-sigma", type=float, default=0.0)
    p.add_argument("--cloud-sigma", type=float, default=0.0)
    p.add_argument("--out", default="demos")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("ground", help="segment traces and extract interactions")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", default="grounded")
    p.add_argument("--figures", action="store_true",
                   help="render distance-series figures alongside the output")
    _add_config_args(p)
    _add_reasoner_args(p)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("learn", help="learn skills from traces into the bank")
    p.add_argument("traces", nargs="+")
    p.add_argument("--bank", required=True)
    p.add_argument("--figures", action="store_true",
                   help="render interaction figures into the bank directory")
    _add_config_args(p)
    _add_reasoner_args(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("adapt", help="adapt stored skills to a built world")
    p.add_argument("--bank", required=True)
    p.add_argument("--template", required=True, choices=simenv.TEMPLATES)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--unseen", action="store_true")
    p.add_argument("--task", help="task text (default: the template's task)")
    p.add_argument("--out", help="write adapted constraints JSON here")
    _add_config_args(p)
    _add_reasoner_args(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("execute", help="adapt and execute a task in a built world")
    p.add_argument("--bank", required=True)
    p.add_argument("--template", required=True, choices=simenv.TEMPLATES)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--unseen", action="store_true")
    p.add_argument("--task")
    _add_config_args(p)
    _add_reasoner_args(p)
    p.set_defaults(func=cmd_execute)

    p = sub.add_parser("evaluate", help="success-rate table over templates and seeds")
    p.add_argument("--templates", nargs="*", choices=simenv.TEMPLATES)
    p.add_argument("--demos", type=int, default=5)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", default="evaluation")
    _add_config_args(p)
    _add_reasoner_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bank", help="inspect or list bank records")
    p.add_argument("--bank", required=True)
    p.add_argument("--show", help="record id to print in full")
    p.set_defaults(func=cmd_bank)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DemoskillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
