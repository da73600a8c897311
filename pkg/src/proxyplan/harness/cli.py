"""Command line entry point: ``proxyplan {train,eval,oracle,bound-check,gen-tasks}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..gridworld import GenerationError, MazeTask, generate_task
from ..dp_oracle import compute_oracle
from ..planner import bound_check
from .agents import make_agent
from .bounds import EPS_GRID, bound_fixtures, oracle_path
from .config import ConfigError, ExperimentConfig
from .figures import bar_chart, success_curves
from .metrics import export_metrics, summarize
from .training import build_bank, evaluate, evaluation_sets, run_training

log = logging.getLogger("proxyplan")


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.master_seed = args.seed
    if args.agent is not None:
        config.agent = args.agent
    return config.validate()


def out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args) -> int:
    config = load_config(args)
    out = out_dir(args)
    records = []
    for seed in config.seeds:
        log.info("training %s, seed %d", config.agent, seed)
        result = run_training(config, seed)
        records.extend(result.records)
        result.agent.save(out / f"{config.agent}_seed{seed}.json", {"seed": seed})
    export_metrics(records, out, {"config": config.to_dict()})
    success_curves(summarize(records), out / "success.png", config.agent)
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args)
    out = out_dir(args)
    doc = json.loads(Path(args.checkpoint).read_text())
    seed = int(doc.get("seed", config.seeds[0]))
    config.agent = doc.get("agent", config.agent)
    config.validate()
    bank, eval_ids, train_ids = build_bank(config, seed)
    agent = make_agent(config, bank)
    agent.load(args.checkpoint)
    rng = np.random.default_rng([config.master_seed, seed, 0xE7A1])
    rows = []
    for name, ids in evaluation_sets(config, eval_ids, train_ids).items():
        rate = evaluate(agent, ids, config.eval_episodes, rng, config.noise)
        rows.append({"agent": config.agent, "seed": seed, "interactions": 0, "difficulty": name,
                     "success": rate})
        print(f"{name:>6}  {rate:.3f}")
    export_metrics(rows, out, {"checkpoint": str(args.checkpoint)}, stem="eval")
    bar_chart([r["difficulty"] for r in rows], [r["success"] for r in rows], out / "eval.png",
              "success rate", config.agent)
    return 0


def _task_from_args(args) -> MazeTask:
    if args.task:
        return MazeTask.from_json(Path(args.task).read_text())
    return generate_task(args.width, args.height, args.difficulty, args.task_seed)


def cmd_oracle(args) -> int:
    task = _task_from_args(args)
    out = out_dir(args)
    tables = compute_oracle(task, noise=args.noise)
    path = out / f"oracle_{task.seed}.json"
    path.write_text(json.dumps(tables.to_dict()))
    print(f"wrote {path}")
    return 0


def cmd_bound_check(args) -> int:
    out = out_dir(args)
    paths = [oracle_path(t) for t in bound_fixtures(args.fixtures)]
    cases = bound_check(paths, EPS_GRID, slack=args.slack, rng=np.random.default_rng(args.seed or 0))
    rows = [{"fixture": c.fixture, "eps_v": c.eps_v, "eps_g": c.eps_g, "error": c.error,
             "bound": c.bound, "ok": c.ok} for c in cases]
    (out / "bound_check.json").write_text(json.dumps(rows, indent=1))
    with open(out / "bound_check.csv", "w") as fh:
        fh.write("fixture,eps_v,eps_g,error,bound,ok\n")
        for r in rows:
            fh.write(f"{r['fixture']},{r['eps_v']!r},{r['eps_g']!r},{r['error']!r},{r['bound']!r},{r['ok']}\n")
    bar_chart([f"{c.fixture}:{c.eps_v}/{c.eps_g}" for c in cases], [c.error / c.bound for c in cases],
              out / "bound_check.png", "error / bound")
    failed = [c for c in cases if not c.ok]
    print(f"{len(cases) - len(failed)}/{len(cases)} cases within the bound")
    if failed:
        print(f"error: {len(failed)} cases exceed the bound", file=sys.stderr)
        return 1
    return 0


def cmd_gen_tasks(args) -> int:
    out = out_dir(args)
    rng = np.random.default_rng(args.seed or 0)
    for i in range(args.count):
        task = generate_task(args.width, args.height, args.difficulty, int(rng.integers(0, 2**63 - 1)))
        (out / f"task_{i:03d}.json").write_text(task.to_json())
    print(f"wrote {args.count} tasks to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxyplan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat JSON or TOML experiment config")
            sp.add_argument("--agent", help="override the configured agent")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--out-dir", default="out")

    def task_args(sp):
        sp.add_argument("--width", type=int, default=8)
        sp.add_argument("--height", type=int, default=8)
        sp.add_argument("--difficulty", type=float, default=0.4)

    sp = sub.add_parser("train", help="train the configured agent over all seeds")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved agent snapshot")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("oracle", help="exact DP tables for one task")
    common(sp, config=False)
    task_args(sp)
    sp.add_argument("--task", help="task JSON; otherwise one is generated")
    sp.add_argument("--task-seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("bound-check", help="error-bound sweep over oracle checkpoint paths")
    common(sp, config=False)
    sp.add_argument("--fixtures", type=int, default=5)
    sp.add_argument("--slack", type=float, default=1.5)
    sp.set_defaults(func=cmd_bound_check)

    sp = sub.add_parser("gen-tasks", help="write generated tasks as JSON")
    common(sp, config=False)
    task_args(sp)
    sp.add_argument("--count", type=int, default=10)
    sp.set_defaults(func=cmd_gen_tasks)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GenerationError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
