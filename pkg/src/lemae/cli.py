"""Command line: ``lemae {run,keystates,randomwalk,heatmap}``.

Exit codes: 0 success, 1 bad configuration or domain error, 2 runtime
failure, 3 discriminators still invalid after the self-check retries.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import DEFAULT_CONFIGS, RunConfig, data_path
from .envs import success_probes
from .learner import ConfigError, train
from .llm_bridge import LlmBridgeError, PromptBundle, ProviderConfig, SelfCheckExhausted, obtain_discriminators

log = logging.getLogger("lemae")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFCHECK = 0, 1, 2, 3


def parse_seeds(text: str) -> list[int]:
    """``"0..4"`` (inclusive), ``"0,2,7"`` or a single integer."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}; use e.g. 0..4 or 0,1,2") from None


def _base_task(task: str) -> str:
    return task[len("single_"):] if task.startswith("single_") else task


# ---------------------------------------------------------------------------
# run


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    reward, learner = cfg.reward, cfg.learner
    if args.baseline:
        reward = replace(reward, beta=0.0)
        learner = replace(learner, ksmt_explore=False, ksmt_plan=False, prune=False)
        cfg.use_key_states = False
    if args.no_shir:
        reward = replace(reward, beta=0.0)
    if args.no_ksmt_plan:
        learner = replace(learner, ksmt_plan=False)
    if args.no_ksmt_explore:
        learner = replace(learner, ksmt_explore=False)
    if args.no_prune:
        learner = replace(learner, prune=False)
    if args.alpha is not None:
        reward = replace(reward, alpha=args.alpha)
    if args.beta is not None:
        reward = replace(reward, beta=args.beta)
    if args.eps_h is not None:
        learner = replace(learner, eps_h=args.eps_h)
    if args.lr is not None:
        learner = replace(learner, learning_rate=args.lr)
    if args.budget is not None:
        learner = replace(learner, step_budget=args.budget)
    cfg.reward, cfg.learner = reward, learner
    if args.one_branch:
        cfg.one_branch = True
    if args.seeds is not None:
        cfg.seeds = parse_seeds(args.seeds)
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _load_config(arg: str) -> RunConfig:
    if arg in DEFAULT_CONFIGS and not Path(arg).exists():
        return RunConfig.load(data_path(f"{arg}.json"))
    return RunConfig.load(arg)


def run_one(cfg_dict: dict, dset_dict: dict | None, seed: int, out_dir: str) -> dict:
    """Train one seed and write its artifacts; runs inside worker processes too."""
    from .dsl import DiscriminatorSet

    cfg = RunConfig.from_dict(cfg_dict)
    dset = DiscriminatorSet.from_dict(dset_dict) if dset_dict else None
    learner = replace(cfg.learner, seed=seed)
    m = train(cfg.env_spec(), dset, cfg.reward, learner, one_branch=cfg.one_branch)
    out = Path(out_dir)
    m.write(out, extra={"seed": seed, "config": {**cfg_dict, "learner": {**cfg_dict["learner"], "seed": seed}}})
    info = analysis.export_heatmap(m, out / "heatmap", task=_base_task(cfg.task))
    return {
        "seed": seed,
        "steps_to_first_success": m.steps_to_first_success,
        "final_win_rate": m.final_win_rate,
        "blacklist": m.blacklist,
        "corridor_score": info["corridor_score"],
        "total_steps": m.total_steps,
    }


def cmd_run(args) -> int:
    cfg = _apply_flags(_load_config(args.config), args)
    spec = cfg.env_spec()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dset = None
    if cfg.use_key_states:
        dset = cfg.load_discriminators()
        if dset is None:
            bundle = PromptBundle.for_task(_base_task(cfg.task))
            dset = obtain_discriminators(cfg.provider_config(), bundle, cfg.task_config, success_probes(spec))
        (out / "discriminators.json").write_text(json.dumps(dset.to_dict(), indent=2))
    effective = cfg.to_dict()
    (out / "config.json").write_text(json.dumps(effective, indent=2))
    dset_dict = dset.to_dict() if dset is not None else None
    jobs = [(effective, dset_dict, seed, str(out / f"seed_{seed}")) for seed in cfg.seeds]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run_one, *zip(*jobs)))
    else:
        results = [run_one(*job) for job in jobs]
    for r in results:
        print(f"seed {r['seed']}: first success {r['steps_to_first_success']}, "
              f"final win rate {r['final_win_rate']:.3f}, corridor {r['corridor_score']:.3f}")
    budget = cfg.learner.step_budget
    firsts = [r["steps_to_first_success"] or budget for r in results]
    summary = {
        "config": effective,
        "runs": results,
        "median_steps_to_first_success": statistics.median(firsts),
        "mean_final_win_rate": statistics.fmean(r["final_win_rate"] for r in results),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"median steps to first success: {summary['median_steps_to_first_success']:.0f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# keystates


def cmd_keystates(args) -> int:
    if args.provider == "fixture":
        pcfg = ProviderConfig(kind="fixture", fixture_path=args.fixture or str(data_path("fixtures", f"{args.env}.json")),
                              max_selfcheck_retries=args.max_retries)
    else:
        pcfg = ProviderConfig(kind="http", endpoint_url=args.endpoint, model_name=args.model or "",
                              temperature=args.temperature, api_key_env_var=args.api_key_env,
                              max_selfcheck_retries=args.max_retries)
    try:
        pcfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    reports: list = []
    bundle = PromptBundle.for_task(_base_task(args.env))
    try:
        dset = obtain_discriminators(pcfg, bundle, args.task_config, success_probes(args.env), report_sink=reports)
    except SelfCheckExhausted as exc:
        print(exc.report.format(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SELFCHECK
    print(reports[-1].format())
    out = Path(args.out or f"discriminators_{args.env}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(dset.to_dict(), indent=2))
    print(f"wrote {len(dset)} discriminators to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# randomwalk


def cmd_randomwalk(args) -> int:
    modes = (False, True) if args.prior else (False,)
    if args.grid:
        rows = analysis.verify_grid(episodes=args.episodes, seed=args.seed, modes=modes)
    else:
        rows = analysis.verify_grid([args.N], [args.p], args.episodes, args.seed, modes)
    print(f"{'N':>4} {'p':>6} {'prior':>6} {'closed form':>12} {'monte carlo':>12} {'rel err':>8}")
    for r in rows:
        print(f"{r['N']:>4} {r['p']:>6.3f} {str(r['prior']):>6} {r['closed_form']:>12.4f} "
              f"{r['monte_carlo']:>12.4f} {r['rel_err']:>8.4f}")
    if args.out:
        analysis.write_report(rows, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# heatmap


def cmd_heatmap(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "visitation.npy"
    if not path.exists():
        raise ConfigError(f"no visitation.npy in {run_dir}")
    task = args.task
    if task is None:
        summary = run_dir / "summary.json"
        task = json.loads(summary.read_text()).get("config", {}).get("task", "pass") if summary.exists() else "pass"
    corridor = tuple(args.corridor) if args.corridor else None
    info = analysis.export_heatmap(np.load(path), args.out or run_dir / "heatmap", corridor=corridor,
                                   task=_base_task(task))
    print(f"corridor score {info['corridor_score']:.4f} over {info['total_visits']} visits")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lemae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train on a task for one or more seeds")
    r.add_argument("--config", required=True, help="config JSON, or a task name for the shipped default")
    r.add_argument("--seeds", help="e.g. 0..4 or 0,1,2 (overrides the file)")
    r.add_argument("--out", help="output directory (overrides the file)")
    r.add_argument("--alpha", type=float)
    r.add_argument("--beta", type=float)
    r.add_argument("--eps-h", type=float)
    r.add_argument("--lr", type=float)
    r.add_argument("--budget", type=int, help="environment step budget per seed")
    r.add_argument("--baseline", action="store_true", help="no key states: beta 0, no tree, annealed epsilon")
    r.add_argument("--no-shir", action="store_true")
    r.add_argument("--no-ksmt-plan", action="store_true")
    r.add_argument("--no-ksmt-explore", action="store_true")
    r.add_argument("--no-prune", action="store_true")
    r.add_argument("--one-branch", action="store_true")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("keystates", help="obtain and verify discriminators")
    k.add_argument("--env", required=True)
    k.add_argument("--provider", choices=("fixture", "http"), default="fixture")
    k.add_argument("--fixture")
    k.add_argument("--endpoint")
    k.add_argument("--model")
    k.add_argument("--temperature", type=float, default=0.0)
    k.add_argument("--api-key-env", default="LEMAE_API_KEY")
    k.add_argument("--max-retries", type=int, default=5)
    k.add_argument("--task-config")
    k.add_argument("--out")
    k.set_defaults(func=cmd_keystates)

    w = sub.add_parser("randomwalk", help="check hitting-time formulas by simulation")
    w.add_argument("--N", type=int, default=10)
    w.add_argument("--p", type=float, default=0.6)
    w.add_argument("--episodes", type=int, default=100_000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--prior", action="store_true", help="add the prior-mode row")
    w.add_argument("--grid", action="store_true", help="run the full N x p grid")
    w.add_argument("--out", help="JSON report path")
    w.set_defaults(func=cmd_randomwalk)

    h = sub.add_parser("heatmap", help="re-export visitation heatmaps from a run directory")
    h.add_argument("--run-dir", required=True)
    h.add_argument("--task")
    h.add_argument("--corridor", type=int, nargs=4, metavar=("X0", "X1", "Y0", "Y1"))
    h.add_argument("--out")
    h.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SelfCheckExhausted as exc:
        print(f"error: {exc}\n{exc.report.format()}", file=sys.stderr)
        return EXIT_SELFCHECK
    except (ConfigError, analysis.DomainError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LlmBridgeError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
