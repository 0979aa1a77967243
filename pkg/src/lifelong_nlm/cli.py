"""Single entry point for every experiment.

Subcommands: gen-data, train-ilp, collect, train-rl, eval, metrics,
report.  Each run writes its artifacts under <out>/<run-name>/{data,
checkpoints,metrics} together with the fully resolved configuration and a
completion marker; re-running a completed run reproduces its artifacts
byte-for-byte, while an incomplete run directory is refused without
--resume.  Exit codes: 0 ok, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import traceback

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    ExperimentConfig,
    output_root,
    read_config_file,
    resolve_config,
    resolved_text,
)

COMPLETE_MARKER = "run.complete"


def _float(text: float) -> str:
    return repr(float(text))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifelong-nlm",
        description="Lifelong neural logic experiments (supervised ILP and "
        "offline relational RL on BlocksWorld).",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--name")
        p.add_argument("--resume", action="store_true", default=None)
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        return p

    common_scale = {"--paper-scale": dict(dest="paper_scale", action="store_true",
                                          default=None)}
    add("gen-data", "generate instance files for one domain", {
        "--domain": dict(choices=["arithmetic", "tree", "graph"]),
        "--seed": dict(type=int),
        "--train": dict(dest="train_count", type=int),
        "--test": dict(dest="test_count", type=int),
        **common_scale,
    })
    add("train-ilp", "sequential supervised training over a domain", {
        "--domain": dict(choices=["arithmetic", "tree", "graph"]),
        "--mode": dict(choices=["lifelong", "individual"]),
        "--replay": dict(choices=["on", "off"]),
        "--seeds": dict(),
        "--epochs": dict(dest="epochs_per_task", type=int),
        "--batch-size": dict(dest="batch_size", type=int),
        "--train": dict(dest="train_count", type=int),
        "--test": dict(dest="test_count", type=int),
        "--learning-rate": dict(dest="learning_rate", type=float),
        "--kb-depth": dict(dest="kb_depth", type=int),
        "--eval-every": dict(dest="eval_every", type=int),
        "--workers": dict(type=int),
        **common_scale,
    })
    add("collect", "collect an offline BlocksWorld buffer for one task", {
        "--task": dict(type=int),
        "--n": dict(dest="transitions", type=int),
        "--epsilon": dict(type=float),
        "--seed": dict(type=int),
        "--n-blocks": dict(dest="n_blocks", type=int),
        **common_scale,
    })
    add("train-rl", "offline actor-critic training over the task sequence", {
        "--mode": dict(choices=["lifelong", "individual"]),
        "--seeds": dict(),
        "--buffers": dict(dest="buffers_dir"),
        "--grad-steps": dict(dest="grad_steps", type=int),
        "--n-blocks": dict(dest="n_blocks", type=int),
        "--eval-every": dict(dest="rl_eval_every", type=int),
        "--eval-episodes": dict(dest="eval_episodes", type=int),
        "--workers": dict(type=int),
        **common_scale,
    })
    add("eval", "evaluate a saved checkpoint", {
        "--checkpoint": dict(),
        "--data": dict(dest="data_path"),
        "--task": dict(type=int),
        "--episodes": dict(type=int),
        "--seed": dict(type=int),
    })
    add("metrics", "transfer/forgetting metrics from a metrics CSV", {
        "--in": dict(dest="metrics_path"),
    })
    add("report", "aggregate metrics CSVs into per-figure summaries", {
        "--in": dict(dest="metrics_path"),
    })
    return parser


def parse_cli(argv) -> ExperimentConfig:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    cli_values = {k: v for k, v in args.items() if v is not None}
    file_values = read_config_file(config_path) if config_path else {}
    return resolve_config(command, file_values, cli_values)


# ---------------------------------------------------------------------------
# run directories


def default_run_name(cfg: ExperimentConfig) -> str:
    parts = [cfg.command]
    if cfg.command in ("gen-data", "train-ilp"):
        parts.append(cfg.domain)
    if cfg.command in ("train-ilp", "train-rl"):
        parts += [cfg.mode, f"replay-{cfg.replay}"] if cfg.command == "train-ilp" \
            else [cfg.mode]
    if cfg.command == "collect":
        parts.append(f"task{cfg.task}")
    if cfg.paper_scale:
        parts.append("paper")
    return "_".join(parts)


def prepare_run_dir(cfg: ExperimentConfig) -> str:
    root = output_root(cfg)
    run_dir = os.path.join(root, cfg.name or default_run_name(cfg))
    marker = os.path.join(run_dir, COMPLETE_MARKER)
    if os.path.isdir(run_dir) and os.listdir(run_dir):
        if not os.path.exists(marker) and not cfg.resume:
            raise ConfigError(
                f"{run_dir} holds a partial run; pass --resume to restart it"
            )
        if os.path.exists(marker):
            os.remove(marker)
    for sub in ("data", "checkpoints", "metrics"):
        os.makedirs(os.path.join(run_dir, sub), exist_ok=True)
    with open(os.path.join(run_dir, "config.resolved"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(resolved_text(cfg))
    return run_dir


def mark_complete(run_dir: str) -> None:
    with open(os.path.join(run_dir, COMPLETE_MARKER), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write("ok\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg: ExperimentConfig) -> str:
    from .tasks import domain_spec, make_dataset, save_instances

    run_dir = prepare_run_dir(cfg)
    spec = domain_spec(cfg.domain, paper_scale=cfg.paper_scale)
    train, test = make_dataset(spec, cfg.train_count, cfg.test_count, cfg.seed)
    save_instances(os.path.join(run_dir, "data", f"{cfg.domain}_train.jsonl"), train)
    save_instances(os.path.join(run_dir, "data", f"{cfg.domain}_test.jsonl"), test)
    mark_complete(run_dir)
    return run_dir


def cmd_train_ilp(cfg: ExperimentConfig) -> str:
    from .nlm import save_model
    from .tasks import domain_spec
    from .training import TrainConfig, run_sequence

    run_dir = prepare_run_dir(cfg)
    spec = domain_spec(cfg.domain, paper_scale=cfg.paper_scale)
    train_cfg = TrainConfig(
        mode=cfg.mode,
        replay=cfg.replay == "on",
        epochs_per_task=cfg.epochs_per_task,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seeds=cfg.seed_list(),
        eval_every=cfg.eval_every,
        n_train=cfg.train_count,
        n_test=cfg.test_count,
        kb_depth=cfg.kb_depth,
        kb_breadth=cfg.ints("kb_breadth"),
        head_breadth=cfg.ints("head_breadth"),
        include_base_in_head=cfg.include_base_in_head,
        pos_weight_cap=cfg.pos_weight_cap,
    )
    log, models = run_sequence(spec, train_cfg, workers=cfg.workers)
    csv_name = f"ilp_{cfg.domain}_{cfg.mode}_replay-{cfg.replay}.csv"
    log.save(os.path.join(run_dir, "metrics", csv_name))
    for key, model in models.items():
        save_model(os.path.join(run_dir, "checkpoints", f"{cfg.domain}_{key}"), model)
    mark_complete(run_dir)
    return run_dir


def cmd_collect(cfg: ExperimentConfig) -> str:
    from .blocksworld import collect_dataset, save_buffer

    run_dir = prepare_run_dir(cfg)
    transitions = collect_dataset(
        cfg.task, n_blocks=cfg.n_blocks, n_transitions=cfg.transitions,
        epsilon=cfg.epsilon, seed=cfg.seed, max_steps=cfg.max_steps,
    )
    path = os.path.join(run_dir, "data", f"buffer_task{cfg.task}.jsonl")
    save_buffer(path, transitions, n_blocks=cfg.n_blocks)
    mark_complete(run_dir)
    return run_dir


def _rl_config(cfg: ExperimentConfig):
    from .offline_rl import RlConfig

    return RlConfig(
        n_blocks=cfg.n_blocks,
        actor_lr=cfg.actor_lr,
        critic_lr=cfg.critic_lr,
        tau=cfg.tau,
        actor_period=cfg.actor_period,
        temperature=cfg.temperature,
        gamma=cfg.gamma,
        batch_size=cfg.rl_batch_size,
        grad_steps=cfg.grad_steps,
        eval_every=cfg.rl_eval_every,
        eval_episodes=cfg.eval_episodes,
        max_steps=cfg.max_steps,
        kb_breadth=cfg.ints("rl_kb_breadth"),
        head_breadth=cfg.ints("head_breadth"),
        seeds=cfg.seed_list(),
    )


def cmd_train_rl(cfg: ExperimentConfig) -> str:
    from .blocksworld import load_buffer
    from .offline_rl import run_rl_sequence, save_rl_metrics, save_rl_model

    if not cfg.buffers_dir:
        raise ConfigError("train-rl needs --buffers pointing at collected buffers")
    run_dir = prepare_run_dir(cfg)
    rl_cfg = _rl_config(cfg)
    buffers = {}
    for t in range(rl_cfg.n_tasks):
        path = os.path.join(cfg.buffers_dir, f"buffer_task{t}.jsonl")
        if not os.path.exists(path):
            raise ConfigError(f"missing buffer file {path}")
        buffers[t], n = load_buffer(path)
        if n != rl_cfg.n_blocks:
            raise ConfigError(
                f"{path} was collected with {n} blocks, config says {rl_cfg.n_blocks}"
            )
    rows, models = run_rl_sequence(rl_cfg, buffers, cfg.mode, workers=cfg.workers)
    save_rl_metrics(os.path.join(run_dir, "metrics", f"rl_{cfg.mode}.csv"), rows)
    for key, model in models.items():
        save_rl_model(os.path.join(run_dir, "checkpoints", f"rl_{key}"), model)
    mark_complete(run_dir)
    return run_dir


def cmd_eval(cfg: ExperimentConfig) -> str:
    if not cfg.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    arch_path = cfg.checkpoint + ".arch"
    if not os.path.exists(arch_path):
        raise ConfigError(f"missing architecture descriptor {arch_path}")
    with open(arch_path, encoding="utf-8") as fh:
        entries = dict(line.strip().split("=", 1) for line in fh if line.strip())
    if entries.get("kind") == "rl":
        from .offline_rl import evaluate_policy, load_rl_model

        model = load_rl_model(cfg.checkpoint)
        mean_steps, success = evaluate_policy(model, cfg.task, cfg.episodes, cfg.seed)
        print(f"task {cfg.task}: mean_steps={_float(mean_steps)} "
              f"success_rate={_float(success)}")
    else:
        from .nlm import load_model
        from .tasks import load_instances
        from .training import evaluate_on_instances

        if not cfg.data_path:
            raise ConfigError("eval on an ILP checkpoint needs --data")
        model = load_model(cfg.checkpoint)
        instances = load_instances(cfg.data_path)
        for target, (loss, accuracy) in evaluate_on_instances(model, instances).items():
            print(f"{target}: loss={_float(loss)} accuracy={_float(accuracy)}")
    return ""


def cmd_metrics(cfg: ExperimentConfig) -> str:
    from .training import MetricsLog, transfer_metrics

    if not cfg.metrics_path:
        raise ConfigError("metrics needs --in pointing at a metrics CSV")
    log = MetricsLog()
    for path in cfg.metrics_path.split(","):
        log.extend(MetricsLog.load(path))
    out_path = os.path.join(os.path.dirname(cfg.metrics_path.split(",")[0]),
                            "transfer_metrics.csv")
    entries = transfer_metrics(log)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("domain,seed,task,forward_transfer,forgetting,backward_transfer\n")
        for e in entries:
            cells = [e["domain"], str(e["seed"]), str(e["task"])]
            for key in ("forward_transfer", "forgetting", "backward_transfer"):
                cells.append("" if e[key] is None else _float(e[key]))
            fh.write(",".join(cells) + "\n")
    print(out_path)
    return out_path


# ---------------------------------------------------------------------------
# report: summary CSVs consumed by the plotting front end


def _mean_std(values):
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def summarize_ilp_curves(log_rows, domain: str, task: int) -> list[str]:
    """epoch,mode,mean_loss,std_loss,mean_accuracy,std_accuracy,n_seeds for
    the task's own-training test curves, replay off."""
    lines = ["epoch,mode,mean_loss,std_loss,mean_accuracy,std_accuracy,n_seeds"]
    rows = [r for r in log_rows
            if r.domain == domain and r.task == task and r.training_task == task
            and r.split == "test" and r.replay == "off"]
    for mode in ("individual", "lifelong"):
        epochs = sorted({r.epoch for r in rows if r.mode == mode})
        for epoch in epochs:
            group = [r for r in rows if r.mode == mode and r.epoch == epoch]
            ml, sl = _mean_std([r.loss for r in group])
            ma, sa = _mean_std([r.accuracy for r in group])
            lines.append(f"{epoch},{mode},{ml!r},{sl!r},{ma!r},{sa!r},{len(group)}")
    return lines


def summarize_forgetting(log_rows, domain: str, task: int) -> list[str]:
    """training_task,epoch,replay,mean_loss,std_loss,n_seeds across the whole
    lifelong sequence for one evaluated task."""
    lines = ["training_task,epoch,replay,mean_loss,std_loss,n_seeds"]
    rows = [r for r in log_rows
            if r.domain == domain and r.task == task and r.split == "test"
            and r.mode == "lifelong"]
    for replay in ("off", "on"):
        keys = sorted({(r.training_task, r.epoch) for r in rows if r.replay == replay})
        for tt, epoch in keys:
            group = [r for r in rows
                     if r.replay == replay and r.training_task == tt and r.epoch == epoch]
            ml, sl = _mean_std([r.loss for r in group])
            lines.append(f"{tt},{epoch},{replay},{ml!r},{sl!r},{len(group)}")
    return lines


def summarize_rl(rl_rows, task: int) -> list[str]:
    lines = ["grad_step,mode,mean_steps,std_steps,mean_success,std_success,n_seeds"]
    rows = [r for r in rl_rows if r["task"] == task and r["training_task"] == task]
    for mode in ("individual", "lifelong"):
        steps = sorted({r["grad_step"] for r in rows if r["mode"] == mode})
        for g in steps:
            group = [r for r in rows if r["mode"] == mode and r["grad_step"] == g]
            ms, ss = _mean_std([r["mean_steps"] for r in group])
            mr, sr = _mean_std([r["success_rate"] for r in group])
            lines.append(f"{g},{mode},{ms!r},{ss!r},{mr!r},{sr!r},{len(group)}")
    return lines


def cmd_report(cfg: ExperimentConfig) -> str:
    from .offline_rl import load_rl_metrics
    from .training import MetricsLog

    if not cfg.metrics_path:
        raise ConfigError("report needs --in pointing at a metrics directory")
    in_dir = cfg.metrics_path
    ilp = MetricsLog()
    rl_rows = []
    for name in sorted(os.listdir(in_dir)):
        if not name.endswith(".csv") or name.startswith("summary_"):
            continue
        path = os.path.join(in_dir, name)
        if name.startswith("ilp_"):
            ilp.extend(MetricsLog.load(path))
        elif name.startswith("rl_"):
            rl_rows.extend(load_rl_metrics(path))
    written = []
    domains = sorted({r.domain for r in ilp.rows})
    for domain in domains:
        tasks = sorted({r.task for r in ilp.rows if r.domain == domain})
        for task in tasks:
            curves = summarize_ilp_curves(ilp.rows, domain, task)
            if len(curves) > 1:
                written.append(_write_summary(
                    in_dir, f"summary_ilp_{domain}_task{task}.csv", curves))
            forgetting = summarize_forgetting(ilp.rows, domain, task)
            if len(forgetting) > 1:
                written.append(_write_summary(
                    in_dir, f"summary_forgetting_{domain}_task{task}.csv", forgetting))
    for task in sorted({r["task"] for r in rl_rows}):
        lines = summarize_rl(rl_rows, task)
        if len(lines) > 1:
            written.append(_write_summary(in_dir, f"summary_rl_task{task}.csv", lines))
    for path in written:
        print(path)
    return in_dir


def _write_summary(directory: str, name: str, lines: list[str]) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ilp": cmd_train_ilp,
    "collect": cmd_collect,
    "train-rl": cmd_train_rl,
    "eval": cmd_eval,
    "metrics": cmd_metrics,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        cfg = parse_cli(argv if argv is not None else sys.argv[1:])
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    try:
        result = COMMANDS[cfg.command](cfg)
        if result:
            print(result)
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
