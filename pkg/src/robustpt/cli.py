"""Command-line entry point: train / eval / verify-bounds / perturb-demo."""

from __future__ import annotations

import argparse
import io
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds
from . import config as cfgmod
from . import numkit as nk
from .envs import IMAGE_CHANNELS, PerturbationSpec, perturb_observation, render_image, write_pgm
from .errors import ConfigError, ContractError, DomainError, NumericalAbort
from .policy import load_params
from .trainer import behavior_clone, evaluate, expert_dataset, fit_linear_policy, initial_params, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BOUND = 3
EXIT_ABORT = 4

EVAL_HEADER = "scenario,success_rate,mean_return"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustpt", description="Robust online post-training toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "verify-bounds", "perturb-demo"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with flat dotted keys (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help="override the configured output directory")
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(cfg: dict, out: Path) -> int:
    tc = cfgmod.train_config(cfg)
    env = tc.build_env()
    params = None
    if cfg["train.bc_contexts"] > 0 and not tc.init_checkpoint:
        try:
            X, Y = expert_dataset(env, cfg["train.bc_contexts"], tc.seed)
        except ContractError as exc:
            raise ConfigError("train.bc_contexts", str(exc)) from None
        if not tc.hidden:
            params = fit_linear_policy(X, Y, log_std=tc.init_log_std)
        else:
            params = behavior_clone(initial_params(tc, env), X, Y, cfg["train.bc_steps"], cfg["train.bc_lr"])
    result = train(tc, params)
    last = result.metrics[-1]
    print(f"trained {len(result.metrics)} iterations; last success rate {last.success_rate:.3f}, mean return {last.mean_return:.4f}")
    return EXIT_OK


def eval_grid(env_kind: str, cfg: dict) -> list[tuple[str, PerturbationSpec]]:
    eps = cfg["eval.eps_obs"]
    joint = cfg["eval.joint_sigma"]
    grid = [("clean", PerturbationSpec())]
    if env_kind == "point-image":
        grid += [(ch, PerturbationSpec(ch, eps)) for ch in IMAGE_CHANNELS]
        joint_spec = ("rotation+action", PerturbationSpec("rotation", eps, joint))
    else:
        grid += [("vector-ball", PerturbationSpec("vector-ball", eps))]
        joint_spec = ("vector-ball+action", PerturbationSpec("vector-ball", eps, joint))
    grid += [(f"action-{s:g}", PerturbationSpec("none", 0.0, s)) for s in cfg["eval.sigmas"]]
    grid.append(joint_spec)
    return grid


def cmd_eval(cfg: dict, out: Path) -> int:
    ckpt = cfg["eval.checkpoint"]
    if not ckpt:
        raise ConfigError("eval.checkpoint", "a checkpoint path is required")
    try:
        params = load_params(ckpt)
    except (OSError, ContractError) as exc:
        raise ConfigError("eval.checkpoint", str(exc)) from None
    if cfg["eval.episodes"] < 1:
        raise ConfigError("eval.episodes", "must be >= 1")
    # the training channel plays no part in evaluation
    tc = cfgmod.train_config({**cfg, "perturb.channel": "none"})
    env = tc.build_env()
    if params.obs_dim != env.obs_dim or params.action_dim != env.action_dim:
        raise ConfigError("eval.checkpoint", "checkpoint does not match the environment dimensions")
    try:
        grid = eval_grid(tc.env_kind, cfg)
    except (ContractError, DomainError) as exc:
        raise ConfigError("eval.sigmas", str(exc)) from None
    buf = io.StringIO()
    buf.write(EVAL_HEADER + "\n")
    for name, spec in grid:
        sr, ret = evaluate(params, env, cfg["eval.episodes"], spec, nk.rng_stream(tc.seed, ["eval-grid", name]))
        buf.write(f"{name},{sr:.9g},{ret:.9g}\n")
    _atomic_write(out / "eval.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_verify(cfg: dict, out: Path) -> int:
    suite = cfgmod.bounds_suite(cfg)
    try:
        res = bounds.verify(suite, cfg["seed"])
    except (DomainError, ContractError) as exc:
        raise ConfigError("bounds.suite", str(exc)) from None
    _atomic_write(out / "bounds.csv", bounds.reports_csv(res.reports))
    lines = [f"audit {a.scenario}: {a.violations} violations over {a.steps_checked} steps" for a in res.audits]
    lines += [f"sweep {s.scenario} [{s.kind}]: {'pass' if s.passed else 'FAIL'} ({s.detail})" for s in res.sweeps]
    _atomic_write(out / "bounds_checks.txt", "\n".join(lines) + "\n")
    n_ok = sum(r.satisfied for r in res.reports)
    print(f"{n_ok}/{len(res.reports)} bound reports satisfied")
    for line in lines:
        print(line)
    return EXIT_OK if res.all_satisfied else EXIT_BOUND


def cmd_demo(cfg: dict, out: Path) -> int:
    G = cfg["demo.G"]
    try:
        clean = render_image(cfg["demo.position"], cfg["demo.goal"], G)
    except (ContractError, DomainError, ValueError) as exc:
        raise ConfigError("demo.position", str(exc)) from None
    write_pgm(out / "clean.pgm", clean)
    for ch in cfg["demo.channels"]:
        if ch not in IMAGE_CHANNELS:
            raise ConfigError("demo.channels", f"unknown image channel {ch!r}")
        for level in cfg["demo.levels"]:
            if not isinstance(level, (int, float)) or not 0 <= level <= 1:
                raise ConfigError("demo.levels", "levels must lie in [0, 1]")
            millis = int(round(level * 1000))
            rng = nk.rng_stream(cfg["seed"], ["demo", ch, millis])
            img = perturb_observation(clean, PerturbationSpec(ch, float(level)), rng)
            write_pgm(out / f"{ch}_{millis:04d}.pgm", img)
    print(f"wrote {1 + len(cfg['demo.channels']) * len(cfg['demo.levels'])} images to {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "verify-bounds": cmd_verify, "perturb-demo": cmd_demo}


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = cfgmod.load(args.config) if args.config else {}
        cfg = cfgmod.resolve(raw, seed=args.seed, out=args.out)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "config.resolved.json", cfgmod.dumps(cfg))
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        where = f" (state dumped to {exc.dump_path})" if exc.dump_path else ""
        print(f"numerical abort: {exc}{where}", file=sys.stderr)
        return EXIT_ABORT


def main() -> None:
    sys.exit(run())


__all__ = ["run", "main", "eval_grid"]
