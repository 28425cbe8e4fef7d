"""Command-line entry point with the verbs expert, record, train and report.

Exit codes: 0 on success, 2 on a usage or configuration error, 3 when
training diverges. Outputs go under ``$AGAIL_OUT_DIR`` (default ``./runs``)
unless an explicit path is given.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import sys
import typing
from pathlib import Path

import numpy as np

from . import __version__
from . import demos as dm
from . import policy as pol
from . import trainer as tr
from .envs import ENVIRONMENTS, make_env
from .errors import AgailError, ConfigError, NumericalError, ParseError
from .trpo import TrpoConfig

log = logging.getLogger("agail")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
TRAIN_SECTION, TRPO_SECTION = "train", "trpo"


def output_root() -> Path:
    return Path(os.environ.get("AGAIL_OUT_DIR", "runs"))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- configuration


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _coerce(hint, raw: str):
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    if args and type(None) in typing.get_args(hint):
        if raw.strip().lower() in ("", "none", "null"):
            return None
        hint = args[0]
    if hint is bool:
        return _parse_bool(raw)
    if hint is tuple:
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if hint in (int, float, str):
        return hint(raw.strip())
    raise ValueError(f"cannot parse a value of type {hint}")


def _apply(target_cls, values: dict, where: str) -> dict:
    hints = typing.get_type_hints(target_cls)
    names = {f.name for f in dataclasses.fields(target_cls)}
    out = {}
    for key, raw in values.items():
        if key not in names or key == "trpo":
            raise ConfigError(f"unknown {where} key {key!r}")
        try:
            out[key] = _coerce(hints[key], raw)
        except ValueError as exc:
            raise ConfigError(f"{where}.{key}: {exc}") from None
    return out


def load_config(path=None, overrides: dict | None = None) -> tr.TrainConfig:
    """Build a TrainConfig from an optional INI-style file plus ``key -> string`` overrides.

    Keys under ``[train]`` map to TrainConfig fields, keys under ``[trpo]`` to
    TrpoConfig fields. Override keys may be written ``trpo.<field>``. Overrides win.
    """
    train_vals, trpo_vals = {}, {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except configparser.Error as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        for section in parser.sections():
            if section == TRAIN_SECTION:
                train_vals.update(parser[section])
            elif section == TRPO_SECTION:
                trpo_vals.update(parser[section])
            else:
                raise ConfigError(f"unknown config section [{section}] in {path}")
    for key, raw in (overrides or {}).items():
        if key.startswith(TRPO_SECTION + "."):
            trpo_vals[key[len(TRPO_SECTION) + 1:]] = raw
        else:
            train_vals[key] = raw
    kwargs = _apply(tr.TrainConfig, train_vals, TRAIN_SECTION)
    try:
        trpo = TrpoConfig(**_apply(TrpoConfig, trpo_vals, TRPO_SECTION))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return tr.TrainConfig(trpo=trpo, **kwargs)


def _pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


@dataclasses.dataclass
class RunManifest:
    config: dict
    demo_digest: str | None
    code_version: str
    outputs: dict

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)
                              + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**data)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ParseError(f"bad manifest: {exc}", path=path) from None


def _manifest(cfg: tr.TrainConfig, out_dir: Path, files: dict) -> RunManifest:
    digest = file_digest(cfg.demos) if cfg.demos else None
    outputs = {str(cfg.seed): {k: str(out_dir / v) for k, v in files.items()}}
    return RunManifest(dataclasses.asdict(cfg), digest, __version__, outputs)


def _write_run(cfg, result, out_dir: Path, checkpoint_name: str) -> None:
    tr.write_metrics(result.metrics, out_dir / "metrics.csv")
    (out_dir / checkpoint_name).write_text(
        pol.dump_policy(result.policy, f"algo={cfg.algorithm} seed={cfg.seed}"), encoding="utf-8")


# ---------------------------------------------------------------- verbs


def cmd_expert(args) -> int:
    if args.env not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {args.env!r}; choose from {sorted(ENVIRONMENTS)}")
    out = Path(args.out) if args.out else output_root() / "experts" / f"{args.env}-seed{args.seed}"
    out.mkdir(parents=True, exist_ok=True)
    cfg = tr.TrainConfig(algorithm="trpo", env=args.env, iterations=args.iters, seed=args.seed,
                         out_dir=str(out))
    files = {"metrics": "metrics.csv", "checkpoint": "expert.ckpt"}
    _manifest(cfg, out, files).write(out / "manifest.json")
    result = tr.train(cfg)
    _write_run(cfg, result, out, files["checkpoint"])
    mean, std = tr.evaluate(result.policy, make_env(args.env), args.eval_episodes,
                            seed=args.seed + 10_000)
    print(f"expert {args.env} seed {args.seed}: evaluate {mean:.2f} +/- {std:.2f} "
          f"over {args.eval_episodes} episodes")
    print(f"checkpoint {out / files['checkpoint']}")
    return EXIT_OK


def cmd_record(args) -> int:
    if not 0.0 <= args.eta <= 1.0:
        raise ConfigError(f"--eta must lie in [0, 1], got {args.eta}")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    text = path.read_text(encoding="utf-8")
    env_name = args.env or pol.checkpoint_env(text)
    env = make_env(env_name)
    policy = pol.parse_policy(text, env.spec)
    mask_seed = args.seed if args.mask_seed is None else args.mask_seed
    trajs = dm.record(policy, env, args.episodes, seed=args.seed)
    demoset = dm.mask(trajs, args.eta, mask_seed, env=env_name, discrete=env.spec.discrete)
    out = Path(args.out) if args.out else (output_root() / "demos"
                                           / f"{env_name}-eta{args.eta:g}-seed{args.seed}.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    dm.save(demoset, out)
    mean = float(np.mean([t.total_reward for t in trajs])) if trajs else float("nan")
    print(f"recorded {len(trajs)} episodes (mean return {mean:.2f}), kept "
          f"{demoset.n_actions}/{demoset.n_states} actions -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = _pairs(args.set)
    for flag, key in (("algo", "algorithm"), ("env", "env"), ("eta", "eta"), ("seed", "seed"),
                      ("iters", "iterations"), ("demos", "demos")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = str(value)
    cfg = load_config(args.config, overrides)
    if cfg.env not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {cfg.env!r}; choose from {sorted(ENVIRONMENTS)}")
    if cfg.algorithm != "trpo":
        if not cfg.demos:
            raise ConfigError(f"algorithm {cfg.algorithm!r} needs --demos")
        if not Path(cfg.demos).is_file():
            raise ConfigError(f"demonstration file {cfg.demos} does not exist")
    out = Path(args.out) if args.out else (output_root() / f"{cfg.algorithm}-{cfg.env}-eta{cfg.eta:g}"
                                           / f"seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(cfg, out_dir=str(out))
    files = {"metrics": "metrics.csv", "checkpoint": "final.ckpt"}
    _manifest(cfg, out, files).write(out / "manifest.json")
    log.info("training %s on %s (eta=%g, seed=%d) -> %s", cfg.algorithm, cfg.env, cfg.eta,
             cfg.seed, out)
    result = tr.train(cfg)
    _write_run(cfg, result, out, files["checkpoint"])
    last = result.metrics[-1] if result.metrics else None
    summary = f"final rollout return {last.true_return:.2f}" if last else "no iterations"
    print(f"{cfg.algorithm} {cfg.env} eta={cfg.eta:g} seed={cfg.seed}: {summary} -> {out}")
    return EXIT_OK


def _run_info(metrics_path: Path):
    manifest = metrics_path.parent / "manifest.json"
    if not manifest.is_file():
        return None, None
    cfg = RunManifest.read(manifest).config
    return cfg.get("env"), cfg.get("algorithm")


def summarize(paths, tail: int = 10):
    """Per-file final returns plus per-iteration cross-seed mean/std.

    The final return of a run is the mean true return over its last ``tail``
    iterations. Standard deviations are population (ddof 0), so one file gives 0.
    """
    runs = [tr.read_metrics(p) for p in paths]
    finals = []
    for p, run in zip(paths, runs):
        if not run:
            raise ConfigError(f"{p} has no iterations")
        finals.append(float(np.mean([m.true_return for m in run[-tail:]])))
    length = max(len(r) for r in runs)
    rows = []
    for i in range(length):
        vals = np.array([r[i].true_return for r in runs if i < len(r)])
        rows.append((i, float(vals.mean()), float(vals.std()), len(vals)))
    return finals, rows


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.metrics]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"metrics file {p} does not exist")
    infos = [_run_info(p) for p in paths]
    envs = {env for env, _ in infos if env is not None}
    if len(envs) > 1:
        detail = ", ".join(f"{p}: {env}" for p, (env, _) in zip(paths, infos))
        raise ConfigError(f"metrics files come from different environments ({detail})")
    algos = sorted({a for _, a in infos if a is not None})
    finals, rows = summarize(paths, args.tail)
    mean, std = tr.aggregate_seeds(finals)
    width = max(len(str(p)) for p in paths)
    lines = [f"{'run':<{width}}  final_return"]
    lines += [f"{str(p):<{width}}  {f:.2f}" for p, f in zip(paths, finals)]
    label = " ".join(["/".join(algos) or "?", next(iter(envs), "?")])
    lines.append(f"{label}: {mean:.2f} +/- {std:.2f} ({len(finals)} runs, last {args.tail} iters)")
    print("\n".join(lines))
    plot = Path(args.plot) if args.plot else output_root() / "report" / "plot.csv"
    plot.parent.mkdir(parents=True, exist_ok=True)
    with open(plot, "w", encoding="utf-8") as fh:
        fh.write("iter,mean_return,std_return,n_runs\n")
        for i, m, s, n in rows:
            fh.write(f"{i},{m!r},{s!r},{n}\n")
    print(f"plot data -> {plot}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agail", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("expert", help="train a TRPO expert on the true reward")
    e.add_argument("--env", required=True)
    e.add_argument("--iters", type=int, default=300)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="output directory")
    e.add_argument("--eval-episodes", type=int, default=100)
    e.set_defaults(func=cmd_expert)

    r = sub.add_parser("record", help="roll out an expert and mask its actions")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--env", help="defaults to the environment named in the checkpoint")
    r.add_argument("--episodes", type=int, default=25)
    r.add_argument("--eta", type=float, required=True, help="fraction of actions to mask")
    r.add_argument("--seed", type=int, default=0, help="rollout seed")
    r.add_argument("--mask-seed", type=int, help="masking seed (defaults to --seed)")
    r.add_argument("--out", help="demonstration file to write")
    r.set_defaults(func=cmd_record)

    t = sub.add_parser("train", help="run one training job")
    t.add_argument("--config", help="INI-style file with [train] and [trpo] sections")
    t.add_argument("--algo", choices=tr.ALGORITHMS)
    t.add_argument("--env")
    t.add_argument("--eta", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--demos")
    t.add_argument("--out", help="run directory")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (trpo.<key> for the trust-region step)")
    t.set_defaults(func=cmd_train)

    rep = sub.add_parser("report", help="aggregate metrics CSVs across seeds")
    rep.add_argument("metrics", nargs="+")
    rep.add_argument("--tail", type=int, default=10, help="iterations averaged per run")
    rep.add_argument("--plot", help="plot-data CSV to write")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"agail: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (AgailError, OSError) as exc:
        print(f"agail: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
