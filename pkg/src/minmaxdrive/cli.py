"""Command-line entry point.

Commands: gen-corpus, train, eval, verify-theory, plot-data.  Configuration
resolves defaults, then ``--config file.json``, then ``MINMAXDRIVE_<KEY>``
environment variables (nested keys joined by ``__``), then ``--set key=value``
overrides, then dedicated flags.  Unknown keys are rejected.  Exit codes:
0 success, 1 usage or input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
ENV_PREFIX = "MINMAXDRIVE_"
CONFIG_FILE = "config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- configuration --------------------------------------------------------------

def _defaults(command: str) -> dict:
    from .game import TrainConfig
    from .sim import TEMPLATES

    if command == "gen-corpus":
        return {"out": "corpus", "seed": 0, "count": 100, "templates": list(TEMPLATES), "horizon": 90}
    if command == "train":
        return {"corpus": "corpus", "eval_corpus": None, "out": "run", "train": TrainConfig().to_dict()}
    if command == "eval":
        return {"corpus": "eval_corpus", "out": "eval", "policies": {}, "modes": ["replay", "energy-sample"],
                "episodes": 100, "seed": 0, "bound_episodes": 100, "bound_policy": None,
                "sampler": TrainConfig().to_dict()["sampler"], "proxy": TrainConfig().to_dict()["proxy"]}
    if command == "verify-theory":
        return {"out": "theory", "seed": 0, "n_contraction": 1000, "n_pairs": 10000, "n_value_diff": 500,
                "n_bounds": 200, "n_saddle": 50, "fault": None}
    if command == "plot-data":
        return {"run": "run", "out": None, "buckets": 5, "bins": 20}
    raise UsageError(f"unknown command {command}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, path: list, value, source: str):
    node = cfg
    for i, key in enumerate(path):
        if not isinstance(node, dict) or key not in node:
            raise UsageError(f"unknown config key {'.'.join(path[:i + 1])!r} (from {source})")
        if i == len(path) - 1:
            node[key] = value
        else:
            node = node[key]


def _merge(cfg: dict, overrides: dict, source: str, prefix=()):
    for key, value in overrides.items():
        path = list(prefix) + [key]
        node = cfg
        for k in path[:-1]:
            node = node[k]
        if key not in node:
            raise UsageError(f"unknown config key {'.'.join(path)!r} (from {source})")
        if isinstance(node[key], dict) and isinstance(value, dict) and path != ["policies"]:
            _merge(cfg, value, source, path)
        else:
            node[key] = value


def resolve_config(command: str, config_file=None, sets=(), env=None) -> dict:
    cfg = _defaults(command)
    if config_file:
        try:
            data = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_file}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {config_file} must hold a JSON object")
        _merge(cfg, data, config_file)
    env = os.environ if env is None else env
    for name in sorted(env):
        if name.startswith(ENV_PREFIX) and name != ENV_PREFIX + "PURE":
            path = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
            _set_path(cfg, path, _parse_value(env[name]), name)
    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_path(cfg, key.split("."), _parse_value(value), "--set")
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the resolved config, excluding the output location."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _prepare_out(out: Path, force: bool, cfg: dict, resume: bool = False) -> None:
    digest = config_hash(cfg)
    if out.exists() and any(out.iterdir()):
        marker = out / CONFIG_FILE
        if resume:
            if not marker.exists() or json.loads(marker.read_text()).get("hash") != digest:
                raise UsageError(f"{out}: resume needs a matching config hash")
            return
        if not force:
            raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
        if not marker.exists():
            raise UsageError(f"{out} was not written by this tool; refusing to remove it")
        shutil.rmtree(out)
    elif resume:
        raise UsageError(f"{out}: nothing to resume")
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(json.dumps({"config": cfg, "hash": digest}, indent=2, sort_keys=True) + "\n")


def _load_corpus(path):
    from .sim import load_corpus

    try:
        corpus = load_corpus(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load corpus {path}: {exc}") from None
    if not corpus:
        raise UsageError(f"corpus {path} is empty")
    return corpus


# -- commands --------------------------------------------------------------------

def cmd_gen_corpus(cfg: dict, args) -> int:
    from .sim import TEMPLATES, make_synthetic_scenarios, save_corpus

    bad = [t for t in cfg["templates"] if t not in TEMPLATES]
    if bad:
        raise UsageError(f"invalid template(s) {bad}; choose from {list(TEMPLATES)}")
    if int(cfg["count"]) < 1:
        raise UsageError("count must be positive")
    out = Path(cfg["out"])
    _prepare_out(out, args.force, cfg)
    scenarios = make_synthetic_scenarios(int(cfg["seed"]), int(cfg["count"]), tuple(cfg["templates"]),
                                         int(cfg["horizon"]))
    save_corpus(scenarios, out)
    print(f"wrote {len(scenarios)} scenarios to {out}")
    return EXIT_OK


def cmd_train(cfg: dict, args) -> int:
    from .game import TrainConfig, TrainingDiverged, config_from_dict, train

    try:
        tcfg = config_from_dict(TrainConfig, cfg["train"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from None
    corpus = _load_corpus(cfg["corpus"])
    eval_corpus = _load_corpus(cfg["eval_corpus"]) if cfg["eval_corpus"] else None
    out = Path(cfg["out"])
    _prepare_out(out, args.force, cfg, resume=args.resume)
    (out / "train_ids.json").write_text(json.dumps(sorted(s.id for s in corpus)) + "\n")
    try:
        res = train(tcfg, corpus, out, resume=args.resume, eval_corpus=eval_corpus)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    st = res["state"]
    print(f"trained {st.timesteps} steps, {st.ego_updates} ego updates, {st.ipl_rounds} IPL rounds -> {out}")
    return EXIT_OK


def _policy_from_spec(spec: str):
    from .game.train import load_policy
    from .sim import ReplayPolicy

    if spec == "replay":
        return ReplayPolicy(), None
    path = Path(spec)
    try:
        theta = load_policy(path)
    except Exception as exc:
        raise UsageError(f"cannot load policy {spec}: {exc}") from None
    ids_file = path / "train_ids.json"
    ids = set(json.loads(ids_file.read_text())) if ids_file.exists() else set()
    return theta, ids


def cmd_eval(cfg: dict, args) -> int:
    from .adversary import ProxyConfig, SamplerConfig
    from .game import ADVERSARY_MODES, bound_report, config_from_dict, evaluate_cross
    from .game.evaluate import CSV_COLUMNS
    from .game.train import load_generator
    from .generator import Generator

    if not cfg["policies"]:
        raise UsageError("no policies given; use --policy name=RUN_DIR or name=replay")
    bad = [m for m in cfg["modes"] if m not in ADVERSARY_MODES]
    if bad:
        raise UsageError(f"unknown adversary modes {bad}; choose from {list(ADVERSARY_MODES)}")
    corpus = _load_corpus(cfg["corpus"])
    eval_ids = {s.id for s in corpus}
    policies, gens = {}, {}
    for name, spec in cfg["policies"].items():
        pol, train_ids = _policy_from_spec(spec)
        if train_ids and train_ids & eval_ids:
            raise UsageError(f"policy {name}: {len(train_ids & eval_ids)} eval scenarios overlap its training corpus")
        policies[name] = pol
        if spec != "replay":
            gens[name] = load_generator(Path(spec))
    sampler = config_from_dict(SamplerConfig, cfg["sampler"])
    proxy = config_from_dict(ProxyConfig, cfg["proxy"])
    bound_name = cfg["bound_policy"] or next(iter(gens), None)
    gen = gens.get(bound_name) if bound_name else None
    out = Path(cfg["out"])
    _prepare_out(out, args.force, cfg)
    rows = evaluate_cross(policies, cfg["modes"], corpus, int(cfg["episodes"]), gen or Generator(),
                          int(cfg["seed"]), sampler, proxy, jobs=args.jobs)
    with open(out / "matrix.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in CSV_COLUMNS})
    report = {"config_hash": config_hash(cfg), "policy": bound_name}
    if gen is not None:
        br = bound_report(policies[bound_name], gen, corpus, int(cfg["bound_episodes"]), int(cfg["seed"]))
        report.update(br.to_dict())
    (out / "bound.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} cells to {out / 'matrix.csv'}")
    if gen is not None and not report["holds"]:
        print("bound monitor: measured replay return is below the certified bound", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify_theory(cfg: dict, args) -> int:
    from . import theory

    faults = {None: None, "expansive": theory.faulty_operator}
    if cfg["fault"] not in faults:
        raise UsageError(f"unknown fault {cfg['fault']!r}; choose from {[k for k in faults if k]}")
    out = Path(cfg["out"])
    _prepare_out(out, args.force, cfg)
    report = theory.verify_all(int(cfg["seed"]), int(cfg["n_contraction"]), int(cfg["n_pairs"]),
                               int(cfg["n_value_diff"]), int(cfg["n_bounds"]), int(cfg["n_saddle"]),
                               operator=faults[cfg["fault"]])
    report["config_hash"] = config_hash(cfg)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name, r in report.items():
        if isinstance(r, dict):
            print(f"{'PASS' if r['passed'] else 'FAIL'} {name}: worst={r['worst']:.3e} n={r['n']}")
    return EXIT_OK if report["all_passed"] else EXIT_NUMERIC


def _histogram_rows(samples_by_step, buckets: int, bins: int, value_key: str) -> list:
    pts = [(s, v) for s, vals in samples_by_step for v in vals]
    if not pts:
        return []
    steps = np.array([p[0] for p in pts], dtype=np.float64)
    vals = np.array([p[1] for p in pts], dtype=np.float64)
    edges = np.linspace(vals.min(), vals.max() + 1e-12, bins + 1)
    s_edges = np.linspace(steps.min(), steps.max() + 1, buckets + 1)
    rows = []
    for b in range(buckets):
        m = (steps >= s_edges[b]) & (steps < s_edges[b + 1])
        if not m.any():
            continue
        counts, _ = np.histogram(vals[m], edges)
        centers = 0.5 * (edges[:-1] + edges[1:])
        for c, n in zip(centers, counts):
            rows.append({"step_bucket": int(s_edges[b]), value_key: float(c), "weight": float(n) / m.sum()})
    return rows


def _write_csv(path: Path, rows: list, columns):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def cmd_plot_data(cfg: dict, args) -> int:
    run = Path(cfg["run"])
    metrics = run / "metrics.jsonl"
    if not metrics.exists() or not metrics.read_text().strip():
        raise UsageError(f"no metrics found in {run} (expected {metrics})")
    records = [json.loads(line) for line in metrics.read_text().splitlines() if line.strip()]
    out = Path(cfg["out"]) if cfg["out"] else run / "plot_data"
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    ego = [r for r in records if r["type"] == "ego_update"]
    ipl = [r for r in records if r["type"] == "ipl_round"]
    budget = [r for r in records if r["type"] == "budget"]
    _write_csv(out / "curves.csv", ego, ["step", "update", "mean_return", "crash_rate", "route_completion", "cost",
                                         "replay_probability", "attacks", "loss"])
    _write_csv(out / "ipl.csv", ipl, ["step", "round", "pairs", "mean_loss", "utility_before", "utility_after",
                                      "kl_before", "kl_after", "learning_rate"])
    b, k = int(cfg["buckets"]), int(cfg["bins"])
    _write_csv(out / "loglik_hist.csv", _histogram_rows([(r["step"], r["sampled_logliks"]) for r in ego], b, k,
                                                        "loglik"), ["step_bucket", "loglik", "weight"])
    _write_csv(out / "j_hat_hist.csv", _histogram_rows([(r["step"], r["chosen_j"]) for r in ego], b, k, "j_hat"),
               ["step_bucket", "j_hat", "weight"])
    _write_csv(out / "gap.csv", budget, ["step", "update", "train_return", "eval_return", "gap"])
    src = run / CONFIG_FILE
    digest = json.loads(src.read_text()).get("hash") if src.exists() else None
    (out / "source.json").write_text(json.dumps({"run": str(run), "config_hash": digest}, sort_keys=True) + "\n")
    print(f"wrote plot data to {out}")
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify-theory": cmd_verify_theory,
    "plot-data": cmd_plot_data,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="minmaxdrive", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        s.add_argument("--force", action="store_true", help="overwrite existing outputs")
        s.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        if name == "gen-corpus":
            s.add_argument("--count", type=int)
            s.add_argument("--templates", help="comma-separated template names")
        if name in ("train", "eval"):
            s.add_argument("--corpus")
        if name == "train":
            s.add_argument("--algo", choices=["grpo", "ppo"])
            s.add_argument("--ipl", choices=["on", "off"])
            s.add_argument("--eval-corpus")
            s.add_argument("--timesteps", type=int)
            s.add_argument("--resume", action="store_true")
        if name == "eval":
            s.add_argument("--policy", action="append", default=[], metavar="NAME=RUN_DIR",
                           help="policy to evaluate; RUN_DIR may be 'replay'")
            s.add_argument("--modes", help="comma-separated adversary modes")
            s.add_argument("--episodes", type=int)
        if name == "verify-theory":
            s.add_argument("--fault", help=argparse.SUPPRESS)
        if name == "plot-data":
            s.add_argument("--run")
    return p


def _apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    g = lambda k: getattr(args, k, None)  # noqa: E731
    if g("out"):
        cfg["out"] = args.out
    if g("seed") is not None:
        if args.command == "train":
            cfg["train"]["seed"] = args.seed
        elif args.command != "plot-data":
            cfg["seed"] = args.seed
    if g("count") is not None:
        cfg["count"] = args.count
    if g("templates"):
        cfg["templates"] = [t for t in args.templates.split(",") if t]
    if g("corpus"):
        cfg["corpus"] = args.corpus
    if g("eval_corpus"):
        cfg["eval_corpus"] = args.eval_corpus
    if g("algo"):
        cfg["train"]["algorithm"] = args.algo
    if g("ipl"):
        cfg["train"]["ipl"] = args.ipl == "on"
    if g("timesteps") is not None:
        cfg["train"]["total_timesteps"] = args.timesteps
    if g("policy"):
        for item in args.policy:
            if "=" not in item:
                raise UsageError(f"--policy expects NAME=RUN_DIR, got {item!r}")
            name, path = item.split("=", 1)
            cfg["policies"][name] = path
    if g("modes"):
        cfg["modes"] = [m for m in args.modes.split(",") if m]
    if g("episodes") is not None:
        cfg["episodes"] = args.episodes
    if g("fault"):
        cfg["fault"] = args.fault
    if g("run"):
        cfg["run"] = args.run
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = _apply_flags(resolve_config(args.command, args.config, args.set), args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"minmaxdrive {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
