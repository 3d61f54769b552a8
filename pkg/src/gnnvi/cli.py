"""Command line entry point: generate, train, evaluate, gradcheck.

Every command is driven by one JSON experiment config::

    {"version": 1, "seed": 0,
     "generate": [{"spec": {...}, "count": 10, "split": "train"}],
     "train": {...TrainConfig fields...},
     "evaluate": {"suite": [{"spec": {...}, "count": 100}], "variants": [...]}}

Sections a command does not use are ignored; unknown keys anywhere are an
error. Exit codes: 0 ok, 2 config error, 3 training divergence, 4 checkpoint
mismatch, 5 generation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import evaluation, graphgen, mdp as mdp_io, nn, training, vi
from .executor import VARIANTS, CheckpointError, MpnnConfig, MpnnParams, build_action_graphs
from .executor import backward as mpnn_backward
from .executor import forward as mpnn_forward
from .seeds import derive_seed

CONFIG_VERSION = 1
PRESETS = ("table1", "table2", "figure2")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_CHECKPOINT = 4
EXIT_GENERATION = 5

# the oracle stand-in runs far past the executor tolerance so its error is negligible
SELFTEST_TOL = 1e-10
SELFTEST_MAX_STEPS = 10_000


class ConfigError(ValueError):
    pass


def _reject_unknown(d: dict, allowed: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class GenerateEntry:
    spec: graphgen.GenSpec
    count: int
    split: str = "train"

    @classmethod
    def from_dict(cls, d: dict) -> "GenerateEntry":
        _reject_unknown(d, {"spec", "count", "split"}, "generate entry")
        split = d.get("split", "train")
        if split not in ("train", "val", "test"):
            raise ConfigError(f"generate entry: split must be train/val/test, got {split!r}")
        count = int(d["count"])
        if count < 1:
            raise ConfigError("generate entry: count must be positive")
        return cls(graphgen.GenSpec.from_dict(d["spec"]), count, split)


@dataclass
class EvalConfig:
    suite: list[evaluation.SuiteEntry] = field(default_factory=list)
    tolerance: float = evaluation.ROLLOUT_TOL
    max_steps: int = evaluation.MAX_STEPS
    variants: list[str] | None = None
    layout: str = "family"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        _reject_unknown(d, {"suite", "tolerance", "max_steps", "variants", "layout"}, "evaluate")
        variants = d.get("variants")
        if variants is not None:
            bad = [v for v in variants if v not in VARIANTS]
            if bad:
                raise ConfigError(f"evaluate: unknown variants {bad}")
        layout = d.get("layout", "family")
        if layout not in ("family", "variant"):
            raise ConfigError("evaluate: layout must be 'family' or 'variant'")
        out = cls(
            [evaluation.SuiteEntry.from_dict(e) for e in d.get("suite", [])],
            float(d.get("tolerance", evaluation.ROLLOUT_TOL)),
            int(d.get("max_steps", evaluation.MAX_STEPS)),
            list(variants) if variants is not None else None,
            layout,
        )
        if out.tolerance <= 0 or out.max_steps < 1:
            raise ConfigError("evaluate: tolerance must be positive and max_steps >= 1")
        return out


@dataclass
class ExperimentConfig:
    seed: int
    generate: list[GenerateEntry] = field(default_factory=list)
    train: dict | None = None
    evaluate: EvalConfig | None = None
    version: int = CONFIG_VERSION

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _reject_unknown(d, {"version", "seed", "generate", "train", "evaluate"}, "config")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config: unsupported version {d.get('version')!r}, expected {CONFIG_VERSION}")
        if "seed" not in d:
            raise ConfigError("config: 'seed' is mandatory")
        seed = d["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("config: seed must be a non-negative integer")
        train = d.get("train")
        if train is not None:
            _reject_unknown(train, set(training.TrainConfig.__dataclass_fields__) - {"seed"}, "train")
        cfg = cls(
            seed=seed,
            generate=[GenerateEntry.from_dict(e) for e in d.get("generate", [])],
            train=train,
            evaluate=EvalConfig.from_dict(d["evaluate"]) if "evaluate" in d else None,
        )
        if train is not None:
            cfg.train_config()  # surface bad values at parse time
        return cfg

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig.from_dict({**(self.train or {}), "seed": self.seed})


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc!s}") from None


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {list(PRESETS)}")
    return resources.files("gnnvi").joinpath("presets", f"{name}.json").read_text(encoding="utf-8")


def load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("pass either --config or --preset, not both")
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = parse_config(text, str(path))
    elif args.preset:
        cfg = parse_config(preset_text(args.preset), f"preset:{args.preset}")
    else:
        raise ConfigError("a --config or --preset is required")
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


# -- commands --------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path, dump_trajectories: bool = False) -> dict:
    """Write one JSON file per MDP plus ``manifest.json``; returns the manifest."""
    files = []
    for entry in cfg.generate:
        spec = entry.spec
        for i in range(entry.count):
            # same stream as make_dataset, so a generated train split is the training set
            seed = derive_seed(cfg.seed, entry.split, i, spec.tag)
            m = graphgen.generate(spec, np.random.default_rng(seed))
            name = f"{entry.split}/{spec.family}_{spec.num_states}x{spec.num_actions}_{i:04d}.json"
            path = out / name
            _write(path, mdp_io.dumps(m))
            rec = {
                "file": name,
                "family": spec.family,
                "spec": spec.to_dict(),
                "split": entry.split,
                "index": i,
                "seed": seed,
                "num_states": m.num_states,
                "sha256": sha256_file(path),
            }
            if dump_trajectories:
                traj = vi.solve(m)
                tname = name[: -len(".json")] + ".trajectory.json"
                _write(out / tname, json.dumps({"steps": [s.tolist() for s in traj.steps]}) + "\n")
                rec["trajectory"] = tname
            files.append(rec)
    manifest = {"version": CONFIG_VERSION, "seed": cfg.seed, "files": files}
    _write(out / "manifest.json", _dump_json(manifest))
    return manifest


def load_dataset(directory: Path, split: str = "train") -> list[mdp_io.Mdp]:
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    out = []
    for rec in manifest["files"]:
        if rec["split"] != split:
            continue
        path = directory / rec["file"]
        if sha256_file(path) != rec["sha256"]:
            raise ConfigError(f"{path}: hash does not match manifest")
        out.append(mdp_io.load(path))
    if not out:
        raise ConfigError(f"{directory}: no {split!r} MDPs in manifest")
    return out


def cmd_train(cfg: ExperimentConfig, out: Path, data: Path | None = None, verbose: bool = True) -> MpnnParams:
    tc = cfg.train_config()
    dataset = None
    if data is not None:
        dataset = training.samples_from_mdps(load_dataset(data), tc.steps_per_mdp)

    def on_checkpoint(epoch, params):
        params.save(out / f"checkpoint_epoch{epoch:03d}.json")

    out.mkdir(parents=True, exist_ok=True)
    _write(out / "train_config.json", _dump_json(tc.to_dict()))
    params, log = training.train(tc, dataset, on_checkpoint, verbose=verbose)
    params.save(out / "checkpoint.json")
    training.save_log(log, out / "train_log.csv")
    return params


def _missing_rows(suite, variant: str) -> list[evaluation.MetricsRow]:
    nan = float("nan")
    return [
        evaluation.MetricsRow(e.spec.family, e.spec.num_states, e.spec.num_actions, variant,
                              nan, nan, 0, 0, -1, error="missing checkpoint")
        for e in suite
    ]


def cmd_evaluate(
    cfg: ExperimentConfig,
    checkpoints: list[Path],
    out: Path,
    oracle_selftest: bool = False,
    workers: int = 1,
) -> evaluation.MetricsTable:
    ev = cfg.evaluate
    if ev is None:
        raise ConfigError("config has no 'evaluate' section")
    table = evaluation.MetricsTable()
    if oracle_selftest:
        table = evaluation.evaluate_suite(
            None, ev.suite, SELFTEST_TOL, SELFTEST_MAX_STEPS, cfg.seed,
            step_fn=evaluation.oracle_step, workers=workers,
        )
    else:
        loaded: dict[str, MpnnParams] = {}
        for path in checkpoints:
            params = MpnnParams.load(path)
            variant = params.config.variant
            if ev.variants is not None and variant not in ev.variants:
                raise CheckpointError(f"{path}: variant {variant} is not part of this config {ev.variants}")
            if variant in loaded:
                raise CheckpointError(f"{path}: a second checkpoint for variant {variant}")
            loaded[variant] = params
        if ev.variants is None and not loaded:
            raise ConfigError("evaluate needs at least one --checkpoint (or --oracle-selftest)")
        for variant in ev.variants or list(loaded):
            if variant not in loaded:
                table.rows.extend(_missing_rows(ev.suite, variant))
                continue
            table.extend(evaluation.evaluate_suite(
                loaded[variant], ev.suite, ev.tolerance, ev.max_steps, cfg.seed, workers=workers,
            ))
    present = evaluation.MetricsTable([r for r in table.rows if r.error != "missing checkpoint"])
    _write(out / "metrics.csv", present.to_csv())
    for r in present.rows:
        if r.curve:
            _write(out / "curves" / f"{r.family}_{r.num_states}x{r.num_actions}_{r.variant}.csv",
                   evaluation.curves_csv(r.curve))
    text = table.to_text(by="variant" if ev.layout == "variant" else "family")
    _write(out / "table.txt", text)
    return table


def gradcheck_mdp() -> mdp_io.Mdp:
    """The fixed 5-state, 2-action MDP used by ``gradcheck``."""
    spec = graphgen.GenSpec("erdos_renyi", 5, 2, params={"p_edge": 0.5})
    return graphgen.generate(spec, np.random.default_rng(derive_seed(0, "probe", 0, spec.tag)))


def cmd_gradcheck(hidden_dim: int = 8, batch: int = 3) -> dict[str, nn.GradCheckReport]:
    m = gradcheck_mdp()
    reports = {}
    for i, variant in enumerate(VARIANTS):
        rng = np.random.default_rng(derive_seed(0, "probe", i + 1, variant))
        params = MpnnParams(MpnnConfig.from_variant(variant, hidden_dim), rng)
        for p in params.params():
            # break the zero-bias symmetry so every tensor sees a generic point
            p.value += 0.1 * rng.normal(size=p.shape)
        graphs = build_action_graphs(m, rng.normal(size=(batch, m.num_states)))
        target = rng.normal(size=(batch, m.num_states))

        def loss_and_grad(params=params, graphs=graphs, target=target):
            params.zero_grad()
            pred, cache = mpnn_forward(params, graphs)
            loss, g = nn.mse_loss(pred, target)
            mpnn_backward(params, graphs, cache, g)
            return loss

        reports[variant] = nn.grad_check(loss_and_grad, params.params(), h=1e-5, tol=1e-4)
    return reports


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--preset", choices=PRESETS, help="use a shipped config instead of --config")
        p.add_argument("--seed", type=int, help="override the config's global seed")
        p.add_argument("--out", required=out_required, help="output directory")

    g = sub.add_parser("generate", help="write an MDP dataset and manifest")
    common(g)
    g.add_argument("--dump-trajectories", action="store_true", help="also write oracle VI iterates")

    t = sub.add_parser("train", help="train an executor")
    common(t)
    t.add_argument("--data", help="train on a directory written by 'generate' instead of sampling")
    t.add_argument("--variant", choices=list(VARIANTS), help="override the model variant")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("evaluate", help="roll out checkpoints on a test suite")
    common(e)
    e.add_argument("--checkpoint", action="append", default=[], help="checkpoint file (repeatable)")
    e.add_argument("--oracle-selftest", action="store_true", help="substitute exact VI for the executor")
    e.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    sub.add_parser("gradcheck", help="finite-difference check of every variant")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            reports = cmd_gradcheck()
            ok = True
            for variant, rep in reports.items():
                print(f"{variant}: {'pass' if rep.passed else 'FAIL'}")
                for line in rep.lines():
                    print(f"  {line}")
                if not rep.passed:
                    ok = False
                    print(f"  offending tensors: {', '.join(rep.failed)}")
            return EXIT_OK if ok else 1
        cfg = load_config(args)
        out = Path(args.out)
        if args.command == "generate":
            manifest = cmd_generate(cfg, out, args.dump_trajectories)
            print(f"wrote {len(manifest['files'])} MDPs to {out}")
        elif args.command == "train":
            if args.variant:
                train = dict(cfg.train or {})
                keep = {k: v for k, v in train.get("model", {}).items() if k in ("hidden_dim", "edge_weighting")}
                train["model"] = {**keep, "variant": args.variant}
                cfg.train = train
            cmd_train(cfg, out, Path(args.data) if args.data else None, verbose=not args.quiet)
            print(f"wrote {out / 'checkpoint.json'}")
        elif args.command == "evaluate":
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            table = cmd_evaluate(cfg, [Path(c) for c in args.checkpoint], out, args.oracle_selftest, args.workers)
            print(table.to_text(by="variant" if cfg.evaluate.layout == "variant" else "family"), end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except training.TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except graphgen.GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except ValueError as exc:
        # spec / config values rejected by a constructor
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
