"""Teacher-forced supervised training of the executor on oracle trajectories."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import graphgen, vi
from .evaluation import MAX_STEPS, ROLLOUT_TOL, rollout
from .executor import (
    GraphStructure,
    MpnnConfig,
    MpnnParams,
    backward,
    build_action_graphs,
    forward,
)
from .mdp import Mdp
from .nn import Adam, mse_loss
from .seeds import derive_seed, rng_for


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class Sample:
    mdp: Mdp
    trajectory: np.ndarray  # (T_sup + 1, S), row 0 is v = 0
    v_star: np.ndarray
    structure: GraphStructure = field(repr=False, default=None)

    def __post_init__(self):
        if self.structure is None:
            self.structure = GraphStructure(self.mdp)


def pad_trajectory(steps: list[np.ndarray], length: int) -> np.ndarray:
    """First ``length`` iterates, repeating the last one past convergence."""
    steps = list(steps[:length])
    steps += [steps[-1]] * (length - len(steps))
    return np.stack(steps)


def make_dataset(
    spec: graphgen.GenSpec, count: int, steps_per_mdp: int, seed: int, purpose: str = "train"
) -> list[Sample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    mdps = [graphgen.generate(spec, np.random.default_rng(derive_seed(seed, purpose, i, spec.tag))) for i in range(count)]
    return samples_from_mdps(mdps, steps_per_mdp)


def samples_from_mdps(mdps: list[Mdp], steps_per_mdp: int) -> list[Sample]:
    """Attach oracle teacher trajectories of ``steps_per_mdp`` steps to ready-made MDPs."""
    out = []
    for mdp in mdps:
        traj = vi.solve(mdp, vi.ORACLE_TOL)
        out.append(Sample(mdp, pad_trajectory(traj.steps, steps_per_mdp + 1), traj.final))
    return out


def teacher_forced_loss(params: MpnnParams, sample: Sample, scale: float = 1.0) -> float:
    """Mean per-step MSE of one-step predictions from ground-truth inputs.

    Every step's input is the oracle iterate ``v^(t)``, never a prediction.
    Gradients, multiplied by ``scale``, are accumulated into ``params``.
    """
    inputs, targets = sample.trajectory[:-1], sample.trajectory[1:]
    graphs = build_action_graphs(sample.mdp, inputs, sample.structure)
    pred, cache = forward(params, graphs)
    # equal-length steps: mean over (T, S) equals the mean of per-step MSEs
    loss, grad = mse_loss(pred, targets)
    backward(params, graphs, cache, grad * scale)
    return loss


def _model_from_variant(m: dict) -> MpnnConfig:
    unknown = set(m) - {"variant", "hidden_dim", "edge_weighting"}
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    return MpnnConfig.from_variant(m["variant"], m.get("hidden_dim", 32), m.get("edge_weighting", "message"))


@dataclass
class TrainConfig:
    num_train_mdps: int = 1000
    train_spec: graphgen.GenSpec = field(default_factory=lambda: graphgen.GenSpec("erdos_renyi", 20, 5))
    steps_per_mdp: int = 30
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    model: MpnnConfig = field(default_factory=MpnnConfig)
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    num_val_mdps: int = 50
    checkpoint_every: int = 0
    # "cosine" anneals lr to lr * lr_floor over the run, "constant" keeps it
    lr_schedule: str = "cosine"
    lr_floor: float = 0.05

    def __post_init__(self):
        if self.steps_per_mdp < 1:
            raise ValueError("steps_per_mdp must be >= 1")
        for name in ("num_train_mdps", "batch_size", "num_val_mdps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ValueError("lr_floor must lie in [0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        frac = (epoch - 1) / (self.epochs - 1)
        return self.lr * (self.lr_floor + (1.0 - self.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["train_spec"] = self.train_spec.to_dict()
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        if "train_spec" in d:
            d["train_spec"] = graphgen.GenSpec.from_dict(d["train_spec"])
        if "model" in d:
            m = d["model"]
            d["model"] = _model_from_variant(m) if "variant" in m else MpnnConfig.from_dict(m)
        return cls(**d)


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        # wall-clock times stay out of the file so reruns are byte-identical
        w.writerow(["epoch", "train_loss", "val_mse", "val_acc"])
        for i, row in enumerate(zip(self.train_loss, self.val_mse, self.val_acc), start=1):
            w.writerow([i, *(repr(x) for x in row)])
        return buf.getvalue()


def validate(params: MpnnParams, samples: list[Sample]) -> tuple[float, float]:
    mses, accs = [], []
    for s in samples:
        res = rollout(params, s.mdp, s.v_star, ROLLOUT_TOL, MAX_STEPS)
        mses.append(res.mse[-1])
        accs.append(res.accuracy[-1])
    return float(np.mean(mses)), float(np.mean(accs))


def train(
    config: TrainConfig,
    dataset: list[Sample] | None = None,
    on_checkpoint: Callable[[int, MpnnParams], None] | None = None,
    verbose: bool = False,
) -> tuple[MpnnParams, TrainLog]:
    """Mini-batch Adam on teacher-forced step losses; deterministic given ``config.seed``."""
    params = MpnnParams(config.model, rng_for(config.seed, "init"))
    log = TrainLog()
    if config.epochs == 0:
        return params, log
    if dataset is None:
        dataset = make_dataset(config.train_spec, config.num_train_mdps, config.steps_per_mdp, config.seed)
    val = make_dataset(config.train_spec, config.num_val_mdps, config.steps_per_mdp, config.seed, "val")
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    plist = params.params()
    order_rng = rng_for(config.seed, "shuffle")
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = config.lr_at(epoch)
        order = order_rng.permutation(len(dataset))
        losses = []
        for b, lo in enumerate(range(0, len(order), config.batch_size), start=1):
            batch = order[lo : lo + config.batch_size]
            total = 0.0
            for i in batch:
                total += teacher_forced_loss(params, dataset[i], 1.0 / len(batch))
            loss = total / len(batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(p.grad)) for p in plist):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, batch {b}")
            losses.append(loss)
            opt.step(plist)
        val_mse, val_acc = validate(params, val)
        log.train_loss.append(float(np.mean(losses)))
        log.val_mse.append(val_mse)
        log.val_acc.append(val_acc)
        log.seconds.append(time.perf_counter() - t0)
        if verbose:
            print(
                f"epoch {epoch:3d} loss {log.train_loss[-1]:.5f} val_mse {val_mse:.4f} "
                f"val_acc {val_acc:.4f} ({log.seconds[-1]:.1f}s)",
                flush=True,
            )
        if on_checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            on_checkpoint(epoch, params)
    return params, log


def save_log(log: TrainLog, path: str | Path) -> None:
    Path(path).write_text(log.to_csv(), encoding="utf-8", newline="\n")
