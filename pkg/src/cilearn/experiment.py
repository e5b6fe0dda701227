"""End-to-end experiment orchestration and metrics emission.

Runs the initial stage plus P incremental phases over a class-incremental
split, evaluating after each phase on every class seen so far, and writes
``metrics.csv`` (one row per phase), the per-epoch training log, the final
checkpoint, the prototype file, and per-phase score dumps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, PhasePlan, load_idx_dataset, split_class_incremental, synthetic_dataset
from .errors import ConfigError, DataError
from .network import Model, ModelConfig, build_model, plain_mac_count, plain_param_count
from .prototypes import PrototypeStore
from .training import (
    TrainConfig,
    TrainLog,
    add_initial_prototypes,
    begin_phase,
    evaluate,
    train_incremental_phase,
    train_initial,
)

METRICS_COLUMNS = "phase,classes_seen,top1_acc,avg_inc_acc,retained_samples,params,flops,seconds"


@dataclass
class DataConfig:
    kind: str = "synthetic"
    classes: int = 10
    train_per_class: int = 60
    test_per_class: int = 20
    image_size: int = 16
    noise: float = 0.10
    seed: int = 7
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""

    def validate(self):
        if self.kind not in ("synthetic", "idx"):
            raise ConfigError(f"dataset kind must be 'synthetic' or 'idx', got {self.kind!r}")
        if self.kind == "idx":
            missing = [n for n in ("train_images", "train_labels", "test_images", "test_labels")
                       if not getattr(self, n)]
            if missing:
                raise ConfigError(f"idx dataset requires paths for: {', '.join(missing)}")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    phases: int = 5
    initial_classes: int = 0  # 0 means half of the classes
    seed: int = 42
    out_dir: str = ""
    timing: str = "wall"

    def validate(self):
        self.data.validate()
        self.model.validate()
        self.train.validate()
        if self.phases < 1:
            raise ConfigError(f"phases must be >= 1, got {self.phases}")
        if self.timing not in ("wall", "none"):
            raise ConfigError(f"timing must be 'wall' or 'none', got {self.timing!r}")


@dataclass
class PhaseMetrics:
    phase: int
    classes_seen: int
    top1_acc: float
    avg_inc_acc: float
    retained_samples: int
    params: int
    flops: int
    seconds: float
    train_steps: int
    initial_block_acc: float
    records: list = field(default_factory=list)
    retained_indices: np.ndarray | None = None

    def csv_row(self) -> str:
        return (f"{self.phase},{self.classes_seen},{self.top1_acc:.6f},{self.avg_inc_acc:.6f},"
                f"{self.retained_samples},{self.params},{self.flops},{self.seconds:.3f}")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    plan: PhasePlan
    phases: list[PhaseMetrics]
    model: Model
    store: PrototypeStore
    log: TrainLog
    head_of: dict

    @property
    def average_incremental_accuracy(self) -> float:
        return float(np.mean([p.top1_acc for p in self.phases]))

    @property
    def incremental_train_steps(self) -> int:
        return sum(p.train_steps for p in self.phases[1:])

    def metrics_csv(self) -> str:
        lines = [f"# {key} = {value}" for key, value in sorted(config_echo(self.config).items())]
        lines.append(METRICS_COLUMNS)
        lines.extend(p.csv_row() for p in self.phases)
        return "\n".join(lines) + "\n"


def config_echo(cfg: ExperimentConfig) -> dict:
    """Flat key = value view of the effective configuration."""
    echo = {}
    for prefix, obj in (("dataset", cfg.data), ("model", cfg.model), ("train", cfg.train)):
        for name in obj.__dataclass_fields__:
            value = getattr(obj, name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            echo[f"{prefix}.{name}"] = value
    echo.update({
        "experiment.phases": cfg.phases,
        "experiment.initial_classes": cfg.initial_classes,
        "experiment.seed": cfg.seed,
        "experiment.out_dir": cfg.out_dir,
        "experiment.timing": cfg.timing,
    })
    return echo


def load_data(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    if cfg.kind == "synthetic":
        train = synthetic_dataset(cfg.classes, cfg.train_per_class, cfg.image_size,
                                  cfg.noise, seed=cfg.seed)
        test = synthetic_dataset(cfg.classes, cfg.test_per_class, cfg.image_size,
                                 cfg.noise, seed=cfg.seed + 1)
        return train, test
    train = load_idx_dataset(cfg.train_images, cfg.train_labels)
    test = load_idx_dataset(cfg.test_images, cfg.test_labels)
    if train.class_count != test.class_count:
        raise DataError(
            f"train has {train.class_count} classes but test has {test.class_count}")
    return train, test


def _check_input_shape(model_cfg: ModelConfig, dataset: Dataset):
    if tuple(dataset.image_shape) != tuple(model_cfg.input_shape):
        raise DataError(
            f"dataset images have shape {dataset.image_shape} but the model expects "
            f"{tuple(model_cfg.input_shape)}")


class _PhaseClock:
    def __init__(self, mode: str):
        self.mode = mode

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._start if self.mode == "wall" else 0.0
        return False


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    train_set, test_set = load_data(cfg.data)
    _check_input_shape(cfg.model, train_set)
    plan = split_class_incremental(train_set.class_count, cfg.phases, cfg.seed,
                                   initial_classes=cfg.initial_classes or None)

    head_of: dict[int, int] = {}
    for cid in plan.initial_classes:
        head_of[cid] = len(head_of)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    model = build_model(cfg.model, num_classes=len(plan.initial_classes), seed=cfg.seed)
    model.head_classes = list(plan.initial_classes)
    store = PrototypeStore(cfg.model.feature_dim)
    log = TrainLog()

    metrics: list[PhaseMetrics] = []
    seen_classes = list(plan.initial_classes)
    initial_block = list(plan.initial_classes)

    def head_labels_for(dataset, indices):
        return np.array([head_of[int(dataset.labels[i])] for i in indices], dtype=np.int64)

    def eval_phase(phase_index, retained, steps, seconds, outcome_records=None,
                   retained_idx=None):
        idx = test_set.indices_of_classes(seen_classes)
        acc, correct, total = evaluate(model, test_set.images[idx], head_labels_for(test_set, idx))
        log.add(phase_index, 0, "test", 0.0, 0.0, 0.0, 0.0, acc)
        block_heads = [head_of[c] for c in initial_block]
        block_total = int(total[block_heads].sum())
        block_acc = float(correct[block_heads].sum()) / block_total if block_total else 0.0
        running = [p.top1_acc for p in metrics] + [acc]
        metrics.append(PhaseMetrics(
            phase=phase_index, classes_seen=len(seen_classes), top1_acc=acc,
            avg_inc_acc=float(np.mean(running)), retained_samples=retained,
            params=model.param_count(), flops=model.mac_count(), seconds=seconds,
            train_steps=steps, initial_block_acc=block_acc,
            records=outcome_records or [], retained_indices=retained_idx))

    # initial stage
    with _PhaseClock(cfg.timing) as clock:
        idx0 = train_set.indices_of_classes(plan.initial_classes)
        heads0 = head_labels_for(train_set, idx0)
        outcome = train_initial(model, train_set.images[idx0], heads0, cfg.train, rng, log)
        add_initial_prototypes(model, train_set.images[idx0], heads0, store, head_of)
    eval_phase(0, retained=len(idx0), steps=outcome.steps, seconds=clock.elapsed)

    # incremental phases
    for t, chunk in enumerate(plan.phases, start=1):
        for cid in chunk:
            head_of[cid] = len(head_of)
        seen_classes.extend(chunk)
        model.head_classes = list(seen_classes)
        with _PhaseClock(cfg.timing) as clock:
            state = begin_phase(model, t, [head_of[c] for c in chunk], store, head_of, cfg.train)
            idx_t = train_set.indices_of_classes(chunk)
            outcome = train_incremental_phase(
                state, train_set.images[idx_t], head_labels_for(train_set, idx_t),
                cfg.train, rng, log, sample_indices=idx_t)
        head_to_class = {h: c for c, h in head_of.items()}
        records = [replace(r, class_id=head_to_class[r.class_id]) for r in outcome.records]
        eval_phase(t, retained=len(outcome.retained_indices), steps=outcome.steps,
                   seconds=clock.elapsed, outcome_records=records,
                   retained_idx=outcome.retained_indices)

    result = ExperimentResult(config=cfg, plan=plan, phases=metrics, model=model,
                              store=store, log=log, head_of=head_of)
    if cfg.out_dir:
        write_outputs(result)
    return result


def write_outputs(result: ExperimentResult):
    out = Path(result.config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv())
    result.log.write(out / "train_log.csv")
    save_checkpoint(result.model, out / "model.ckpt")
    result.store.save(out / "prototypes.bin")
    for pm in result.phases:
        if pm.records:
            lines = ["sample_index,class_id,score,epoch"]
            lines += [f"{r.sample_index},{r.class_id},{r.score:.9f},{r.epoch_measured}"
                      for r in pm.records]
            (out / f"scores_phase{pm.phase}.csv").write_text("\n".join(lines) + "\n")
