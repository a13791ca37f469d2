"""Experiment suites: gap sweeps, method-ordering comparisons, TA-provenance
studies, and the config-file dispatcher behind the CLI."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .data import Dataset, gen_synthetic, load_idx
from .distill import DistillConfig, distill_chain, train
from .errors import ConfigError, LadderError
from .models import NetworkSpec, TrainedModel, mlp_spec, save_model
from .optim import OptimizerConfig
from .planner import (ModelCache, SizeLadder, SurrogateEvaluator,
                      TrainingEvaluator, brute_force_optimal_path,
                      dp_optimal_path, path_graph, suggest_ta_size)
from .records import RecordWriter, RunRecord
from .rng import RandomStream, derive_seed
from .search import LAM_GRID, TAU_GRID, hyper_search

# Desk-scale defaults: a 3-class spiral problem and a five-rung MLP ladder.
# The spiral winding and noise sit where network depth visibly pays off but
# a one-layer student still has learnable headroom, which is the regime
# where assistant-bridged distillation shows its effect.
DESK_LADDER = (5, 4, 3, 2, 1)
DESK_WIDTH = 32
DESK_EPOCHS = 60
DESK_SPIRAL = {"kind": "spirals", "n": 3000, "classes": 3, "noise": 0.07,
               "turns": 1.72}
DESK_NORMALIZE = False


def desk_optimizer() -> OptimizerConfig:
    return OptimizerConfig(learning_rate=0.1, momentum=0.9, nesterov=True,
                           schedule=((30, 0.01), (45, 0.001)))


def desk_config(seed: int = 0, **overrides) -> DistillConfig:
    base = dict(temperature=4.0, lam=0.5, epochs=DESK_EPOCHS, batch_size=64,
                optimizer=desk_optimizer(), seed=seed)
    base.update(overrides)
    return DistillConfig(**base)


def ladder_specs(dataset: Dataset, sizes=DESK_LADDER, width: int = DESK_WIDTH,
                 normalize: bool = DESK_NORMALIZE) -> dict[int, NetworkSpec]:
    flat = dataset.as_flat()
    input_dim = flat.x_train.shape[1]
    return {s: mlp_spec(s, input_dim=input_dim, width=width,
                        num_classes=dataset.num_classes, normalize=normalize)
            for s in sizes}


def model_record(experiment: str, model: TrainedModel, cfg: DistillConfig,
                 wall: float) -> RunRecord:
    return RunRecord(
        experiment=experiment,
        mode=model.mode,
        path=list(model.path),
        config=cfg.to_dict(),
        seed=cfg.seed,
        epoch_train_acc=[round(a, 6) for a in model.metrics["epoch_train_acc"]],
        epoch_test_acc=[round(a, 6) for a in model.metrics["epoch_test_acc"]],
        final_train_acc=model.metrics["train_acc"],
        final_test_acc=model.metrics["test_acc"],
        wall_time=wall,
    )


# ---------------------------------------------------------------------------
# Gap sweep


@dataclass
class GapRow:
    varied_size: int
    distilled_acc: float
    scratch_acc: float

    @property
    def pct_gain(self) -> float:
        return 100.0 * (self.distilled_acc - self.scratch_acc) / self.scratch_acc

    def to_list(self) -> list:
        return [self.varied_size, self.distilled_acc, self.scratch_acc,
                self.pct_gain]


def gap_sweep(ladder: SizeLadder, fixed: str, dataset: Dataset,
              cfg: DistillConfig,
              specs: dict[int, NetworkSpec] | None = None) -> list[GapRow]:
    """Vary one endpoint of a distillation pair, holding the other fixed.

    fixed="student": teachers of every other ladder size teach the ladder's
    smallest network (teacher-size axis, rows carry the teacher's own
    scratch accuracy).  fixed="teacher": the largest network teaches
    students of every other size; rows carry the student's scratch accuracy
    and the percentage gain over it.
    """
    if fixed not in ("student", "teacher"):
        raise ConfigError("fixed must be 'student' or 'teacher'")
    specs = specs or ladder_specs(dataset, ladder.sizes)
    rows: list[GapRow] = []
    if fixed == "student":
        student_size = ladder.student
        for size in ladder.sizes:
            if size == student_size:
                continue
            teacher = train(specs[size], dataset, replace(cfg, lam=0.0))
            student = train(specs[student_size], dataset, cfg, teacher=teacher)
            rows.append(GapRow(size, student.metrics["test_acc"],
                               teacher.metrics["test_acc"]))
    else:
        teacher_size = ladder.teacher
        teacher = train(specs[teacher_size], dataset, replace(cfg, lam=0.0))
        for size in ladder.sizes:
            if size == teacher_size:
                continue
            scratch = train(specs[size], dataset, replace(cfg, lam=0.0))
            distilled = train(specs[size], dataset, cfg, teacher=teacher)
            rows.append(GapRow(size, distilled.metrics["test_acc"],
                               scratch.metrics["test_acc"]))
    return rows


def write_gap_csv(rows: list[GapRow], path) -> None:
    # full precision so the percentage column stays recomputable from the
    # accuracy columns to 1e-9
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["varied_size", "distilled_acc", "scratch_acc",
                         "pct_gain"])
        for r in rows:
            writer.writerow([r.varied_size, f"{r.distilled_acc:.17g}",
                             f"{r.scratch_acc:.17g}", f"{r.pct_gain:.17g}"])


def is_non_monotone(values) -> bool:
    """True when the sequence rises and later falls (or vice versa)."""
    diffs = np.diff(np.asarray(values, dtype=float))
    return bool((diffs > 0).any() and (diffs < 0).any())


# ---------------------------------------------------------------------------
# Method-ordering suite (NOKD vs BLKD vs TAKD with per-arm search)


@dataclass
class ArmResult:
    mode: str
    best_acc: float
    best_config: dict
    trials: list[dict]


@dataclass
class OrderingResult:
    seeds: list[int]
    per_seed: dict[int, dict[str, ArmResult]]

    def arm_accs(self, mode: str) -> list[float]:
        return [self.per_seed[s][mode].best_acc for s in self.seeds]

    def summary(self) -> dict:
        out: dict = {"seeds": self.seeds}
        for mode in ("NOKD", "BLKD", "TAKD"):
            accs = self.arm_accs(mode)
            out[mode] = {"per_seed": accs, "mean": float(np.mean(accs))}
        takd, blkd, nokd = (out["TAKD"]["per_seed"], out["BLKD"]["per_seed"],
                            out["NOKD"]["per_seed"])
        out["takd_ge_blkd_seeds"] = int(sum(t >= b for t, b in zip(takd, blkd)))
        out["blkd_ge_nokd_seeds"] = int(sum(b >= n for b, n in zip(blkd, nokd)))
        out["mean_takd_ge_blkd"] = out["TAKD"]["mean"] >= out["BLKD"]["mean"]
        out["mean_blkd_ge_nokd"] = out["BLKD"]["mean"] >= out["NOKD"]["mean"]
        return out


def _sample_pairs(stream: RandomStream, count: int, budget: int) -> list[int]:
    return [int(i) for i in
            stream.sample_without_replacement(count, min(budget, count))]


def method_ordering_experiment(dataset: Dataset, ladder: SizeLadder,
                               base_cfg: DistillConfig, seeds,
                               budget: int = 15,
                               specs: dict[int, NetworkSpec] | None = None
                               ) -> OrderingResult:
    """Tune each training mode independently with a fixed search budget.

    NOKD ignores (tau, lam), so its trials collapse to one training (the
    trial log still carries the sampled grid).  The chain arm samples the
    two edge configs independently; teacher and assistant models are cached
    by their exact training config, which is pure-function reuse.
    """
    specs = specs or ladder_specs(dataset, ladder.sizes)
    if len(ladder.sizes) != 3:
        raise LadderError("ordering suite expects a (teacher, ta, student) ladder")
    t_size, a_size, s_size = ladder.sizes
    per_seed: dict[int, dict[str, ArmResult]] = {}
    grid = list(product(TAU_GRID, LAM_GRID))

    for seed in seeds:
        cfg_seed = replace(base_cfg, seed=seed)
        teacher = train(specs[t_size], dataset, replace(cfg_seed, lam=0.0))
        arms: dict[str, ArmResult] = {}

        # NOKD: the objective is independent of (tau, lam); memoize on the
        # effective config so identical trials train once.
        nokd_cache: dict[str, float] = {}

        def nokd_objective(cfg: DistillConfig) -> float:
            eff = replace(cfg, lam=0.0, temperature=1.0)
            key = eff.hash()
            if key not in nokd_cache:
                nokd_cache[key] = train(specs[s_size], dataset, eff
                                        ).metrics["test_acc"]
            return nokd_cache[key]

        log = hyper_search({}, budget, cfg_seed, nokd_objective,
                           seed=derive_seed(seed, "arm", "nokd"),
                           name="search/nokd")
        arms["NOKD"] = ArmResult("NOKD", log.best_score,
                                 replace(log.best, lam=0.0).to_dict(),
                                 [{"config": t.config.to_dict(),
                                   "score": t.score} for t in log.trials])

        def blkd_objective(cfg: DistillConfig) -> float:
            return train(specs[s_size], dataset, cfg,
                         teacher=teacher).metrics["test_acc"]

        log = hyper_search({}, budget, cfg_seed, blkd_objective,
                           seed=derive_seed(seed, "arm", "blkd"),
                           name="search/blkd")
        arms["BLKD"] = ArmResult("BLKD", log.best_score, log.best.to_dict(),
                                 [{"config": t.config.to_dict(),
                                   "score": t.score} for t in log.trials])

        # TAKD: independent per-edge configs sampled from the grid product.
        ta_cache: dict[str, TrainedModel] = {}
        stream = RandomStream(derive_seed(seed, "arm", "takd"), "search/takd")
        pair_idx = _sample_pairs(stream, len(grid) * len(grid), budget)
        best_acc, best_cfgs = -1.0, None
        trials = []
        for flat in pair_idx:
            e1, e2 = divmod(flat, len(grid))
            tau1, lam1 = grid[e1]
            tau2, lam2 = grid[e2]
            cfg1 = replace(cfg_seed, temperature=tau1, lam=lam1)
            cfg2 = replace(cfg_seed, temperature=tau2, lam=lam2)
            key = cfg1.hash()
            if key not in ta_cache:
                ta_cache[key] = train(specs[a_size], dataset, cfg1,
                                      teacher=teacher)
            student = train(specs[s_size], dataset, cfg2,
                            teacher=ta_cache[key])
            acc = student.metrics["test_acc"]
            trials.append({"config": {"edge_ta": cfg1.to_dict(),
                                      "edge_student": cfg2.to_dict()},
                           "score": acc})
            if acc > best_acc:
                best_acc = acc
                best_cfgs = trials[-1]["config"]
        arms["TAKD"] = ArmResult("TAKD", best_acc, best_cfgs, trials)
        per_seed[seed] = arms
    return OrderingResult(list(seeds), per_seed)


# ---------------------------------------------------------------------------
# TA provenance (distilled TA vs from-scratch TA)


def ta_provenance_experiment(ladder: SizeLadder, ta_size: int,
                             dataset: Dataset, cfg: DistillConfig, seeds,
                             specs: dict[int, NetworkSpec] | None = None
                             ) -> dict:
    """Compare students taught by a distilled TA against students taught by
    the same-size TA trained from scratch, with identical seeds."""
    if ta_size not in ladder.interior:
        raise LadderError(f"ta_size {ta_size} is not interior to {ladder.sizes}")
    specs = specs or ladder_specs(dataset, ladder.sizes)
    rows = []
    for seed in seeds:
        cfg_seed = replace(cfg, seed=seed)
        teacher = train(specs[ladder.teacher], dataset, replace(cfg_seed, lam=0.0))
        fs_ta = train(specs[ta_size], dataset, replace(cfg_seed, lam=0.0))
        kd_ta = train(specs[ta_size], dataset, cfg_seed, teacher=teacher)
        fs_student = train(specs[ladder.student], dataset, cfg_seed, teacher=fs_ta)
        kd_student = train(specs[ladder.student], dataset, cfg_seed, teacher=kd_ta)
        rows.append({
            "seed": seed,
            "fs_ta_acc": fs_ta.metrics["test_acc"],
            "kd_ta_acc": kd_ta.metrics["test_acc"],
            "fs_student_acc": fs_student.metrics["test_acc"],
            "kd_student_acc": kd_student.metrics["test_acc"],
        })
    return {
        "ta_size": ta_size,
        "rows": rows,
        "mean_fs_student": float(np.mean([r["fs_student_acc"] for r in rows])),
        "mean_kd_student": float(np.mean([r["kd_student_acc"] for r in rows])),
    }


# ---------------------------------------------------------------------------
# Config-file dispatch


def _build_dataset(cfg: dict) -> Dataset:
    kind = cfg.get("kind", "spirals")
    if kind in ("spirals", "blobs"):
        merged = dict(DESK_SPIRAL)
        merged.update(cfg)
        kwargs = {}
        if merged["kind"] == "spirals":
            kwargs["turns"] = float(merged.get("turns", DESK_SPIRAL["turns"]))
        return gen_synthetic(merged["kind"], int(merged["n"]),
                             int(merged["classes"]), float(merged["noise"]),
                             int(merged.get("seed", 0)), **kwargs)
    if kind == "idx":
        for key in ("train_images", "train_labels"):
            if key not in cfg:
                raise ConfigError(f"dataset.{key} is required for kind 'idx'")
        ds = load_idx(cfg["train_images"], cfg["train_labels"])
        if "test_images" in cfg:
            test = load_idx(cfg["test_images"], cfg["test_labels"])
            ds = ds.with_test(test)
        return ds
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _train_config(cfg: dict, seed: int) -> DistillConfig:
    body = dict(cfg.get("train", {}))
    body.setdefault("seed", seed)
    body.setdefault("epochs", DESK_EPOCHS)
    body.setdefault("batch_size", 64)
    if "optimizer" not in body:
        body["optimizer"] = desk_optimizer().to_dict()
    return DistillConfig.from_dict(body)


def _ladder_from(cfg: dict) -> SizeLadder:
    return SizeLadder(tuple(int(s) for s in cfg.get("ladder", DESK_LADDER)))


def run_experiment(config: dict, out_dir: Path,
                   writer: RecordWriter | None = None) -> dict:
    """Dispatch a parsed experiment config; returns a result summary."""
    if "task" not in config:
        raise ConfigError("config field 'task' is required")
    task = config["task"]
    seed = int(config.get("seed", 0))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = writer or RecordWriter(out_dir / "records.jsonl")

    if task == "bounds":
        return _run_bounds(config, out_dir)
    if task == "path-search" and config.get("mode", "surrogate") == "surrogate":
        return _run_path_search(config, out_dir, dataset=None)

    dataset = _build_dataset(config.get("dataset", {}))
    cfg = _train_config(config, seed)
    width = int(config.get("width", DESK_WIDTH))
    normalize = bool(config.get("normalize", DESK_NORMALIZE))

    if task in ("nokd", "blkd", "chain", "table1"):
        return _run_training_task(task, config, dataset, cfg, out_dir, writer,
                                  width, normalize)
    if task == "gap-sweep":
        ladder = _ladder_from(config)
        specs = ladder_specs(dataset, ladder.sizes, width, normalize)
        rows = gap_sweep(ladder, config.get("fixed", "student"), dataset, cfg,
                         specs)
        csv_path = out_dir / "gap_sweep.csv"
        write_gap_csv(rows, csv_path)
        accs = [r.distilled_acc for r in rows]
        return {"task": task, "rows": [r.to_list() for r in rows],
                "non_monotone": is_non_monotone(accs), "csv": str(csv_path)}
    if task == "ta-provenance":
        ladder = _ladder_from(config)
        specs = ladder_specs(dataset, ladder.sizes, width, normalize)
        result = ta_provenance_experiment(
            ladder, int(config.get("ta_size", ladder.interior[0])), dataset,
            cfg, config.get("seeds", [seed]), specs)
        (out_dir / "ta_provenance.json").write_text(
            json.dumps(result, indent=2, sort_keys=True))
        return {"task": task, **result}
    if task == "ordering":
        ladder = _ladder_from(config)
        specs = ladder_specs(dataset, ladder.sizes, width, normalize)
        result = method_ordering_experiment(
            dataset, ladder, cfg, config.get("seeds", [seed]),
            int(config.get("budget", 15)), specs)
        summary = result.summary()
        (out_dir / "ordering.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True))
        return {"task": task, **summary}
    if task == "path-search":
        return _run_path_search(config, out_dir, dataset)
    if task == "landscape":
        return _run_landscape(config, dataset, cfg, out_dir, width, normalize)
    if task == "hyper-search":
        return _run_hyper_search(config, dataset, cfg, out_dir, width,
                                 normalize)
    raise ConfigError(f"unknown task {task!r}")


def _run_training_task(task, config, dataset, cfg, out_dir, writer, width,
                       normalize) -> dict:
    if task == "nokd":
        size = int(config.get("model", {}).get("size", 1))
        specs = ladder_specs(dataset, (size,), width, normalize)
        start = time.perf_counter()
        model = train(specs[size], dataset, replace(cfg, lam=0.0))
        rec = model_record("nokd", model, cfg, time.perf_counter() - start)
        writer.append(rec)
        save_model(model, out_dir / f"nokd_size{size}.takd")
        return {"task": task, "records": [rec.to_dict()]}

    if task in ("blkd", "chain"):
        path = config.get("path")
        if path is None:
            ladder = _ladder_from(config)
            path = [ladder.teacher, ladder.student] if task == "blkd" \
                else list(ladder.sizes)
        sizes = tuple(int(s) for s in path)
        specs = ladder_specs(dataset, sizes, width, normalize)
        start = time.perf_counter()
        models = distill_chain(sizes, specs, dataset, cfg)
        wall = time.perf_counter() - start
        recs = []
        for m in models:
            rec = model_record(task, m, cfg, wall / len(models))
            writer.append(rec)
            recs.append(rec.to_dict())
        save_model(models[-1], out_dir / f"{task}_student.takd")
        return {"task": task, "records": recs,
                "student_acc": models[-1].metrics["test_acc"]}

    # table1: NOKD / BLKD / TAKD on a (teacher, ta, student) ladder with one
    # shared seed.
    ladder = _ladder_from(config)
    if len(ladder.sizes) != 3:
        raise ConfigError("table1 needs a ladder of exactly three sizes")
    t, a, s = ladder.sizes
    specs = ladder_specs(dataset, ladder.sizes, width, normalize)
    recs = []
    start = time.perf_counter()
    nokd = train(specs[s], dataset, replace(cfg, lam=0.0))
    teacher = train(specs[t], dataset, replace(cfg, lam=0.0))
    blkd = train(specs[s], dataset, cfg, teacher=teacher)
    ta = train(specs[a], dataset, cfg, teacher=teacher)
    takd = train(specs[s], dataset, cfg, teacher=ta)
    wall = (time.perf_counter() - start) / 5
    for name, model in (("nokd", nokd), ("blkd", blkd), ("takd", takd)):
        rec = model_record("table1", model, cfg, wall)
        writer.append(rec)
        recs.append(rec.to_dict())
    return {"task": "table1", "records": recs,
            "accs": {"NOKD": nokd.metrics["test_acc"],
                     "BLKD": blkd.metrics["test_acc"],
                     "TAKD": takd.metrics["test_acc"]}}


def _run_path_search(config, out_dir, dataset) -> dict:
    ladder = _ladder_from(config)
    k = int(config.get("k", 2))
    mode = config.get("mode", "surrogate")
    seed = int(config.get("seed", 0))
    if mode == "surrogate":
        evaluator = SurrogateEvaluator.random(ladder.sizes, seed)
    elif mode == "train":
        if dataset is None:
            dataset = _build_dataset(config.get("dataset", {}))
        cfg = _train_config(config, seed)
        specs = ladder_specs(dataset, ladder.sizes,
                             int(config.get("width", DESK_WIDTH)),
                             bool(config.get("normalize", DESK_NORMALIZE)))
        evaluator = TrainingEvaluator(specs, dataset, cfg, ladder)
    else:
        raise ConfigError(f"unknown path-search mode {mode!r}")
    result = dp_optimal_path(ladder, k, evaluator, ModelCache())
    payload = result.to_dict()
    if config.get("brute_force_check") and mode == "surrogate":
        bf = brute_force_optimal_path(ladder, k, evaluator)
        payload["brute_force"] = bf.to_dict()
        payload["agrees_with_brute_force"] = (bf.path == result.path)
    if config.get("graph") and mode == "surrogate":
        payload["graph"] = path_graph(ladder, evaluator)
    out = Path(out_dir) / "path_search.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return {"task": "path-search", "result": payload, "json": str(out)}


def _run_landscape(config, dataset, cfg, out_dir, width, normalize) -> dict:
    from .landscape import (filter_normalized_directions, flatness_metric,
                            loss_surface, write_surface_csv)
    from .models import load_model

    if "model_file" in config:
        model = load_model(config["model_file"])
    else:
        size = int(config.get("model", {}).get("size", 1))
        specs = ladder_specs(dataset, (size,), width, normalize)
        model = train(specs[size], dataset, replace(cfg, lam=0.0))
    seed = int(config.get("seed", 0))
    delta, eta = filter_normalized_directions(model, seed)
    surface = loss_surface(model, dataset, delta, eta,
                           radius=float(config.get("radius", 1.0)),
                           steps=int(config.get("steps", 41)), seed=seed)
    csv_path = Path(out_dir) / "surface.csv"
    write_surface_csv(surface, csv_path)
    return {"task": "landscape", "csv": str(csv_path),
            "center_loss": surface.center_loss,
            "flatness": flatness_metric(surface)}


def _run_hyper_search(config, dataset, cfg, out_dir, width, normalize) -> dict:
    ladder = _ladder_from(config)
    specs = ladder_specs(dataset, ladder.sizes, width, normalize)
    teacher = train(specs[ladder.teacher], dataset, replace(cfg, lam=0.0))

    def objective(c: DistillConfig) -> float:
        return train(specs[ladder.student], dataset, c,
                     teacher=teacher).metrics["test_acc"]

    log = hyper_search(config.get("space", {}), int(config.get("budget", 15)),
                       cfg, objective)
    payload = log.to_dict()
    (Path(out_dir) / "hyper_search.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True))
    return {"task": "hyper-search", **payload}


def _run_bounds(config, out_dir) -> dict:
    from .bounds import (BoundParams, check_ordering, crossover_table,
                         find_crossover_n, write_bounds_csv)

    params_cfg = config.get("params")
    if params_cfg is None:
        raise ConfigError("bounds task requires a 'params' object")
    if isinstance(params_cfg, str):
        try:
            params = BoundParams.from_json(params_cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read bound params: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{params_cfg}: malformed JSON at line "
                              f"{exc.lineno}: {exc.msg}") from exc
    else:
        params = BoundParams.from_dict(params_cfg)
    report = check_ordering(params)
    payload: dict = {"task": "bounds", "ordering": report.to_dict()}
    if config.get("crossover"):
        payload["crossover_n"] = find_crossover_n(params)
    grid = config.get("n_grid")
    if grid is None:
        grid = [int(10**e) for e in range(2, 13, 2)]
    reports = crossover_table(params, grid)
    csv_path = Path(out_dir) / "bounds.csv"
    write_bounds_csv(reports, csv_path)
    payload["csv"] = str(csv_path)
    return payload
