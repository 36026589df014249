"""Experiment drivers: training runs, precision sweep, pipeline and cost
reports.  Every output file embeds the config that produced it and every
run is reproducible bit-for-bit from its seed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import cost_model, pipeline
from .config import ExperimentConfig
from .dataset import Dataset, ingest_cifar10, ingest_mnist
from .diff_block import BatchMemory, build_luts
from .gan import (
    GanModel,
    GradientPacket,
    build_gan,
    objective_d,
    objective_g,
    save_checkpoint,
)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# datasets


def digits_dataset(image_size: int, split: str = "train") -> Dataset:
    """Bundled handwritten-digits surrogate (used when MNIST IDX files are
    not available): 8x8 scans upsampled to the working resolution."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    imgs = raw.images / 16.0
    idx = (np.arange(image_size) * imgs.shape[1]) // image_size
    up = imgs[:, idx][:, :, idx]
    x = (up * 2.0 - 1.0)[:, None, :, :]
    labels = raw.target.astype(np.int64)
    cut = int(0.8 * len(labels))
    if split == "train":
        return Dataset("digits", x[:cut], labels[:cut], classes=10)
    return Dataset("digits", x[cut:], labels[cut:], classes=10)


def load_dataset(config: ExperimentConfig, split: str = "train") -> Dataset:
    if config.dataset_name == "mnist":
        return ingest_mnist(config.dataset_path, split=split, image_size=config.image_size)
    if config.dataset_name == "cifar10":
        return ingest_cifar10(config.dataset_path, split=split)
    return digits_dataset(config.image_size, split=split)


# ---------------------------------------------------------------------------
# training


def training_step(model: GanModel, memory: BatchMemory, x_batch: np.ndarray,
                  z_batch: np.ndarray) -> dict:
    """One iteration: stacked forward, diff-block seeds, simultaneous-style
    updates (both gradients are taken at the pre-update weights)."""
    m = model.m
    gz = model.generator_forward(z_batch)
    stacked = np.concatenate([x_batch, gz], axis=0)
    d_all = model.discriminator_forward(stacked)
    d_x, d_gz = d_all[:m], d_all[m:]

    memory.stage_real_scores(d_x)
    seeds = memory.compute_errors(d_gz)

    d_packet = GradientPacket(
        output_error=np.concatenate([seeds.error_d_real, seeds.error_d_fake]),
        iteration=model.iteration,
    )
    e_input = model.apply_update(d_packet, "discriminator")
    # the artificial samples' input error doubles as the generator's chain
    # error: both objectives share the log(1 - D(G(z))) term
    g_packet = GradientPacket(output_error=e_input[m:], iteration=model.iteration)
    model.apply_update(g_packet, "generator")
    model.iteration += 1

    return {
        "d_real_mean": float(np.mean(d_x)),
        "d_fake_mean": float(np.mean(d_gz)),
        "objective_d": objective_d(d_x, d_gz),
        "objective_g": objective_g(d_gz),
    }


def run_training(config: ExperimentConfig, dataset: Dataset | None = None,
                 out_dir: str | None = None):
    """Train per the config; returns (model, log rows) and writes the log,
    checkpoint and summary when an output directory is given."""
    config.validate()
    data = dataset if dataset is not None else load_dataset(config, "train")
    data = data.subset(config.train_subset)
    channels = data.images.shape[1]

    model = build_gan((config.image_size, config.image_size), channels, config.bits,
                      alpha=config.alpha, m=config.batch, noise_dim=config.noise_dim,
                      seed=config.seed)
    lut_bits = None if config.bits == 32 else config.bits
    memory = BatchMemory(config.batch, *build_luts(lut_bits))
    rng = np.random.default_rng(config.seed)

    n = len(data.labels)
    rows = []
    for it in range(config.iterations):
        idx = (np.arange(config.batch) + it * config.batch) % n
        x_batch = data.images[idx]
        z_batch = rng.uniform(-1.0, 1.0, size=(config.batch, config.noise_dim))
        stats = training_step(model, memory, x_batch, z_batch)
        if not all(np.isfinite(v) for v in stats.values()):
            raise TrainingDiverged(f"non-finite objective at iteration {it}: {stats}")
        rows.append({"iteration": it, **stats})

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "train_log.csv"), config,
                   ["iteration", "d_real_mean", "d_fake_mean", "objective_d", "objective_g"],
                   rows)
        save_checkpoint(model, os.path.join(out_dir, "model.ckpt"),
                        bits=config.bits, seed=config.seed)
        _write_json(os.path.join(out_dir, "train_summary.json"), config, {
            "iterations": config.iterations,
            "final": rows[-1] if rows else None,
            "dataset": data.name,
            "train_images": n,
        })
    return model, rows


# ---------------------------------------------------------------------------
# linear probe + precision sweep


def probe_accuracy(model: GanModel, train: Dataset, test: Dataset,
                   batch: int = 256) -> float:
    """Classifier accuracy of a deterministic full-batch logistic probe on
    the model's features."""
    from sklearn.linear_model import LogisticRegression

    def feats(ds):
        out = []
        for lo in range(0, len(ds.labels), batch):
            out.append(model.extract_features(ds.images[lo : lo + batch]))
        return np.concatenate(out, axis=0)

    clf = LogisticRegression(max_iter=5000, solver="lbfgs")
    clf.fit(feats(train), train.labels)
    return float(clf.score(feats(test), test.labels))


def run_precision_sweep(config: ExperimentConfig, train_data: Dataset | None = None,
                        test_data: Dataset | None = None, out_dir: str | None = None):
    """Train one GAN per bit width and probe its features against the float
    baseline.  Returns rows of (bits, accuracy, normalized_accuracy)."""
    config.validate()
    if not config.bits_list:
        raise ValueError("bits_list must be non-empty")
    train = (train_data if train_data is not None else load_dataset(config, "train"))
    train = train.subset(config.train_subset)
    test = (test_data if test_data is not None else load_dataset(config, "test"))
    test = test.subset(config.eval_subset)

    accuracies = {}
    import warnings

    for bits in sorted(set(config.bits_list) | {32}, reverse=True):
        cfg = ExperimentConfig(**{**config.to_dict(), "bits": bits,
                                  "bits_list": config.bits_list,
                                  "parallelism_list": config.parallelism_list})
        model, _ = run_training(cfg, dataset=train)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            accuracies[bits] = probe_accuracy(model, train, test)

    baseline = accuracies[32]
    rows = []
    for bits in sorted(set(config.bits_list), reverse=True):
        rows.append({
            "bits": bits,
            "accuracy": accuracies[bits],
            "normalized_accuracy": accuracies[bits] / baseline if baseline > 0 else 0.0,
        })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "precision_sweep.csv"), config,
                   ["bits", "accuracy", "normalized_accuracy"], rows)
        _write_json(os.path.join(out_dir, "precision_sweep.json"), config, {
            "baseline_accuracy": baseline,
            "series": rows,
        })
    return rows


# ---------------------------------------------------------------------------
# pipeline comparison


def run_pipeline_compare(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    config.validate()
    params = cost_model.default_params()
    sim_iters = 12
    t_basic = pipeline.simulate(pipeline.build_task_graph(pipeline.BASIC),
                                params.step_times, sim_iters)
    t_cross = pipeline.simulate(pipeline.build_task_graph(pipeline.CROSS_PARALLEL),
                                params.step_times, sim_iters)
    rep = pipeline.utilization_report(t_basic, t_cross)
    result = {
        "iteration_s": {"basic": t_basic.iteration_latency,
                        "cross_parallel": t_cross.iteration_latency},
        "d_idle_s": {"basic": t_basic.block_idle["discriminator"],
                     "cross_parallel": t_cross.block_idle["discriminator"]},
        "g_idle_s": {"basic": t_basic.block_idle["generator"],
                     "cross_parallel": t_cross.block_idle["generator"]},
        "speedup": t_basic.iteration_latency / t_cross.iteration_latency,
        "idle_improvement": {
            "discriminator": rep["blocks"]["discriminator"]["idle_improvement"],
            "generator": rep["blocks"]["generator"]["idle_improvement"],
        },
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "pipeline_compare.json"), config, result)
        t_basic.to_csv(os.path.join(out_dir, "trace_basic.csv"))
        t_cross.to_csv(os.path.join(out_dir, "trace_cross_parallel.csv"))
    return result


# ---------------------------------------------------------------------------
# parallelism sweep


def run_parallelism_sweep(config: ExperimentConfig, out_dir: str | None = None):
    config.validate()
    if any(not 1 <= s <= 64 for s in config.parallelism_list):
        raise ValueError("parallelism values must lie in [1, 64]")
    params = cost_model.default_params()
    workload = cost_model.load_workloads()[config.workload]
    rows = []
    for s in config.parallelism_list:
        t = cost_model.iteration_time(s, workload, params, mode=config.pipeline_mode)
        rows.append({
            "parallelism": s,
            "iteration_time_s": t.total_s,
            "forward_s": t.forward_s,
            "backward_s": t.backward_s,
            "area_mm2": cost_model.area(s, params),
        })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "parallelism_sweep.csv"), config,
                   ["parallelism", "iteration_time_s", "forward_s", "backward_s", "area_mm2"],
                   rows)
    return rows


# ---------------------------------------------------------------------------
# cost report


def run_cost_report(config: ExperimentConfig, out_dir: str | None = None) -> cost_model.CostReport:
    config.validate()
    params = cost_model.default_params()
    workload = cost_model.load_workloads()[config.workload]
    trace = pipeline.simulate(pipeline.build_task_graph(config.pipeline_mode),
                              params.step_times, 12)
    report = cost_model.energy_report(trace, params.task_op_counts, params,
                                      workload, config.parallelism)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "cost_report.json"), config, report.to_dict())
        with open(os.path.join(out_dir, "cost_report.txt"), "w") as fh:
            fh.write(cost_model.format_report_table(report, cost_model.reference_baselines()))
    return report


# ---------------------------------------------------------------------------
# deterministic writers


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_csv(path, config: ExperimentConfig, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(config.to_dict(), sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _write_json(path, config: ExperimentConfig, payload: dict):
    doc = {"config": config.to_dict(), **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
