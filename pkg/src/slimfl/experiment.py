"""Experiment execution: task construction, per-seed runs, output files."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .analysis import (
    PowerObjective,
    estimate_data_skew,
    gradient_noise_bound,
    ConvergenceParams,
    optimality_gap_bound,
    optimize_power_split,
)
from .channel import Rayleigh, decode_probabilities
from .config import ExperimentConfig
from .datasets import Dataset, class_means, dirichlet_partition, load_idx, synth_dataset
from .federation import CombinedVanillaRun, SlimFLRun, VanillaRun
from .metrics import (
    CostModel,
    RoundMetrics,
    detect_convergence,
    energy_report,
    write_metrics_csv,
)
from .slimnet import Layout, backward, forward, init_params, masks_for
from .training import cross_entropy_grad


@dataclass(frozen=True, eq=False)
class Task:
    train: Dataset
    test: Dataset
    shards: list
    layout: Layout


def _ceil_half(h: int, ratio: float) -> int:
    return max(1, math.ceil(h * ratio - 1e-9))


def build_task(cfg: ExperimentConfig, seed: int) -> Task:
    ds = cfg.dataset
    if ds.kind == "idx":
        train = load_idx(ds.train_images, ds.train_labels)
        test = load_idx(ds.test_images, ds.test_labels)
        if ds.limit:
            train = train.subset(np.arange(min(ds.limit, len(train))))
        dim = train.x.shape[1]
    else:
        means = class_means(ds.classes, ds.dim, rngmod.stream(seed, "synth-means"))
        train = synth_dataset(
            ds.classes, ds.per_class, ds.dim, rngmod.stream(seed, "synth-train"),
            spread=ds.spread, means=means,
        )
        test = synth_dataset(
            ds.classes, ds.test_per_class, ds.dim, rngmod.stream(seed, "synth-test"),
            spread=ds.spread, means=means,
        )
        dim = ds.dim

    shards = dirichlet_partition(
        train.y, cfg.federation.n_devices, ds.alpha, rngmod.stream(seed, "partition")
    )
    layout = Layout.mlp(dim, cfg.model.hidden, train.n_classes)
    return Task(train=train, test=test, shards=shards, layout=layout)


def _cost_model(cfg: ExperimentConfig, layout: Layout) -> CostModel:
    if cfg.costs.use_reference:
        return CostModel.reference()
    return CostModel.from_layout(
        layout, cfg.model.width_ratios[0], cfg.costs.bits_per_param
    )


def make_run(cfg: ExperimentConfig, seed: int, task: Task | None = None):
    """Build the run object for cfg's scheme at the given master seed."""
    task = task or build_task(cfg, seed)
    cost = _cost_model(cfg, task.layout)
    scheme = cfg.federation.scheme
    common = dict(
        train=task.train, shards=task.shards, test=task.test,
        train_cfg=cfg.training, chan_cfg=cfg.channel, fed_cfg=cfg.federation,
        master_seed=seed, eval_every=cfg.eval_every,
    )

    if scheme == "slimfl":
        init = init_params(task.layout, rngmod.stream(seed, "init"))
        return SlimFLRun(layout=task.layout, init_values=init.values, cost=cost, **common)

    in_dim = task.layout.layers[0].in_dim
    out_dim = task.layout.layers[-1].out_dim
    half_hidden = tuple(_ceil_half(h, cfg.model.width_ratios[0]) for h in cfg.model.hidden)
    half_layout = Layout.mlp(in_dim, half_hidden, out_dim)

    def vanilla(layout, width_label, tag, power=None):
        init = init_params(layout, rngmod.stream(seed, "init", tag))
        bits = cost.half_bits if width_label == "half" else cost.full_bits
        mflops = cost.half_mflops if width_label == "half" else cost.full_mflops
        payload = 1.0 if width_label == "half" else 2.0
        return VanillaRun(
            layout=layout, init_values=init.values, model_bits=bits,
            model_mflops=mflops, payload_ratio=payload, width_label=width_label,
            transmit_power_w=power, stream_tag=tag, **common,
        )

    if scheme == "vanilla-0.5x":
        return vanilla(half_layout, "half", "v-half")
    if scheme == "vanilla-1.0x":
        return vanilla(task.layout, "full", "v-full")
    # vanilla-1.5x: both fixed-width models, each at the full power budget
    return CombinedVanillaRun(
        vanilla(half_layout, "half", "v-half", power=cfg.channel.total_power_w),
        vanilla(task.layout, "full", "v-full", power=cfg.channel.total_power_w),
    )


def summarize(cfg: ExperimentConfig, seed: int, metrics: list[RoundMetrics]) -> dict:
    acc_field = "acc_half" if cfg.federation.scheme == "vanilla-0.5x" else "acc_full"
    trace = [getattr(m, acc_field) for m in metrics]
    convergence = (
        detect_convergence(trace) if cfg.eval_every == 1 and len(trace) >= 100 else None
    )
    report = energy_report(metrics, convergence)
    last = metrics[-1]
    return {
        "seed": seed,
        "scheme": cfg.federation.scheme,
        "rounds": len(metrics),
        "convergence_round": convergence,
        "energy": report,
        "final_acc_0.5x": None if math.isnan(last.acc_half) else last.acc_half,
        "final_acc_1.0x": None if math.isnan(last.acc_full) else last.acc_full,
        "decoded_megabits_total": sum(m.decoded_megabits for m in metrics),
    }


def run_experiment(cfg: ExperimentConfig, seed: int) -> tuple[list[RoundMetrics], dict]:
    run = make_run(cfg, seed)
    metrics = run.run()
    return metrics, summarize(cfg, seed, metrics)


def run_all(cfg: ExperimentConfig) -> dict:
    """Run every configured seed, writing per-seed CSVs and a summary JSON."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    summaries = []
    for seed in cfg.seeds:
        metrics, summary = run_experiment(cfg, seed)
        csv_path = os.path.join(cfg.output_dir, f"metrics_seed{seed}.csv")
        write_metrics_csv(csv_path, metrics)
        with open(csv_path, "rb") as fh:
            summary["metrics_sha256"] = hashlib.sha256(fh.read()).hexdigest()
        summary["metrics_csv"] = csv_path
        summaries.append(summary)
    combined = {"scheme": cfg.federation.scheme, "seeds": list(cfg.seeds), "runs": summaries}
    with open(os.path.join(cfg.output_dir, "summary.json"), "w") as fh:
        json.dump(combined, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return combined


def analyze_experiment(cfg: ExperimentConfig) -> dict:
    """Closed-form channel/convergence report for a configuration.

    Includes decode probabilities, the power-split optimum (numeric on the
    exact objective plus both closed forms), an objective sample grid, the
    estimated data-skew statistics at the initial model, the gradient-noise
    bound they imply, and the optimality-gap bound curve.
    """
    seed = cfg.seeds[0]
    task = build_task(cfg, seed)

    chan = cfg.channel
    obj = PowerObjective(
        effective_noise=chan.effective_noise,
        sinr_threshold=chan.sinr_threshold,
        total_power_w=chan.total_power_w,
    )
    split = optimize_power_split(obj)
    lo = obj.feasible_lower() + 1e-6
    grid = np.linspace(lo, 1.0 - 1e-6, cfg.analysis.lambda_samples)
    samples = [[float(lam), float(obj.exact(lam))] for lam in grid]

    probs = (
        decode_probabilities(chan).tolist() if isinstance(chan.fading, Rayleigh) else None
    )

    init = init_params(task.layout, rngmod.stream(seed, "init"))
    full_mask = masks_for(task.layout, cfg.model.width_ratios)[-1]

    def grad_fn(indices):
        x, y = task.train.x[indices], task.train.y[indices]
        logits = forward(init, full_mask, x)
        return backward(init, full_mask, x, cross_entropy_grad(logits, y))

    skew_rng = rngmod.stream(seed, "skew")
    delta_hat, sigma_spread = estimate_data_skew(
        grad_fn, task.shards, cfg.training.batch_size, cfg.analysis.grad_batches, skew_rng
    )

    bound_curve = None
    noise_bound = None
    if probs is not None and probs[0] > 0:
        params = ConvergenceParams(
            strong_convexity=cfg.analysis.strong_convexity,
            smoothness=cfg.analysis.smoothness,
            grad_variance=delta_hat,
            init_distance_sq=cfg.analysis.init_distance_sq,
            decode_probs=(probs[0], probs[1]),
            st_weights=cfg.training.st_weights,
        )
        noise_bound = gradient_noise_bound(params)
        ts = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]
        bound_curve = [[t, optimality_gap_bound(params, t)] for t in ts]

    return {
        "decode_probs": probs,
        "power_split": {
            "numeric": split.lam_numeric,
            "closed_form": split.lam_closed,
            "closed_form_alt": split.lam_closed_alt,
            "alt_exceeds_one": split.lam_closed_alt > 1.0,
        },
        "objective_samples": samples,
        "message_powers_mw": [p * 1000.0 for p in chan.powers],
        "grad_variance_mean": delta_hat,
        "grad_variance_spread": sigma_spread,
        "gradient_noise_bound": noise_bound,
        "gap_bound_curve": bound_curve,
        "st_weights": list(cfg.training.st_weights),
    }
