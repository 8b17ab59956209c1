"""End-to-end federated round loop and strategy comparison.

Each round: vehicles train locally, upload their payload through the
stochastic channel, the server aggregates (per strategy), and the result
is broadcast back. For the clustered layer-wise strategy the server
additionally runs importance scoring to pick the transmission layers and
reclusters vehicles on CKA similarity of the uploaded layers.

Reported accuracy is personalised: every test sample is predicted by the
model of the vehicle that owns it, so a strategy only scores well if the
models vehicles actually hold fit their own traffic.

Failure semantics: vehicles whose uplink fails are excluded from that
round's aggregation (remaining weights renormalise); vehicles whose
downlink fails keep their locally trained model for the next round.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import (
    AggregationStrategy,
    fedlama_schedule,
    global_blend,
    inter_cluster_aggregate,
    intra_cluster_aggregate,
    mbp_prune,
    nonzero_param_count,
    weighted_layer_average,
)
from .clustering import ClusteringSelection, save_hierarchy_json, select_clustering
from .comms import (
    ChannelConfig,
    TransferOutcome,
    bytes_for_params,
    round_comm_metrics,
    save_outcomes_csv,
    transfer,
)
from .data import CATEGORIES, GenConfig, SampleSet, VehicleDataset, generate
from .nn import (
    Architecture,
    Model,
    TrainConfig,
    build_model,
    evaluate,
    forward,
    param_count,
    save_model,
    train_local,
)
from .rng import (
    TAG_CENTRAL,
    TAG_DOWNLINK,
    TAG_INIT,
    TAG_PERTURB,
    TAG_TRAIN,
    TAG_UPLINK,
    derive_seed,
    spawn,
)
from .sensitivity import (
    ImportanceReport,
    LayerSelection,
    ThresholdPolicy,
    full_selection,
    importance_scores,
    report_to_json,
    select_layers,
)
from .similarity import KernelConfig, SimilarityMatrix, save_similarity_csv, similarity_matrix

METRIC_COLUMNS = (
    "round",
    "global_test_accuracy",
    *[f"acc_{c}" for c in CATEGORIES],
    "params_transmitted",
    "bytes_up",
    "bytes_down",
    "transfer_success_rate",
    "chosen_k",
    "chosen_linkage",
    "reduction_factor",
)


@dataclass(frozen=True)
class RunConfig:
    strategy: AggregationStrategy = AggregationStrategy("sigla")
    rounds: int = 10
    gen: GenConfig = GenConfig()
    train: TrainConfig = TrainConfig()
    kernel: KernelConfig = KernelConfig()
    channel: ChannelConfig = ChannelConfig()
    policy: ThresholdPolicy = ThresholdPolicy.budget_fraction(0.5)
    arch: Architecture | None = None
    k_min: int = 2
    k_max: int | None = None
    recluster_every: int = 1
    reevaluate_selection: bool = False
    weighting: str = "similarity"
    inter_weight_reference: str = "primary"
    sensitivity_epsilon: float = 0.1
    sensitivity_trials: int = 3
    save_checkpoints: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.recluster_every < 1:
            raise ValueError("recluster_every must be >= 1")
        if self.weighting not in ("similarity", "uniform"):
            raise ValueError("weighting must be 'similarity' or 'uniform'")
        if self.inter_weight_reference not in ("primary", "super"):
            raise ValueError("inter_weight_reference must be 'primary' or 'super'")
        if self.sensitivity_trials < 1:
            raise ValueError("sensitivity_trials must be >= 1")

    def resolved_arch(self) -> Architecture:
        arch = self.arch or Architecture()
        arch = replace(
            arch,
            lidar_input=self.gen.lidar_dim,
            image_input=self.gen.image_dim,
            n_sectors=self.gen.n_sectors,
        )
        return arch

    def k_range(self, n_vehicles: int) -> range:
        lo = max(2, self.k_min)
        hi = self.k_max if self.k_max is not None else max(2, n_vehicles - 1)
        return range(lo, min(hi, n_vehicles) + 1)


@dataclass(frozen=True)
class RoundMetrics:
    round_idx: int
    global_test_accuracy: float
    per_category_accuracy: dict[str, float]
    params_transmitted: int
    bytes_up: int
    bytes_down: int
    transfer_success_rate: float
    chosen_k: int
    chosen_linkage: str
    reduction_factor: float

    def as_row(self) -> dict:
        row = {
            "round": self.round_idx,
            "global_test_accuracy": repr(self.global_test_accuracy),
            "params_transmitted": self.params_transmitted,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "transfer_success_rate": repr(self.transfer_success_rate),
            "chosen_k": self.chosen_k,
            "chosen_linkage": self.chosen_linkage,
            "reduction_factor": repr(self.reduction_factor),
        }
        for c in CATEGORIES:
            acc = self.per_category_accuracy.get(c)
            row[f"acc_{c}"] = "" if acc is None else repr(acc)
        return row


@dataclass
class RunResult:
    metrics: list[RoundMetrics]
    vehicle_models: dict[int, Model]
    datasets: list[VehicleDataset]
    planted: np.ndarray
    outcomes: list[TransferOutcome]
    final_selection: LayerSelection
    final_clustering: ClusteringSelection | None
    final_similarity: SimilarityMatrix | None
    reports: list[tuple[int, ImportanceReport]] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1].global_test_accuracy

    def total_params_transmitted(self) -> int:
        return sum(m.params_transmitted for m in self.metrics)


def predict_sector(model: Model, sample: np.ndarray) -> int:
    """Index of the most promising sector; ties go to the lowest index."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 1:
        sample = sample[None, :]
    if sample.shape[0] != 1:
        raise ValueError("predict_sector expects a single sample")
    return int(np.argmax(forward(model, sample)[0]))


def _selection_from_names(model: Model, names, threshold: float) -> LayerSelection:
    selected = tuple(n for n in model.layer_names if n in set(names))
    return LayerSelection(
        selected=selected,
        threshold=threshold,
        reduction_factor=param_count(model, selected) / param_count(model),
    )


def _owner_accuracy(models: dict[int, Model], datasets) -> tuple[float, dict[str, float]]:
    """Personalised test accuracy: each test sample scored by its owner."""
    correct = {c: 0 for c in CATEGORIES}
    total = {c: 0 for c in CATEGORIES}
    for ds in datasets:
        res = evaluate(models[ds.vehicle_id], ds.test_set)
        correct[ds.category] += int(res.correct.sum())
        total[ds.category] += len(res.correct)
    overall = sum(correct.values()) / sum(total.values())
    per_cat = {c: correct[c] / total[c] for c in CATEGORIES if total[c] > 0}
    return float(overall), per_cat


def _mean_model(models: list[Model], weights=None) -> Model:
    keyed = dict(enumerate(models))
    w = {i: 1.0 for i in keyed} if weights is None else dict(enumerate(weights))
    return weighted_layer_average(keyed, w)


def run(cfg: RunConfig, out_dir: str | None = None) -> RunResult:
    """Execute the full round loop for one strategy."""
    datasets, planted = generate(cfg.gen)
    n = cfg.gen.n_vehicles
    vehicles = list(range(n))
    arch = cfg.resolved_arch()
    init = build_model(arch, derive_seed(cfg.seed, TAG_INIT))
    total_params = param_count(init)

    vehicle_models = {v: init for v in vehicles}
    vehicle_refs = {v: init for v in vehicles}  # last model received from server
    server_cache = {v: init for v in vehicles}  # last upload seen by the server
    server_global = init
    probe = SampleSet(
        np.concatenate([d.features[d.val_idx] for d in datasets]),
        np.concatenate([d.labels[d.val_idx] for d in datasets]),
    )

    strategy = cfg.strategy
    uplink_selection = full_selection(init)  # round 1 bootstraps with everything
    selection_known = False
    clustering: ClusteringSelection | None = None
    sim: SimilarityMatrix | None = None
    labels = np.zeros(n, dtype=np.int64)
    coarser = np.zeros(n, dtype=np.int64)
    forced_single = (cfg.k_min == 1 and (cfg.k_max or 1) == 1) or n < 3
    train_sizes = {v: len(datasets[v].train_idx) for v in vehicles}

    if strategy.kind == "fedlama":
        base_schedule = strategy.period_schedule or {}
        schedule = {
            name: int(base_schedule.get(name, base_schedule.get("default", 1)))
            for name in init.layer_names
        }

    all_outcomes: list[TransferOutcome] = []
    metrics: list[RoundMetrics] = []
    reports: list[tuple[int, ImportanceReport]] = []
    checkpoints_dir = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if cfg.save_checkpoints:
            checkpoints_dir = os.path.join(out_dir, "checkpoints")
            os.makedirs(checkpoints_dir, exist_ok=True)

    for t in range(1, cfg.rounds + 1):
        # (1) local training
        trained = {}
        for v in vehicles:
            tc = replace(cfg.train, seed=derive_seed(cfg.seed, TAG_TRAIN, t, v))
            trained[v] = train_local(vehicle_models[v], datasets[v], tc)
            vehicle_models[v] = trained[v]

        # (2) uplink
        outcomes: list[TransferOutcome] = []
        round_selections: dict[int, LayerSelection] | None = None
        if strategy.kind == "mbp":
            uploads = {}
            for v in vehicles:
                pruned, _ = mbp_prune(trained[v], strategy.prune_fraction)
                uploads[v] = pruned
            uplink_params = {v: nonzero_param_count(uploads[v]) for v in vehicles}
            round_rf = uplink_params[vehicles[0]] / total_params
        elif strategy.kind == "fedlama":
            due = fedlama_schedule(t, schedule)
            sched_selection = (
                _selection_from_names(init, due, threshold=0.0) if due else None
            )
            uploads = dict(trained)
            uplink_params = {
                v: (param_count(init, sched_selection.selected) if sched_selection else 0)
                for v in vehicles
            }
            round_rf = (uplink_params[vehicles[0]] / total_params) if due else 0.0
            round_selections = (
                {v: sched_selection for v in vehicles} if sched_selection else None
            )
        elif strategy.kind == "sigla":
            uploads = dict(trained)
            uplink_params = {
                v: param_count(init, uplink_selection.selected) for v in vehicles
            }
            round_rf = uplink_selection.reduction_factor
            round_selections = {v: uplink_selection for v in vehicles}
        else:  # fedavg
            uploads = dict(trained)
            uplink_params = {v: total_params for v in vehicles}
            round_rf = 1.0
            round_selections = {v: full_selection(init) for v in vehicles}

        participants = []
        for v in vehicles:
            if uplink_params[v] == 0:
                continue  # nothing scheduled this round
            rng = spawn(cfg.seed, TAG_UPLINK, t, v)
            outcome = transfer(
                bytes_for_params(uplink_params[v], cfg.channel),
                cfg.channel,
                rng,
                vehicle_id=v,
                round_idx=t,
                direction="uplink",
                params=uplink_params[v],
            )
            outcomes.append(outcome)
            if outcome.success:
                participants.append(v)
                if strategy.kind == "sigla":
                    # reconstruct the full vector the server now knows:
                    # fresh selected layers + the reference it last sent
                    received = {
                        name: uploads[v].layer(name)
                        for name in uplink_selection.selected
                    }
                    server_cache[v] = vehicle_refs[v].with_layers(received)
                else:
                    server_cache[v] = uploads[v]

        chosen_k = 1
        chosen_linkage = "none"

        # (3)-(7) aggregation + downlink, per strategy
        if strategy.kind == "sigla":
            # (3) importance scoring on the current global, selection for
            # the next uplink (starts contributing from round 2)
            agg_selection = uplink_selection
            if t >= 2 and (cfg.reevaluate_selection or not selection_known):
                report = importance_scores(
                    server_global,
                    probe,
                    epsilon=cfg.sensitivity_epsilon,
                    n_trials=cfg.sensitivity_trials,
                    seed=derive_seed(cfg.seed, TAG_PERTURB, t),
                )
                reports.append((t, report))
                new_selection = select_layers(report, server_global, cfg.policy)
                selection_known = True
                # only layers that were actually uploaded can be aggregated
                usable = set(new_selection.selected) & set(uplink_selection.selected)
                agg_selection = _selection_from_names(
                    init, usable, new_selection.threshold
                )
                uplink_selection = new_selection

            # (4) similarity + clustering on what the server has
            cache_models = [server_cache[v] for v in vehicles]
            sim = similarity_matrix(cache_models, agg_selection.selected, cfg.kernel)
            if not forced_single and t >= 2:
                if clustering is None or (t % cfg.recluster_every) == 0:
                    clustering = select_clustering(sim, cfg.k_range(n))
                labels = clustering.labels
                coarser = clustering.coarser_labels
                chosen_k = clustering.n_clusters
                chosen_linkage = clustering.linkage

            # (5)-(6) per-cluster aggregation and blending
            cluster_model: dict[int, Model] = {}
            for c in np.unique(labels):
                members = [v for v in vehicles if labels[v] == c]
                present = [v for v in members if v in participants]
                reference = _mean_model([vehicle_refs[v] for v in members])
                if not present:
                    cluster_model[int(c)] = reference
                    continue
                theta_k = intra_cluster_aggregate(
                    server_cache,
                    present,
                    sim,
                    agg_selection,
                    reference,
                    weighting=cfg.weighting,
                )
                super_label = coarser[members[0]]
                super_members = [v for v in vehicles if coarser[v] == super_label]
                super_present = [v for v in super_members if v in participants]
                theta_k_plus = inter_cluster_aggregate(
                    server_cache,
                    super_present,
                    present,
                    sim,
                    agg_selection,
                    reference,
                    weight_reference=cfg.inter_weight_reference,
                    weighting=cfg.weighting,
                )
                cluster_model[int(c)] = global_blend(theta_k, theta_k_plus, agg_selection)

            sizes = [np.sum(labels == c) for c in sorted(cluster_model)]
            server_global = _mean_model(
                [cluster_model[c] for c in sorted(cluster_model)], sizes
            )

            # (7) downlink: every vehicle receives its cluster's blended
            # model. Only the selected layers travel, so the vehicle merges
            # them into its locally trained model and keeps its own
            # unselected layers.
            down_params = param_count(init, agg_selection.selected)
            for v in vehicles:
                rng = spawn(cfg.seed, TAG_DOWNLINK, t, v)
                outcome = transfer(
                    bytes_for_params(down_params, cfg.channel),
                    cfg.channel,
                    rng,
                    vehicle_id=v,
                    round_idx=t,
                    direction="downlink",
                    params=down_params,
                )
                outcomes.append(outcome)
                if outcome.success:
                    broadcast = cluster_model[int(labels[v])]
                    received = {
                        name: broadcast.layer(name) for name in agg_selection.selected
                    }
                    vehicle_models[v] = trained[v].with_layers(received)
                    vehicle_refs[v] = broadcast
            if checkpoints_dir:
                for c, m in cluster_model.items():
                    save_model(
                        m, os.path.join(checkpoints_dir, f"round{t:03d}_cluster{c}.bin")
                    )

        elif strategy.kind == "fedlama":
            if sched_selection is not None and participants:
                counts = {v: float(train_sizes[v]) for v in participants}
                server_global = weighted_layer_average(
                    {v: server_cache[v] for v in participants},
                    counts,
                    sched_selection,
                    server_global,
                )
            if sched_selection is not None:
                down_params = param_count(init, sched_selection.selected)
                for v in vehicles:
                    rng = spawn(cfg.seed, TAG_DOWNLINK, t, v)
                    outcome = transfer(
                        bytes_for_params(down_params, cfg.channel),
                        cfg.channel,
                        rng,
                        vehicle_id=v,
                        round_idx=t,
                        direction="downlink",
                        params=down_params,
                    )
                    outcomes.append(outcome)
                    if outcome.success:
                        received = {
                            name: server_global.layer(name)
                            for name in sched_selection.selected
                        }
                        vehicle_models[v] = trained[v].with_layers(received)
                        vehicle_refs[v] = vehicle_models[v]

        else:  # fedavg and mbp share the flow; mbp averages pruned uploads
            if participants:
                counts = {v: float(train_sizes[v]) for v in participants}
                server_global = weighted_layer_average(
                    {v: server_cache[v] for v in participants}, counts
                )
            for v in vehicles:
                rng = spawn(cfg.seed, TAG_DOWNLINK, t, v)
                outcome = transfer(
                    bytes_for_params(total_params, cfg.channel),
                    cfg.channel,
                    rng,
                    vehicle_id=v,
                    round_idx=t,
                    direction="downlink",
                    params=total_params,
                )
                outcomes.append(outcome)
                if outcome.success:
                    vehicle_models[v] = server_global
                    vehicle_refs[v] = server_global

        # (8) metrics
        comm = round_comm_metrics(outcomes, round_selections, init)
        accuracy, per_cat = _owner_accuracy(vehicle_models, datasets)
        metrics.append(
            RoundMetrics(
                round_idx=t,
                global_test_accuracy=accuracy,
                per_category_accuracy=per_cat,
                params_transmitted=comm.params_transmitted,
                bytes_up=comm.bytes_up,
                bytes_down=comm.bytes_down,
                transfer_success_rate=comm.success_rate,
                chosen_k=chosen_k,
                chosen_linkage=chosen_linkage,
                reduction_factor=round_rf,
            )
        )
        all_outcomes.extend(outcomes)

    result = RunResult(
        metrics=metrics,
        vehicle_models=vehicle_models,
        datasets=datasets,
        planted=planted,
        outcomes=all_outcomes,
        final_selection=uplink_selection,
        final_clustering=clustering,
        final_similarity=sim,
        reports=reports,
    )
    if out_dir:
        write_run_artifacts(cfg, result, out_dir)
    return result


def save_metrics_csv(metrics, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for m in metrics:
            writer.writerow(m.as_row())


def write_run_artifacts(cfg: RunConfig, result: RunResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_metrics_csv(result.metrics, os.path.join(out_dir, "metrics.csv"))
    save_outcomes_csv(result.outcomes, os.path.join(out_dir, "outcomes.csv"))
    if result.final_similarity is not None:
        save_similarity_csv(result.final_similarity, os.path.join(out_dir, "similarity.csv"))
    if result.final_clustering is not None:
        save_hierarchy_json(
            result.final_clustering.hierarchy, os.path.join(out_dir, "hierarchy.json")
        )
    if result.reports:
        t, report = result.reports[-1]
        doc = report_to_json(report)
        doc["round"] = t
        with open(os.path.join(out_dir, "importance.json"), "w") as f:
            json.dump(doc, f, indent=2)
    summary = {
        "strategy": cfg.strategy.kind,
        "rounds": cfg.rounds,
        "seed": cfg.seed,
        "final_accuracy": result.final_accuracy,
        "total_params_transmitted": result.total_params_transmitted(),
        "final_reduction_factor": result.metrics[-1].reduction_factor,
        "mean_success_rate": float(
            np.mean([m.transfer_success_rate for m in result.metrics])
        ),
        "chosen_k": result.metrics[-1].chosen_k,
        "chosen_linkage": result.metrics[-1].chosen_linkage,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)


# ---------------------------------------------------------------------------
# centralized upper bound + strategy comparison


def centralized_run(cfg: RunConfig):
    """Train one model on all pooled training data (upper-bound baseline).

    Does one local-epochs block per round so its accuracy curve is
    comparable to the federated runs; evaluation uses the combined test
    set with the single pooled model.
    """
    datasets, _ = generate(cfg.gen)
    pooled = VehicleDataset(
        vehicle_id=-1,
        features=np.concatenate([d.features[d.train_idx] for d in datasets]),
        labels=np.concatenate([d.labels[d.train_idx] for d in datasets]),
        category="combined",
        train_idx=np.arange(sum(len(d.train_idx) for d in datasets), dtype=np.int64),
        val_idx=np.empty(0, dtype=np.int64),
        test_idx=np.empty(0, dtype=np.int64),
    )
    arch = cfg.resolved_arch()
    model = build_model(arch, derive_seed(cfg.seed, TAG_INIT))
    metrics = []
    for t in range(1, cfg.rounds + 1):
        tc = replace(cfg.train, seed=derive_seed(cfg.seed, TAG_CENTRAL, t))
        model = train_local(model, pooled, tc)
        accuracy, per_cat = _owner_accuracy({d.vehicle_id: model for d in datasets}, datasets)
        metrics.append(
            RoundMetrics(
                round_idx=t,
                global_test_accuracy=accuracy,
                per_category_accuracy=per_cat,
                params_transmitted=0,
                bytes_up=0,
                bytes_down=0,
                transfer_success_rate=0.0,
                chosen_k=1,
                chosen_linkage="none",
                reduction_factor=0.0,
            )
        )
    return metrics, model


def convergence_round(accuracies) -> int:
    """First round reaching 99% of the run's own peak accuracy."""
    accs = list(accuracies)
    target = 0.99 * max(accs)
    for i, a in enumerate(accs, start=1):
        if a >= target:
            return i
    return len(accs)


def compare_strategies(
    base_cfg: RunConfig, strategies, include_centralized: bool = True
) -> list[dict]:
    """Run each strategy on identical data and seeds; return summary rows."""
    strategies = list(strategies)
    if not strategies and not include_centralized:
        raise ValueError("no strategies to compare")
    rows = []
    if include_centralized:
        metrics, _ = centralized_run(base_cfg)
        accs = [m.global_test_accuracy for m in metrics]
        rows.append(
            {
                "strategy": "centralized",
                "final_accuracy": accs[-1],
                "convergence_round": convergence_round(accs),
                "total_params_transmitted": 0,
                "mean_success_rate": None,
            }
        )
    for strat in strategies:
        result = run(replace(base_cfg, strategy=strat))
        accs = [m.global_test_accuracy for m in result.metrics]
        name = strat.kind
        if strat.kind == "mbp":
            name = f"mbp({strat.prune_fraction})"
        rows.append(
            {
                "strategy": name,
                "final_accuracy": accs[-1],
                "convergence_round": convergence_round(accs),
                "total_params_transmitted": result.total_params_transmitted(),
                "mean_success_rate": float(
                    np.mean([m.transfer_success_rate for m in result.metrics])
                ),
            }
        )
    return rows


def save_comparison_csv(rows, path) -> None:
    fields = [
        "strategy",
        "final_accuracy",
        "convergence_round",
        "total_params_transmitted",
        "mean_success_rate",
    ]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for k in ("final_accuracy", "mean_success_rate"):
                out[k] = "" if out[k] is None else repr(out[k])
            writer.writerow(out)
