"""
Experiment commands: reorder, train, eval, ablate-pe, robustness and lr-search.

Each command takes resolved configs, writes its records through a
MetricsWriter and prints a summary to the console. Nothing here touches
sys.exit; main.py owns exit codes.
"""

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from rich.console import Console
from rich.table import Table

from models.errors import NumericalOverflowError, TrainingDivergedError, UsageError
from models.geometry import normalize, farthest_point_sampling
from models.metrics import MetricsWriter
from models.perturb import KINDS, APPLY_TO, PerturbSpec, apply_to_items
from models.pipeline import prepare_items
from models.point_io import load_cloud, load_dataset_dir
from models.point_mamba import PointSequenceClassifier, parameter_count
from models.serializer import serialize, adjacent_distances, ordering_stats
from models.shapes import gen_shape, make_dataset
from models.trainer import COARSE_LR_GRID, seed_everything, train, evaluate, lr_search
from views.metrics_view import MetricsView
from views.ordering_view import OrderingView

log = logging.getLogger(__name__)

ABLATION_ORDERINGS = ("nimba", "axis-triple")
TRAIN_NOISE_OFFSET = 1
TEST_NOISE_OFFSET = 2


@dataclass
class AblationRow:
    ordering: str
    pe: bool
    acc: float
    std: float
    gap: float = 0.0
    accs: list = field(default_factory=list)


@dataclass
class RobustnessCell:
    kind: str
    apply_to: str
    ordering: str
    acc: float
    std: float
    drop: float
    accs: list = field(default_factory=list)


@dataclass
class RobustnessResult:
    baseline: dict
    cells: list
    kinds: tuple = KINDS

    def matrix(self, value="acc"):
        """Array of shape (len(kinds), len(APPLY_TO), len(ABLATION_ORDERINGS)) over the kinds that were run."""
        lookup = {(c.kind, c.apply_to, c.ordering): getattr(c, value) for c in self.cells}
        return np.array([[[lookup[(k, a, o)] for o in ABLATION_ORDERINGS] for a in APPLY_TO] for k in self.kinds])


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())


class MainController:
    def __init__(self, console=None, metrics=None):
        self.console = console or Console()
        self.metrics = metrics or MetricsWriter(None, "pointseq")

    # --- data ---
    def load_data(self, model_cfg, train_cfg, data_dir=None, seed=None):
        seed = train_cfg.seed if seed is None else seed
        if data_dir:
            return load_dataset_dir(data_dir, model_cfg.n_points, seed)
        return make_dataset(train_cfg.classes, train_cfg.per_class, model_cfg.n_points, seed,
                            train_cfg.random_pose)

    def _fit(self, model_cfg, train_cfg, train_items, test_items, tag=None, on_ready=None):
        """Seed, build and train one model; returns (model, report, train_samples, test_samples).

        `on_ready(model, train_samples, test_samples)` runs after initialization, before the first step.
        """
        seed_everything(train_cfg.seed, train_cfg.threads)
        model = PointSequenceClassifier(model_cfg)
        train_samples = prepare_items(train_items, model_cfg)
        test_samples = prepare_items(test_items, model_cfg)
        if on_ready is not None:
            on_ready(model, train_samples, test_samples)

        def on_epoch(record):
            self.metrics.write("epoch", tag=tag, **vars(record))

        try:
            report = train(model, train_samples, test_samples, train_cfg, on_epoch=on_epoch)
        except (TrainingDivergedError, NumericalOverflowError) as e:
            self.metrics.write("diverged", tag=tag, epoch=e.epoch, reason=str(e))
            raise
        return model, report, train_samples, test_samples

    # --- reorder ---
    def cmd_reorder(self, model_cfg, input_path=None, shape=None, strategy=None, r=None,
                    output_path=None, plot_path=None, seed=0):
        """Serialize the FPS centers of one cloud and report the processing path."""
        if (input_path is None) == (shape is None):
            raise UsageError("reorder needs exactly one of an input path or --shape")
        if input_path is not None:
            cloud = load_cloud(input_path, model_cfg.n_points, seed)
        else:
            cloud = gen_shape(shape, model_cfg.n_points, seed)
        strategy = strategy or model_cfg.ordering
        r = model_cfg.r if r is None else r

        cloud = normalize(cloud)
        centers, rows = farthest_point_sampling(cloud, model_cfg.n_c)
        serialization = serialize(centers, strategy, r=r, candidate=model_cfg.candidate)
        stats = ordering_stats(centers, serialization, r)
        result = {
            "strategy": serialization.strategy.value,
            "r": r,
            "n_c": serialization.n_c,
            "sequence_length": serialization.sequence_length,
            "order": serialization.order.tolist(),
            "source_indices": cloud.source_indices[rows][serialization.order].tolist(),
            "centers": centers.tolist(),
            "distances": adjacent_distances(centers, serialization).tolist(),
            "stats": stats,
        }
        if output_path:
            with open(output_path, "w", encoding="utf-8") as f:
                json.dump(result, f, indent=2)
            log.info("ordering written to %s", output_path)
        self.metrics.write("reorder", **{k: v for k, v in result.items() if k != "centers"})

        self.console.print(f"[bold]{result['strategy']}[/bold]  length {result['sequence_length']}  "
                           f"within r: {stats['within_r']:.3f}  mean gap {stats['mean_gap']:.3f}  "
                           f"max gap {stats['max_gap']:.3f}  moves {stats['moves']}")
        if plot_path:
            view = OrderingView()
            view.plot_path(centers, serialization)
            view.save(plot_path)
        return result

    # --- train / eval ---
    def cmd_train(self, model_cfg, train_cfg, data_dir=None, checkpoint_path=None):
        dataset = self.load_data(model_cfg, train_cfg, data_dir)
        if model_cfg.num_classes < len(dataset.class_names):
            model_cfg = replace(model_cfg, num_classes=len(dataset.class_names))

        initial = {}

        def on_ready(model, train_samples, test_samples):
            within = [ordering_stats(s.centers, s.serialization, model_cfg.r)["within_r"] for s in train_samples]
            self.metrics.write("run", ordering=model_cfg.ordering, pe=model_cfg.use_positional_embedding,
                               sequence_length=model_cfg.sequence_length, parameters=parameter_count(model),
                               train_items=len(train_samples), test_items=len(test_samples),
                               mean_within_r=float(np.mean(within)))
            acc, loss = evaluate(model, test_samples, train_cfg.batch_size)
            initial["acc"] = acc
            self.metrics.write("eval", stage="initial", acc=acc, loss=loss)

        model, report, _, test_samples = self._fit(model_cfg, train_cfg, dataset.train(), dataset.test(),
                                                   on_ready=on_ready)
        final_acc, final_loss = evaluate(model, test_samples, train_cfg.batch_size)
        self.metrics.write("eval", stage="final", acc=final_acc, loss=final_loss)
        if checkpoint_path:
            model.save(checkpoint_path)

        self.console.print(f"ordering [bold]{model_cfg.ordering}[/bold]  "
                           f"PE {'on' if model_cfg.use_positional_embedding else 'off'}  "
                           f"length {model_cfg.sequence_length}  "
                           f"test acc {initial['acc']:.3f} -> [bold]{final_acc:.3f}[/bold]")
        return model, report

    def cmd_eval(self, checkpoint_path, train_cfg, data_dir=None, perturb=None):
        model = PointSequenceClassifier.load(checkpoint_path)
        model_cfg = model.config
        dataset = self.load_data(model_cfg, train_cfg, data_dir)
        test_items = dataset.test()
        if perturb is not None:
            test_items = apply_to_items(test_items, perturb, seed=perturb.seed + TEST_NOISE_OFFSET)
        samples = prepare_items(test_items, model_cfg)
        acc, loss = evaluate(model, samples, train_cfg.batch_size)
        self.metrics.write("eval", stage="checkpoint", checkpoint=str(checkpoint_path),
                           ordering=model_cfg.ordering, pe=model_cfg.use_positional_embedding,
                           sequence_length=model_cfg.sequence_length,
                           perturb=perturb.to_dict() if perturb else None, acc=acc, loss=loss)
        self.console.print(f"{checkpoint_path}: test acc [bold]{acc:.3f}[/bold]  loss {loss:.4f}")
        return acc, loss

    # --- positional embedding ablation ---
    def cmd_ablate_pe(self, model_cfg, train_cfg, seeds=None, data_dir=None, plot_path=None):
        """{nimba, axis-triple} x {PE on, PE off}, identical seeds in every cell."""
        seeds = tuple(seeds or train_cfg.seeds)
        accs = {(o, pe): [] for o in ABLATION_ORDERINGS for pe in (True, False)}
        for seed in seeds:
            cfg_train = replace(train_cfg, seed=seed)
            dataset = self.load_data(model_cfg, cfg_train, data_dir)
            for ordering in ABLATION_ORDERINGS:
                for pe in (True, False):
                    cfg_model = replace(model_cfg, ordering=ordering, use_positional_embedding=pe)
                    tag = f"{ordering}/pe-{'on' if pe else 'off'}/seed-{seed}"
                    _, report, _, _ = self._fit(cfg_model, cfg_train, dataset.train(), dataset.test(), tag)
                    accs[(ordering, pe)].append(report.final_test_acc)
                    self.metrics.write("ablation_run", ordering=ordering, pe=pe, seed=seed,
                                       acc=report.final_test_acc)

        rows = []
        for ordering in ABLATION_ORDERINGS:
            on_mean, on_std = _mean_std(accs[(ordering, True)])
            off_mean, off_std = _mean_std(accs[(ordering, False)])
            gap = on_mean - off_mean
            rows.append(AblationRow(ordering, True, on_mean, on_std, gap, accs[(ordering, True)]))
            rows.append(AblationRow(ordering, False, off_mean, off_std, gap, accs[(ordering, False)]))
        for row in rows:
            self.metrics.write("ablation_row", ordering=row.ordering, pe=row.pe, acc=row.acc,
                               std=row.std, gap=row.gap, seeds=list(seeds))

        table = Table(title=f"Positional embedding ablation ({len(seeds)} seeds)")
        for column in ("ordering", "PE", "acc", "std", "gap (on - off)"):
            table.add_column(column)
        for row in rows:
            table.add_row(row.ordering, "on" if row.pe else "off", f"{row.acc:.4f}",
                          f"{row.std:.4f}", f"{row.gap:+.4f}")
        self.console.print(table)
        if plot_path:
            view = MetricsView()
            view.plot_pe_ablation(rows)
            view.save(plot_path)
        return rows

    # --- robustness matrix ---
    def cmd_robustness(self, model_cfg, train_cfg, seeds=None, data_dir=None, noise=None,
                       plot_path=None, kinds=KINDS):
        """Noise kind x {train, test, both} x {nimba, axis-triple}.

        Test-only cells reuse the clean baseline model; a model trained on noisy
        data serves both its train-only and both cells.
        """
        seeds = tuple(seeds or train_cfg.seeds)
        noise = dict(noise or {})
        baseline = {o: [] for o in ABLATION_ORDERINGS}
        accs = {(k, a, o): [] for k in kinds for a in APPLY_TO for o in ABLATION_ORDERINGS}

        for seed in seeds:
            cfg_train = replace(train_cfg, seed=seed)
            dataset = self.load_data(model_cfg, cfg_train, data_dir)
            clean_train, clean_test = dataset.train(), dataset.test()
            for ordering in ABLATION_ORDERINGS:
                cfg_model = replace(model_cfg, ordering=ordering)
                tag = f"{ordering}/clean/seed-{seed}"
                model, report, _, clean_samples = self._fit(cfg_model, cfg_train, clean_train, clean_test, tag)
                baseline[ordering].append(report.final_test_acc)
                for kind in kinds:
                    spec = PerturbSpec(kind, "both", seed=seed, **noise)
                    noisy_test = apply_to_items(clean_test, spec, seed=seed + TEST_NOISE_OFFSET)
                    noisy_samples = prepare_items(noisy_test, cfg_model)
                    accs[(kind, "test", ordering)].append(evaluate(model, noisy_samples)[0])

                    noisy_train = apply_to_items(clean_train, spec, seed=seed + TRAIN_NOISE_OFFSET)
                    noisy_model, noisy_report, _, _ = self._fit(
                        cfg_model, cfg_train, noisy_train, clean_test, f"{ordering}/{kind}-train/seed-{seed}")
                    accs[(kind, "train", ordering)].append(noisy_report.final_test_acc)
                    accs[(kind, "both", ordering)].append(evaluate(noisy_model, noisy_samples)[0])

        base = {o: _mean_std(v) for o, v in baseline.items()}
        for ordering, (mean, std) in base.items():
            self.metrics.write("baseline", ordering=ordering, acc=mean, std=std, seeds=list(seeds))
        cells = []
        for (kind, apply_to, ordering), values in accs.items():
            mean, std = _mean_std(values)
            cell = RobustnessCell(kind, apply_to, ordering, mean, std, base[ordering][0] - mean, values)
            cells.append(cell)
            self.metrics.write("cell", kind=kind, apply_to=apply_to, ordering=ordering,
                               acc=mean, std=std, drop=cell.drop, accs=values)

        table = Table(title=f"Robustness ({len(seeds)} seeds; clean "
                            + ", ".join(f"{o} {m:.3f}" for o, (m, _) in base.items()) + ")")
        table.add_column("noise")
        table.add_column("applied to")
        for ordering in ABLATION_ORDERINGS:
            table.add_column(f"{ordering} acc (drop)")
        for kind in kinds:
            for apply_to in APPLY_TO:
                by_ordering = {c.ordering: c for c in cells if c.kind == kind and c.apply_to == apply_to}
                table.add_row(kind, apply_to, *(f"{by_ordering[o].acc:.3f} ({by_ordering[o].drop:+.3f})"
                                                for o in ABLATION_ORDERINGS))
        self.console.print(table)
        if plot_path:
            view = MetricsView(figsize=(9, 4.5))
            view.plot_robustness(cells, list(kinds), list(APPLY_TO), list(ABLATION_ORDERINGS))
            view.save(plot_path)
        return RobustnessResult({o: m for o, (m, _) in base.items()}, cells, tuple(kinds))

    # --- learning-rate search ---
    def cmd_lr_search(self, model_cfg, train_cfg, data_dir=None, coarse=COARSE_LR_GRID):
        dataset = self.load_data(model_cfg, train_cfg, data_dir)
        train_samples = prepare_items(dataset.train(), model_cfg)
        test_samples = prepare_items(dataset.test(), model_cfg)

        def build_model():
            seed_everything(train_cfg.seed, train_cfg.threads)
            return PointSequenceClassifier(model_cfg)

        def on_trial(lr, acc):
            self.metrics.write("lr_trial", lr=lr, acc=acc)
            self.console.print(f"  lr {lr:.3g}: test acc {acc:.3f}")

        best, trials = lr_search(build_model, train_samples, test_samples, train_cfg, coarse=coarse,
                                  on_trial=on_trial)
        self.metrics.write("lr_result", best_lr=best, trials=[list(t) for t in trials])
        self.console.print(f"best learning rate [bold]{best:.3g}[/bold]")
        return best, trials

