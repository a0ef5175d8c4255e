#!/usr/bin/env python3
"""
Desk-scale trend validation for pointseq.

These runs train real models on the synthetic shape dataset and take
minutes rather than seconds, so they live outside the pytest suite.

Usage:
    python software-verification/validation/validate_trends.py
    python software-verification/validation/validate_trends.py --verbose --seeds 0,123,777
    python software-verification/validation/validate_trends.py --only bench
"""

import sys
import argparse
import logging
from dataclasses import replace
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import matplotlib  # noqa: E402

matplotlib.use("Agg")

from rich.console import Console  # noqa: E402
from rich.logging import RichHandler  # noqa: E402

from controllers.bench_controller import BenchController, doubling_ratio, triple_is_slower  # noqa: E402
from controllers.main_controller import MainController  # noqa: E402
from models.config import resolve  # noqa: E402
from models.metrics import MetricsWriter  # noqa: E402
from models.perturb import KINDS  # noqa: E402

LEARNING_THRESHOLD = 0.90


def print_header(text):
    """Print a formatted header."""
    print(f"\n{'='*60}")
    print(f" {text}")
    print(f"{'='*60}")


def print_result(test_name, passed, details=""):
    """Print test result."""
    status = "✓ PASS" if passed else "✗ FAIL"
    print(f"  [{status}] {test_name}")
    if details and not passed:
        print(f"        {details}")


class TrendRunner:
    def __init__(self, seeds, verbose=False, metrics_path=None, kinds=KINDS):
        self.seeds = tuple(seeds)
        self.kinds = tuple(kinds)
        self.console = Console(quiet=not verbose)
        self.metrics = MetricsWriter(metrics_path, "validate-trends")
        self.model_cfg, train_cfg = resolve("desk")
        # only the final test accuracy is compared
        self.train_cfg = replace(train_cfg, eval_every=0)
        self.controller = MainController(self.console, self.metrics)

    def validate_learning(self):
        """4 classes x 50 shapes, nimba, PE off: mean test accuracy >= 0.90."""
        model_cfg = replace(self.model_cfg, ordering="nimba", use_positional_embedding=False)
        accs = []
        for seed in self.seeds:
            _, report = self.controller.cmd_train(model_cfg, replace(self.train_cfg, seed=seed))
            accs.append(report.final_test_acc)
        mean = sum(accs) / len(accs)
        return mean >= LEARNING_THRESHOLD, f"mean accuracy {mean:.4f} over seeds {self.seeds}: {accs}"

    def validate_pe_gap(self):
        """PE gap (on - off) for nimba no larger than for axis-triple."""
        rows = self.controller.cmd_ablate_pe(self.model_cfg, self.train_cfg, self.seeds)
        gaps = {row.ordering: row.gap for row in rows if row.pe}
        return gaps["nimba"] <= gaps["axis-triple"], f"gaps: {gaps}"

    def validate_rotation(self):
        """Test-only rotation drop for nimba no larger than for axis-triple."""
        result = self.controller.cmd_robustness(self.model_cfg, self.train_cfg, self.seeds, kinds=self.kinds)
        drops = {c.ordering: c.drop for c in result.cells if c.kind == "rotation" and c.apply_to == "test"}
        return drops["nimba"] <= drops["axis-triple"], f"rotation/test drops: {drops}"

    def validate_bench(self):
        """S6 slower at 3 n_c than at n_c; attention scales worse than S6 from 512 to 1024 tokens."""
        bench = BenchController(self.console, self.metrics)
        records = bench.cmd_bench(lengths=(512, 1024))
        slower = triple_is_slower(records)
        attention = doubling_ratio(records, "attention", 512, 1024)
        s6 = doubling_ratio(records, "s6", 512, 1024)
        passed = all(slower.values()) and attention > s6
        return passed, f"3n_c slower per width: {slower}; ratio attention {attention:.2f} vs s6 {s6:.2f}"


def main():
    parser = argparse.ArgumentParser(description='Validate pointseq desk-scale trends')
    parser.add_argument('--verbose', '-v', action='store_true', help='Verbose output')
    parser.add_argument('--seeds', default='0,123,777', help='comma separated seeds')
    parser.add_argument('--only', choices=('learning', 'pe-gap', 'rotation', 'bench'), default=None)
    parser.add_argument('--full-matrix', action='store_true',
                        help='train every noise kind, not only rotation, in the robustness run')
    parser.add_argument('--metrics-out', default=None, help='JSON Lines metrics file')
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        handlers=[RichHandler(show_path=False)], force=True)
    # per-epoch lines from the trainer show progress through the long runs
    logging.getLogger("models.trainer").setLevel(logging.INFO)

    seeds = [int(s) for s in args.seeds.split(',') if s.strip()]
    kinds = KINDS if args.full_matrix else ("rotation",)
    runner = TrendRunner(seeds, args.verbose, args.metrics_out, kinds)

    print_header("pointseq Trend Validation")
    print(f"Desk preset, seeds {seeds}...\n")

    tests = [
        ("learning", "Desk-scale learning (>= 90%)", runner.validate_learning),
        ("pe-gap", "PE gap: nimba <= axis-triple", runner.validate_pe_gap),
        ("rotation", "Rotation drop: nimba <= axis-triple", runner.validate_rotation),
        ("bench", "S6 vs attention scaling", runner.validate_bench),
    ]
    if args.only:
        tests = [t for t in tests if t[0] == args.only]

    passed = 0
    failed = 0

    for _, test_name, test_func in tests:
        try:
            result, details = test_func()
            print_result(test_name, result, details)
            if result:
                passed += 1
            else:
                failed += 1
            if args.verbose:
                print(f"        Details: {details}")
        except Exception as e:
            print_result(test_name, False, str(e))
            failed += 1

    runner.metrics.close()
    print(f"\n{'='*60}")
    print(f" Results: {passed} passed, {failed} failed out of {len(tests)} tests")
    print(f"{'='*60}\n")

    return 0 if failed == 0 else 1


if __name__ == '__main__':
    sys.exit(main())
