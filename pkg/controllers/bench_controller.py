"""
Mixer throughput benchmark.

Part "serialization": S6 forward at n_c tokens against 3 * n_c tokens, per width.
Part "mixer": S6 against softmax attention over a range of sequence lengths.
Timings are medians over `repeats` runs after `warmup` untimed runs, single thread.
"""

import logging
import time
from dataclasses import dataclass, asdict

import numpy as np
import torch
from rich.console import Console
from rich.table import Table

from models.errors import InvalidParameterError
from models.metrics import MetricsWriter, machine_info
from models.ssm import S6Params, AttnParams, s6_scan, sdpa
from views.metrics_view import MetricsView

log = logging.getLogger(__name__)

DEFAULT_WIDTHS = (16, 32, 64, 128)
DEFAULT_LENGTHS = (64, 128, 256, 512, 1024)
BENCH_DTYPE = torch.float32


@dataclass
class BenchRecord:
    part: str
    mixer: str
    width: int
    length: int
    median: float
    iqr: float
    repeats: int


def time_call(fn, repeats, warmup):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    q1, median, q3 = np.percentile(samples, [25, 50, 75])
    return float(median), float(q3 - q1)


class BenchController:
    def __init__(self, console=None, metrics=None):
        self.console = console or Console()
        self.metrics = metrics or MetricsWriter(None, "bench")

    def _record(self, record):
        self.metrics.write("bench", **asdict(record))
        return record

    def cmd_bench(self, widths=DEFAULT_WIDTHS, lengths=DEFAULT_LENGTHS, repeats=5, warmup=2,
                  n_c=64, d_state=16, batch=4, mixer_width=64, seed=0, plot_path=None):
        if repeats < 1 or warmup < 0:
            raise InvalidParameterError("repeats must be >= 1 and warmup >= 0")
        previous_threads = torch.get_num_threads()
        torch.set_num_threads(1)
        g = torch.Generator().manual_seed(seed)
        records = []
        try:
            with torch.no_grad():
                for width in widths:
                    p = S6Params.random(width, d_state, seed=seed, dtype=BENCH_DTYPE)
                    for length in (n_c, 3 * n_c):
                        X = torch.randn(batch, length, width, generator=g, dtype=BENCH_DTYPE)
                        median, iqr = time_call(lambda: s6_scan(p, X), repeats, warmup)
                        records.append(self._record(
                            BenchRecord("serialization", "s6", width, length, median, iqr, repeats)))

                s6 = S6Params.random(mixer_width, d_state, seed=seed, dtype=BENCH_DTYPE)
                attn = AttnParams.random(mixer_width, seed=seed, dtype=BENCH_DTYPE)
                for length in lengths:
                    X = torch.randn(batch, length, mixer_width, generator=g, dtype=BENCH_DTYPE)
                    for name, fn in (("s6", lambda: s6_scan(s6, X)), ("attention", lambda: sdpa(attn, X))):
                        median, iqr = time_call(fn, repeats, warmup)
                        records.append(self._record(
                            BenchRecord("mixer", name, mixer_width, length, median, iqr, repeats)))
        finally:
            torch.set_num_threads(previous_threads)

        self._print(records)
        if plot_path:
            view = MetricsView()
            view.plot_bench(records)
            view.save(plot_path)
        return records

    def _print(self, records):
        info = machine_info()
        table = Table(title=f"S6 cost at n_c vs 3 n_c ({info['machine']}, 1 thread)")
        for column in ("width", "length", "median [ms]", "IQR [ms]"):
            table.add_column(column, justify="right")
        for r in records:
            if r.part == "serialization":
                table.add_row(str(r.width), str(r.length), f"{r.median * 1e3:.3f}", f"{r.iqr * 1e3:.3f}")
        self.console.print(table)

        table = Table(title="Mixer scaling")
        for column in ("mixer", "length", "median [ms]", "IQR [ms]"):
            table.add_column(column, justify="right")
        for r in records:
            if r.part == "mixer":
                table.add_row(r.mixer, str(r.length), f"{r.median * 1e3:.3f}", f"{r.iqr * 1e3:.3f}")
        self.console.print(table)


def doubling_ratio(records, mixer, short, long):
    """t(long) / t(short) of the mixer part, by median."""
    by_length = {r.length: r.median for r in records if r.part == "mixer" and r.mixer == mixer}
    return by_length[long] / by_length[short]


def triple_is_slower(records):
    """{width: True if S6 at 3 n_c has a strictly larger median than at n_c}."""
    out = {}
    for width in dict.fromkeys(r.width for r in records if r.part == "serialization"):
        rows = sorted((r for r in records if r.part == "serialization" and r.width == width),
                      key=lambda r: r.length)
        out[width] = rows[-1].median > rows[0].median
    return out
