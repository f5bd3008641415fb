"""The default desk-scale synthetic benchmark.

One frozen configuration shared by the CLI, the experiment scripts, and the
acceptance suite: 32x32 phantoms at b-analogs 1000/2000/3000 with Rician
sigma 0.02, a 90-direction electrostatic full protocol, and the
learned/random/uniform method matrix over n in {3, 6, 9} with 3 seeds.

Training runs use hidden width 64 (not the library default 256) so the full
matrix fits a laptop-CPU time budget, and a sampling lr of 1e-4 (not 1e-3)
because the small phantoms make angle gradients noisy; everything else
follows the library defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .phantom import make_dataset
from .sphere import Protocol, electrostatic_protocol
from .train import MetricsRecord, TrainConfig, evaluate, train_joint

TRAIN_B = 1000.0


@dataclass(frozen=True)
class BenchmarkSpec:
    n_train: int = 256
    n_val: int = 8
    n_test: int = 16
    size: int = 32
    bvalues: tuple[float, ...] = (1000.0, 2000.0, 3000.0)
    sigma: float = 0.02
    dataset_seed: int = 1
    protocol_seed: int = 0
    protocol_iterations: int = 3000
    methods: tuple[str, ...] = ("learned", "random-frozen")
    ns: tuple[int, ...] = (3, 6, 9)
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 50
    hidden: int = 64
    # Small phantoms make the angle gradients noisy; a gentle sampling lr
    # keeps the well-spread initialization while still adapting.
    lr_sampling: float = 1e-4

    @property
    def count(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def ratios(self) -> tuple[float, float, float]:
        c = self.count
        return (self.n_train / c, self.n_val / c, self.n_test / c)


def benchmark_protocol(spec: BenchmarkSpec = BenchmarkSpec()) -> Protocol:
    return electrostatic_protocol(90, iterations=spec.protocol_iterations,
                                  seed=spec.protocol_seed)


def benchmark_dataset(spec: BenchmarkSpec = BenchmarkSpec(),
                      protocol: Protocol | None = None) -> dict:
    if protocol is None:
        protocol = benchmark_protocol(spec)
    return make_dataset(spec.count, spec.ratios, protocol, list(spec.bvalues),
                        spec.sigma, spec.dataset_seed,
                        width=spec.size, height=spec.size)


def run_benchmark(spec: BenchmarkSpec = BenchmarkSpec(),
                  protocol: Protocol | None = None,
                  dataset: dict | None = None,
                  progress=None) -> list[MetricsRecord]:
    """Train and score every (method, n, seed) cell; one record per b-value,
    method labeled "<mode>-seed<k>".  Best-validation snapshots are scored."""
    if protocol is None:
        protocol = benchmark_protocol(spec)
    if dataset is None:
        dataset = benchmark_dataset(spec, protocol)
    records = []
    for mode in spec.methods:
        for n in spec.ns:
            for seed in spec.seeds:
                cfg = TrainConfig(n=n, epochs=spec.epochs, seed=seed, mode=mode,
                                  hidden=spec.hidden,
                                  lr_sampling=spec.lr_sampling)
                model = train_joint(cfg, dataset[TRAIN_B], protocol)
                recs = evaluate(model.best_model(), dataset,
                                method=f"{mode}-seed{seed}")
                records.extend(recs)
                if progress is not None:
                    progress(mode, n, seed, recs)
    return records
