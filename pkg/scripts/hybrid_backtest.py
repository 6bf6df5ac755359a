"""Backtest the hybrid pipelines on synthetic panels (20 nodes, T = 120,
horizon 12) and print the median RMSE across locations for every model.

    python3 scripts/hybrid_backtest.py [N_SEEDS]
"""
import sys

import numpy as np

from egdl.evaluate import HybridModel, MechanisticOnly, NaivePersistence, rolling_backtest
from egdl.forecast import BlockConfig, WindowSpec
from egdl.graph import random_connected_graph
from egdl.hybrid import HybridConfig
from egdl.synth import SyntheticSpec, generate_synthetic


def run(seed):
    graph = random_connected_graph(20, 10, seed=seed)
    y, infected = generate_synthetic(SyntheticSpec(n=20, T=120, seed=seed), graph)
    fc = BlockConfig(seed=seed)

    def cfg(mode):
        return HybridConfig(mode=mode, window=WindowSpec(12, 12), forecaster=fc)

    models = [MechanisticOnly(infected), NaivePersistence(), HybridModel(cfg("series"), infected),
              HybridModel(cfg("parallel"), infected), HybridModel(cfg("baseline"))]
    rep = rolling_backtest(y, models, horizons=(12,), t_w=12)
    return {m.name: float(np.median(rep.values(m.name, 12, "rmse"))) for m in models}


def main(n_seeds=5):
    for seed in range(n_seeds):
        med = run(seed)
        print(f"seed {seed}: " + "  ".join(f"{k}={v:.2f}" for k, v in med.items()))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
