"""Run the network model to t = 2000 on the 47-node fixture for both parameter
sets and report how far every node ends from the predicted equilibrium.

    python3 scripts/stability_demo.py [OUTDIR]
"""
import sys
from pathlib import Path

import numpy as np

from egdl.graph import load_fixture
from egdl.mnsir import DISEASE_FREE_PARAMS, ENDEMIC_PARAMS, equilibria, integrate, point_source_state
from egdl.plots import plot_trajectories


def main(out):
    out.mkdir(parents=True, exist_ok=True)
    graph = load_fixture("japan47")
    init = point_source_state(graph.n)
    for name, params in (("disease_free", DISEASE_FREE_PARAMS), ("endemic", ENDEMIC_PARAMS)):
        eq = equilibria(params)
        s_t, i_t, _ = eq.endemic or eq.dfe
        traj = integrate(init, params, graph, 2000.0, 0.1, save_every=10)
        fin = traj.final
        print(f"{name:13s} R0={eq.r0:.4f} target S={s_t:.3f} I={i_t:.4f} "
              f"max|S-S*|={np.max(np.abs(fin.s - s_t)):.2e} max|I-I*|={np.max(np.abs(fin.i - i_t)):.2e}")
        plot_trajectories(traj.times, traj.i, out / f"{name}_infected.svg", graph.node_labels, [19])


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "out/stability"))
