"""Calibrate the 10-node test problem: least squares from a perturbed guess,
then two Metropolis chains with priors centred on the fit.

    python3 scripts/posterior_recovery.py [SEED]
"""
import sys

from egdl.calibrate import McmcConfig, PriorSpec, mcmc_sample, nls_fit, summarize
from egdl.synth import recovery_problem


def main(seed=1):
    graph, data, theta = recovery_problem(seed=seed)
    fit = nls_fit(data, graph, {k: 1.2 * v for k, v in theta.items()})
    print("least squares:", {k: f"{v:.4g}" for k, v in fit.theta.items()}, f"sse={fit.sse:.1f}")
    chains = mcmc_sample(data, graph, PriorSpec.centered_on(fit.theta),
                         McmcConfig(chains=2, warmup=1000, draws=2000, seed=seed))
    summary = summarize(chains)
    print(summary.to_csv(), end="")
    for k in ("beta", "gamma"):
        row = summary[k]
        print(f"{k}: true {theta[k]:.4g} in HDI [{row['hdi_3%']:.4g}, {row['hdi_97%']:.4g}]:",
              row["hdi_3%"] <= theta[k] <= row["hdi_97%"])


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
