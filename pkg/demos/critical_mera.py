"""Scale-invariant MERA at the critical point.

Optimizes the shared unit cell on the fixed point of the descending map,
reports the doubled-map eigenvalue and then the half-chain Renyi-2 entropy
for a growing number of layers, whose slope approaches 1/16 per layer.
"""

import numpy as np

from holomera.analysis import exact_tfim_oracle, scaling_fit
from holomera.mera import doubled_map, half_chain_purity
from holomera.optimizer import OptimizerConfig, critical_mera


def main():
    cfg = OptimizerConfig(method="finite_diff_lbfgs", restarts=3)
    crit = critical_mera(cfg, g=1.0)
    energy = crit["result"].energy
    print(f"energy per site {energy:.6f} (exact {exact_tfim_oracle(1.0):.6f})")
    d0 = doubled_map(crit["cell"]).dominant
    print(f"-8 log2 d0 = {-8 * np.log2(abs(d0)):.4f}")
    points = []
    for t in range(1, 6):
        s2 = -np.log2(half_chain_purity(crit["boundary"].with_layers(t)))
        points.append((t, s2))
        print(f"T={t}  S2={s2:.4f}")
    print(f"slope over T=2..5: {scaling_fit(points[1:]).slope:.4f} per layer (1/16 = {1 / 16:.4f})")


if __name__ == "__main__":
    main()
