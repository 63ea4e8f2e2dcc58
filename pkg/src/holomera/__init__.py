"""Binary MERA ground states of the transverse-field Ising chain on simulated trapped-ion hardware.

Subpackages and modules:

* :mod:`holomera.linalg` -- dense linear algebra and superoperators
* :mod:`holomera.gates` -- native gates, circuits and statevector simulation
* :mod:`holomera.mera` -- MERA parameters, causal-cone circuits and channels
* :mod:`holomera.optimizer` -- variational energy minimization
* :mod:`holomera.noise` -- trapped-ion error model and calibration fits
* :mod:`holomera.tomography` -- shots, tomography, classical shadows, bootstrap
* :mod:`holomera.analysis` -- entropies, fidelities, exact oracles, fits
* :mod:`holomera.scenarios` / :mod:`holomera.cli` -- experiment runner
"""

from .gates import Circuit, GateOp, GateTiming
from .mera import MeraParams
from .noise import NoiseCalibration
from .optimizer import OptimizerConfig, TfimSpec

__all__ = ["Circuit", "GateOp", "GateTiming", "MeraParams", "NoiseCalibration", "OptimizerConfig", "TfimSpec"]
