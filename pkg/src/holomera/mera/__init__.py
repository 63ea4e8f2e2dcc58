"""Binary MERA with one qubit per bond: parameters, circuits, channels, observables."""

from .channels import (
    ChannelError,
    DoubledMap,
    LayerChannel,
    average_descending,
    descend_pair,
    descend_triple,
    doubled_map,
    half_chain_purity,
    layer_channel,
    scale_invariant_triple,
    steady_state,
    verify_cptp,
)
from .circuits import build_boundary_cone, build_local_cone, cone_site_labels, prune, simplify, xx_count
from .observables import (
    causal_range,
    connected_correlator,
    correlator_table,
    energy_per_site,
    half_chain_spectrum,
    periodic_half_chain_spectrum,
    magnetization_x,
    pair_observables,
    periodic_circuit,
    periodic_reduced_density,
)
from .params import CELL_ANGLES, TOP_ANGLES, MeraParams
