"""OFDM integrated-sensing-and-communication waveform design toolkit.

Subpackages cover the full pipeline: resource-grid channel synthesis
(:mod:`isacwave.grid`), Fisher/CRB machinery (:mod:`isacwave.crb`), conic
resource-allocation design (:mod:`isacwave.design`), masked-channel
completion (:mod:`isacwave.completion`), delay-Doppler target estimation
(:mod:`isacwave.estimate`), and benchmark experiments (:mod:`isacwave.bench`).
"""

__version__ = "0.1.0"

from .grid import (
    Allocation,
    ChannelMatrix,
    CommPath,
    GridParams,
    Target,
    avg_channel_gain,
    build_waveform,
    comm_channel,
    sensing_channel,
    simulate_rx,
    steering_vectors,
)
from .crb import (
    CrbReport,
    CrbSingularError,
    FisherWeights,
    crb_general,
    crb_two_target_closed,
    fisher_blocks,
    fisher_weights,
    weighted_crb_objective,
)
from .design import (
    BnbLimits,
    DesignConfig,
    DesignSolution,
    block_weight_aggregates,
    solve_tf,
    solve_tfe,
    validate_solution,
)
from .completion import (
    CompletionConfig,
    MaskedChannel,
    RecoveryDiagnostics,
    completion_error,
    linear_complete,
    ls_estimate,
    recovery_diagnostics,
    schatten_complete,
)
from .estimate import (
    EstimateResult,
    cir_peak_sidelobe,
    dd_closed_form,
    dd_inverse,
    dd_map,
    estimate_targets,
    pair_estimates,
)
from .bench import (
    ResultTable,
    Scenario,
    contiguous_allocation,
    crb_gain,
    hybrid_allocation,
    random_allocation,
    run_experiment,
    spectral_efficiency,
)
from .io import (
    dump_program,
    load_scenario,
    read_channel,
    read_energy_csv,
    read_mask_pbm,
    save_scenario,
    write_channel,
    write_energy_csv,
    write_mask_pbm,
    write_solution,
)
