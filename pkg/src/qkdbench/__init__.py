"""qkdbench: desk-scale satellite BB84 link simulation and post-processing."""

from .qbermodel import (
    QberBreakdown,
    SignalModel,
    combine_error,
    duty_cycle,
    esnr,
    external_qber,
    gate_capture_fraction,
    intrinsic_qber,
    qber_from_esnr,
    total_qber,
)
from .orbitlink import (
    BeamConfig,
    ChannelModel,
    LossBudget,
    OrbitConfig,
    PassSample,
    atmospheric_loss_db,
    divergence_from_waist,
    doppler_relative_shift,
    geometric_loss_db,
    pass_profile,
    slant_range,
    total_loss_db,
)
from .hdbcsync import (
    ClockModel,
    HdbcConfig,
    correct_timestamps,
    debruijn_sequence,
    decode_index,
    encode_beacon,
    recover_clock,
)
from .photonsim import (
    DetectionSet,
    SimConfig,
    TxStream,
    apply_clock_distortion,
    generate_tx_stream,
    simulate_channel,
    simulate_experiment,
)
from .distill import (
    CascadeResult,
    DecoyEstimate,
    IntensityStats,
    KeyRateResult,
    SiftedBlock,
    analytic_point,
    binary_entropy,
    cascade_reconcile,
    decoy_bounds,
    decoy_rate,
    gain_db,
    gate_and_match,
    gllp_rate_single,
    mission_projection,
    sift,
)

__version__ = "0.1.0"
