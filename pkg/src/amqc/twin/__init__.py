from amqc.twin.controller import (
    ACTION_KINDS,
    CONTROL_SIZE,
    DEFAULT_THRESHOLDS,
    NO_ACTION,
    ControlAction,
    apply_action,
    decide_action,
    decode_control,
    encode_control,
)
from amqc.twin.loop import (
    MODES,
    LayerRecord,
    LoopConfig,
    LoopReport,
    classify,
    defect_rates,
    run_closed_loop,
    summarize,
    window_size,
)
from amqc.twin.model import (
    BAND,
    FEED_BOUNDS,
    POWER_BOUNDS,
    SPEED_BOUNDS,
    ProcessState,
    band_deviation,
    defect_probability,
    energy_density,
    sample_layer_outcome,
)
