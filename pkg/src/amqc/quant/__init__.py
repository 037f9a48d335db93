from amqc.quant.qnet import (
    BACKENDS,
    QuantizedLayer,
    QuantizedNetwork,
    calibrate,
    default_backend,
    qforward,
    quantize_network,
)
from amqc.quant.scheme import (
    QuantParams,
    dequantize,
    dequantize_weights,
    params_from_range,
    quantize,
    quantize_weights,
)
from amqc.quant.bench import (
    LatencyReport,
    bench_latency,
    reduction_pct,
    report_from_times,
    single_thread,
)
from amqc.quant.prune import prune_count, prune_magnitude, sparsity
from amqc.quant.qio import decode_qnet, encode_qnet, load_qnet, save_qnet
