from amqc.cnn.gradcheck import grad_check, rel_error
from amqc.cnn.layers import conv2d, cross_entropy, dense, maxpool2, relu, softmax
from amqc.cnn.network import (
    PRESETS,
    LayerSpec,
    Network,
    build_network,
    conv_stack,
    forward,
    trace_shapes,
)
from amqc.cnn.train import TrainConfig, evaluate, fit, predict, sample_arrays, train_epoch
from amqc.cnn.weights_io import decode_network, encode_network, load_weights, save_weights

__all__ = [
    "LayerSpec", "Network", "PRESETS", "TrainConfig", "build_network", "conv2d", "conv_stack",
    "cross_entropy", "decode_network", "dense", "encode_network", "evaluate", "fit", "forward",
    "grad_check", "load_weights", "maxpool2", "predict", "rel_error", "relu", "sample_arrays",
    "save_weights", "softmax", "trace_shapes", "train_epoch",
]
