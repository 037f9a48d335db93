"""Desk-scale defect detection and digital-twin control loop for laser powder bed fusion.

Subpackages:

* ``datagen``   synthetic defect imagery, preprocessing, augmentation, PGM/VOC I/O
* ``cnn``       numpy CNN engine: forward, backprop, SGD, gradient check, weight files
* ``quant``     int8 post-training quantization, pruning, latency benchmarks
* ``telemetry`` MQTT 3.1.1 subset broker/client and the 26-byte defect record
* ``twin``      reduced-order process model, controller, closed-loop simulator
* ``metrics``   confusion matrices, classification/timing/twin metrics, reports
"""

__version__ = "0.1.0"

CLASS_NAMES = ("crack", "pinhole", "hole", "spatter")
NUM_CLASSES = len(CLASS_NAMES)
IMAGE_H = 80
IMAGE_W = 120
