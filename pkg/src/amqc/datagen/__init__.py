from amqc.datagen.io import (
    decode_annotation,
    decode_pgm,
    encode_annotation,
    encode_pgm,
    read_annotation,
    read_pgm,
    write_annotation,
    write_pgm,
)
from amqc.datagen.split import apportion, split_dataset
from amqc.datagen.synth import (
    Annotation,
    GeneratorParams,
    SampleSet,
    check_image,
    derive_seed,
    make_sample_set,
    render,
    synth_image,
)
from amqc.datagen.transforms import (
    Augmentation,
    augment,
    augment_sample,
    preprocess,
    preprocess_batch,
    transform_annotation,
)

__all__ = [
    "Annotation", "Augmentation", "GeneratorParams", "SampleSet", "apportion", "augment",
    "augment_sample", "check_image", "decode_annotation", "decode_pgm", "derive_seed",
    "encode_annotation", "encode_pgm", "make_sample_set", "preprocess", "preprocess_batch",
    "read_annotation", "read_pgm", "render", "split_dataset", "synth_image",
    "transform_annotation", "write_annotation", "write_pgm",
]
