import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from amqc.datagen import (
    Annotation,
    Augmentation,
    GeneratorParams,
    SampleSet,
    apportion,
    augment,
    augment_sample,
    decode_annotation,
    decode_pgm,
    encode_annotation,
    encode_pgm,
    make_sample_set,
    preprocess,
    read_pgm,
    render,
    split_dataset,
    synth_image,
    transform_annotation,
    write_pgm,
)
from amqc.errors import FormatError, InvalidArgument, ParseError

# -- generator ----------------------------------------------------------------


def test_crack_deterministic_and_connected():
    img1, ann1 = synth_image(0, seed=1)
    img2, ann2 = synth_image(0, seed=1)
    assert img1.tobytes() == img2.tobytes() and ann1 == ann2
    xmin, ymin, xmax, ymax = ann1.bbox
    dark = img1 < 88  # crack level <= base-60 (+noise); background >= base-4sigma-stripes
    assert not dark[:, :xmin].any() and not dark[:, xmax:].any()
    assert not dark[:ymin].any() and not dark[ymax:].any()
    _, n_components = ndimage.label(dark, structure=np.ones((3, 3)))
    assert n_components == 1


@pytest.mark.parametrize("seed", range(25))
def test_pinhole_bbox_small(seed):
    _, ann = synth_image(1, seed)
    assert ann.area <= 49


@pytest.mark.parametrize("seed", range(10))
def test_hole_is_larger(seed):
    _, ann, mask = render(2, seed)
    w = ann.bbox[2] - ann.bbox[0]
    assert 9 <= w <= 21 and mask.sum() > 49


def test_spatter_bright_inside_bbox():
    img, ann = synth_image(3, seed=7)
    xmin, ymin, xmax, ymax = ann.bbox
    inside = np.zeros(img.shape, dtype=bool)
    inside[ymin:ymax, xmin:xmax] = True
    assert img[inside].mean() > img[~inside].mean()


@pytest.mark.parametrize("cls", range(4))
def test_defect_pixels_inside_bbox(cls):
    for seed in range(5):
        img, ann, mask = render(cls, seed)
        xmin, ymin, xmax, ymax = ann.bbox
        ys, xs = np.nonzero(mask)
        assert xs.min() >= xmin and xs.max() < xmax and ys.min() >= ymin and ys.max() < ymax
        assert img.shape == (80, 120) and img.dtype == np.uint8


def test_background_base_intensity():
    img, _, mask = render(1, 3)
    assert abs(img[~mask].mean() - GeneratorParams().base_intensity) < 2


def test_unknown_class_rejected():
    with pytest.raises(InvalidArgument):
        synth_image(4, 0)


def test_sample_set_balanced_and_reproducible():
    a = make_sample_set(40, seed=5)
    b = make_sample_set(40, seed=5)
    assert a.class_counts == (10, 10, 10, 10)
    assert all(x[0].tobytes() == y[0].tobytes() and x[1] == y[1]
               for x, y in zip(a.samples, b.samples))


# -- preprocess ---------------------------------------------------------------


def test_preprocess_constant_image():
    out = preprocess(np.full((80, 120), 128, np.uint8), 80, 120, dtype=np.float64)
    assert out.shape == (1, 80, 120)
    assert np.allclose(out, 128 / 255, atol=1e-12, rtol=0)


def test_contrast_stretch_endpoints():
    from amqc.datagen.transforms import contrast_stretch

    a = np.linspace(10, 210, 50).reshape(5, 10)
    s = contrast_stretch(a)
    assert s.min() == 0.0 and s.max() == 255.0


def test_preprocess_downscale_shape_and_range():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (160, 240), dtype=np.uint8)
    out = preprocess(img, 80, 120)
    assert out.shape == (1, 80, 120)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_preprocess_errors():
    with pytest.raises(InvalidArgument):
        preprocess(np.zeros((0, 5), np.uint8), 80, 120)
    with pytest.raises(InvalidArgument):
        preprocess(np.zeros((10, 10), np.uint8), 4, 120)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(8, 30), st.integers(8, 30),
       st.integers(0, 2**32 - 1))
def test_preprocess_always_unit_range(h, w, th, tw, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8)
    out = preprocess(img, th, tw)
    assert out.shape == (1, th, tw)
    assert out.min() >= 0.0 and out.max() <= 1.0


# -- augment ------------------------------------------------------------------


def _img(seed=0, shape=(80, 120)):
    return np.random.default_rng(seed).integers(0, 256, shape, dtype=np.uint8)


def test_flip_h_involution():
    img = _img()
    assert np.array_equal(augment(augment(img, "flip_h"), "flip_h"), img)


def test_brightness_saturates():
    out = augment(np.full((4, 4), 250, np.uint8), Augmentation("brightness", 10))
    assert (out == 255).all()


def test_rot90_shape_and_order_four():
    img = _img()
    r = augment(img, "rot90")
    assert r.shape == (120, 80)
    for _ in range(3):
        r = augment(r, "rot90")
    assert np.array_equal(r, img)


@pytest.mark.parametrize("kind", ["flip_h", "flip_v", "rot90", "rot180", "rot270"])
def test_permutations_preserve_multiset(kind):
    img = _img(3)
    out = augment(img, kind)
    assert np.array_equal(np.sort(out, axis=None), np.sort(img, axis=None))


@pytest.mark.parametrize("kind", ["flip_h", "flip_v", "rot90", "rot180", "rot270"])
@pytest.mark.parametrize("cls", range(4))
def test_bbox_follows_permutation(kind, cls):
    img, ann, mask = render(cls, 11)
    out, ann2 = augment_sample(img, ann, kind)
    box_mask = np.zeros(img.shape, np.uint8)
    xmin, ymin, xmax, ymax = ann.bbox
    box_mask[ymin:ymax, xmin:xmax] = 1
    moved = augment(box_mask, kind)
    ys, xs = np.nonzero(moved)
    assert ann2.bbox == (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    assert (ann2.image_height, ann2.image_width) == out.shape


def test_noise_seeded_and_bounded():
    img = _img(1)
    a = augment(img, Augmentation("gauss_noise", 8.0), seed=4)
    b = augment(img, Augmentation("gauss_noise", 8.0), seed=4)
    assert np.array_equal(a, b) and a.dtype == np.uint8
    assert not np.array_equal(a, img)


def test_noise_keeps_annotation():
    _, ann = synth_image(0, 1)
    assert transform_annotation(ann, Augmentation("gauss_noise", 1.0)) == ann


@pytest.mark.parametrize("bad", [("gauss_noise", 0), ("gauss_noise", -1), ("gauss_noise", 33),
                                 ("brightness", 65), ("brightness", -65), ("shear", 1)])
def test_augment_argument_errors(bad):
    with pytest.raises(InvalidArgument):
        Augmentation(*bad)


def test_parse_augmentation_text():
    assert Augmentation.parse("brightness:-12") == Augmentation("brightness", -12)
    assert Augmentation.parse("rot270") == Augmentation("rot270")


# -- split --------------------------------------------------------------------


def _set_with_counts(counts):
    samples = []
    for c, n in enumerate(counts):
        for i in range(n):
            samples.append((np.full((2, 2), i % 256, np.uint8), Annotation(c, (0, 0, 1, 1), 2, 2)))
    return SampleSet(samples, 0)


def test_split_4_to_1_balanced():
    train, test = split_dataset(_set_with_counts([100] * 4), (4, 1), seed=9)
    assert train.class_counts == (80,) * 4 and test.class_counts == (20,) * 4


def test_split_degenerate_ratio():
    s = _set_with_counts([5, 6, 7, 8])
    train, test = split_dataset(s, (1, 0), seed=1)
    assert len(test) == 0 and train.samples == s.samples


def test_split_largest_remainder_seven():
    # 7 * 4/5 = 5.6 and 7 * 1/5 = 1.4 -> floors 5 + 1, the spare unit goes to 0.6
    assert apportion(7, (4, 1)) == [6, 1]
    train, test = split_dataset(_set_with_counts([7, 5, 5, 5]), (4, 1), seed=0)
    assert train.class_counts[0] == 6 and test.class_counts[0] == 1


def test_split_empty_class_error():
    with pytest.raises(InvalidArgument):
        split_dataset(_set_with_counts([5, 0, 5, 5]), (4, 1), seed=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=4, max_size=4), st.integers(1, 9),
       st.integers(0, 9), st.integers(0, 2**63))
def test_split_properties(counts, a, b, seed):
    s = _set_with_counts(counts)
    train, test = split_dataset(s, (a, b), seed)
    again = split_dataset(s, (a, b), seed)
    assert train.samples == again[0].samples
    for c, n in enumerate(counts):
        assert train.class_counts[c] + test.class_counts[c] == n
        assert train.class_counts[c] == apportion(n, (a, b))[0]
    ids = sorted(id(x) for x in train.samples + test.samples)
    assert ids == sorted(id(x) for x in s.samples)


# -- annotation codec ---------------------------------------------------------


def test_voc_template_fields():
    xml = encode_annotation(Annotation(0, (10, 20, 30, 40), 120, 80), "a.pgm").decode()
    assert "<name>crack</name>" in xml and "<xmin>10</xmin>" in xml
    assert "<depth>1</depth>" in xml


def test_voc_round_trip_random():
    rng = np.random.default_rng(77)
    for i in range(1000):
        w, h = int(rng.integers(1, 300)), int(rng.integers(1, 300))
        x0, x1 = sorted(rng.choice(w + 1, 2, replace=False))
        y0, y1 = sorted(rng.choice(h + 1, 2, replace=False))
        ann = Annotation(int(rng.integers(0, 4)), (int(x0), int(y0), int(x1), int(y1)), w, h)
        name = f"img_{i}&<x>.pgm"
        assert decode_annotation(encode_annotation(ann, name)) == (ann, name)


@pytest.mark.parametrize("mutate,element", [
    (lambda s: s.replace("<xmax>30</xmax>", "<xmax>5</xmax>"), "xmax"),
    (lambda s: s.replace("crack", "scratch"), "name"),
    (lambda s: s.replace("<ymax>40</ymax>", "<ymax>81</ymax>"), "ymax"),
    (lambda s: s.replace("</annotation>", ""), "annotation"),
    (lambda s: s.replace("<xmin>10</xmin>", "<xmin>ten</xmin>"), "xmin"),
    (lambda s: s.replace("<depth>1</depth>", "<depth>3</depth>"), "depth"),
])
def test_voc_parse_errors_name_element(mutate, element):
    xml = encode_annotation(Annotation(0, (10, 20, 30, 40), 120, 80), "a.pgm").decode()
    with pytest.raises(ParseError) as exc:
        decode_annotation(mutate(xml).encode())
    assert exc.value.element == element


def test_voc_rejects_multiple_objects():
    xml = encode_annotation(Annotation(0, (10, 20, 30, 40), 120, 80), "a.pgm").decode()
    obj = xml[xml.index("  <object>"):xml.index("</annotation>")]
    with pytest.raises(ParseError):
        decode_annotation(xml.replace("</annotation>", obj + "</annotation>").encode())


# -- PGM ----------------------------------------------------------------------


def test_pgm_exact_bytes():
    img = np.array([[0, 255], [128, 1]], np.uint8)
    assert encode_pgm(img) == b"P5\n2 2\n255\n" + bytes([0, 255, 128, 1])


def test_pgm_round_trip_file(tmp_path):
    img, _ = synth_image(2, 5)
    write_pgm(tmp_path / "x.pgm", img)
    back = read_pgm(tmp_path / "x.pgm")
    assert back.tobytes() == img.tobytes() and back.shape == img.shape


@pytest.mark.parametrize("data", [
    b"P2\n2 2\n255\n\x00\x00\x00\x00",
    b"P5\n2 2\n65535\n" + bytes(8),
    b"P5\n2 2\n255\n\x00\x00\x00",
    b"P5\n2\n",
])
def test_pgm_rejects(data):
    with pytest.raises(FormatError):
        decode_pgm(data)
