import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from benthoscan.errors import BackendUnavailable, CacheCorrupt, DimensionMismatch
from benthoscan.features import (
    FEATURE_DIM,
    FeatureStore,
    FeatureVector,
    ResidualBackend,
    StubBackend,
    cache_features,
    extract,
    feature_matrix,
    global_avg_pool,
    global_max_pool,
    make_backend,
)
from benthoscan.ingest import Dataset, parse_manifest
from benthoscan.preprocess import Patch, color_stretch, extract_patch, load_image
from oracles import triple_loop_max

# first components of the stub vector for an all-zero patch, frozen from the documented recipe
ZERO_PATCH_HEAD = [0.1377292275428772, 0.38715052604675293, 0.6365607976913452, 0.31666290760040283]


def test_pool_examples():
    assert np.array_equal(global_max_pool(np.zeros((7, 7, 2048))), np.zeros(2048))
    block = np.zeros((7, 7, 2048))
    block[3, 3, 7] = 5.0
    out = global_max_pool(block)
    assert out[7] == 5.0 and np.count_nonzero(out) == 1
    assert out.shape == (2048,)


def test_pool_against_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        block = rng.normal(size=(7, 7, 2048)).astype(np.float32)
        assert np.array_equal(global_max_pool(block), triple_loop_max(block))


def test_avg_pool_and_shape_errors():
    block = np.arange(7 * 7 * 4, dtype=np.float64).reshape(7, 7, 4)
    np.testing.assert_allclose(global_avg_pool(block), block.mean(axis=(0, 1)))
    with pytest.raises(DimensionMismatch):
        global_max_pool(np.zeros((49, 2048)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_pool_ignores_spatial_permutation(seed):
    rng = np.random.default_rng(seed)
    block = rng.normal(size=(7, 7, 64))
    perm = rng.permutation(49)
    shuffled = block.reshape(49, 64)[perm].reshape(7, 7, 64)
    assert np.array_equal(global_max_pool(block), global_max_pool(shuffled))


def test_stub_zero_patch_vector():
    backend = StubBackend()
    fv = extract(backend, Patch(np.zeros((224, 224, 3)), "z", (0, 0)))
    assert fv.values.dtype == np.float32 and fv.values.shape == (FEATURE_DIM,)
    assert fv.values[:4].tolist() == ZERO_PATCH_HEAD
    # the recipe: keyed blake2b over shape header + 8-bit pixels, seeding PCG64
    data = struct.pack("<3I", 224, 224, 3) + bytes(224 * 224 * 3)
    seed = int.from_bytes(hashlib.blake2b(data, key=b"benthoscan-stub", digest_size=32).digest(), "little")
    expected = np.random.Generator(np.random.PCG64(seed)).random(FEATURE_DIM, dtype=np.float32)
    assert np.array_equal(fv.values, expected)


def test_stub_is_deterministic():
    pixels = np.random.default_rng(5).random((224, 224, 3))
    a = StubBackend().extract(Patch(pixels, "i", (1, 2)))
    b = StubBackend().extract(Patch(pixels.copy(), "i", (1, 2)))
    assert a.values.tobytes() == b.values.tobytes()
    assert a.key == ("i", 1, 2, "stub-v1-d2048")
    assert np.all((a.values >= 0) & (a.values < 1))


def six_point_dataset(synthetic_dir) -> Dataset:
    images, labels = parse_manifest(synthetic_dir / "images.csv", synthetic_dir / "labels.csv")
    first = images[0]
    pts = [lb for lb in labels if lb.image_id == first.image_id][:6]
    return Dataset([first], pts)


def test_cache_six_points_then_rerun(synthetic_dir, tmp_path):
    ds = six_point_dataset(synthetic_dir)
    run = cache_features(ds, StubBackend(), tmp_path / "f.bsfc")
    assert run.n_new == 6 and len(run.store) == 6
    again = cache_features(ds, StubBackend(), tmp_path / "f.bsfc")
    assert again.n_new == 0 and len(again.store) == 6
    assert run.images_per_hour > 0


def test_cached_vectors_match_direct_extraction(synthetic_dir, tmp_path):
    ds = six_point_dataset(synthetic_dir)
    store = cache_features(ds, StubBackend(), tmp_path / "f.bsfc").store
    img = color_stretch(load_image(ds.images[0].file_path))
    X = feature_matrix(store, ds.labels, "stub-v1-d2048")
    for row, lb in zip(X, ds.labels):
        direct = StubBackend().extract(extract_patch(img, lb.x_px, lb.y_px, lb.image_id)).values
        assert np.array_equal(row, direct.astype(np.float64))


def test_parallel_cache_writes_identical_file(synthetic_dir, tmp_path):
    images, labels = parse_manifest(synthetic_dir / "images.csv", synthetic_dir / "labels.csv")
    ds = Dataset(images[:4], [lb for lb in labels if lb.image_id in {im.image_id for im in images[:4]}])
    cache_features(ds, StubBackend(), tmp_path / "serial.bsfc", workers=1)
    cache_features(ds, StubBackend(), tmp_path / "pool.bsfc", workers=4)
    assert (tmp_path / "serial.bsfc").read_bytes() == (tmp_path / "pool.bsfc").read_bytes()


def test_store_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    vectors = [FeatureVector(rng.random(2048, dtype=np.float32), "b", f"img{i}", i, 2 * i) for i in range(5)]
    store = FeatureStore(tmp_path / "s.bsfc")
    assert all(store.append(v) for v in vectors)
    assert not store.append(vectors[0])
    reopened = FeatureStore(tmp_path / "s.bsfc")
    assert len(reopened) == 5
    for v in vectors:
        assert np.array_equal(reopened.get(v.key), v.values)
    assert np.array_equal(reopened.matrix([v.key for v in vectors]), np.stack([v.values for v in vectors]))
    with pytest.raises(DimensionMismatch):
        store.append(FeatureVector(np.zeros(3, dtype=np.float32), "b", "x", 0, 0))


def test_store_header_layout(tmp_path):
    FeatureStore(tmp_path / "s.bsfc")
    assert (tmp_path / "s.bsfc").read_bytes() == b"BSFC" + struct.pack("<HH", 1, 2048)


def test_corruption_detected(tmp_path):
    path = tmp_path / "s.bsfc"
    store = FeatureStore(path)
    store.append(FeatureVector(np.ones(2048, dtype=np.float32), "b", "img", 3, 4))
    raw = bytearray(path.read_bytes())

    flipped = raw.copy()
    flipped[100] ^= 0x01
    path.write_bytes(bytes(flipped))
    with pytest.raises(CacheCorrupt):
        FeatureStore(path)

    path.write_bytes(bytes(raw[:-3]))
    with pytest.raises(CacheCorrupt):
        FeatureStore(path)

    path.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(CacheCorrupt):
        FeatureStore(path)


def test_backend_unavailable(tmp_path):
    with pytest.raises(BackendUnavailable):
        make_backend("residual", str(tmp_path / "missing.onnx"))
    with pytest.raises(BackendUnavailable):
        make_backend("residual", None)
    with pytest.raises(BackendUnavailable):
        make_backend("vgg")
    assert make_backend("stub").backend_id == "stub-v1-d2048"


# --- residual backend on a miniature graph ----------------------------------------

def tiny_conv5_model(path, seed=0):
    """224x224 RGB -> 32x32 average pool -> 1x1 conv to 2048 channels -> ReLU, shaped (1, 2048, 7, 7)."""
    import onnx
    from onnx import TensorProto, helper, numpy_helper

    rng = np.random.default_rng(seed)
    w = rng.normal(size=(2048, 3, 1, 1)).astype(np.float32)
    b = rng.normal(scale=0.1, size=2048).astype(np.float32)
    nodes = [
        helper.make_node("AveragePool", ["image"], ["pooled"], kernel_shape=[32, 32], strides=[32, 32]),
        helper.make_node("Conv", ["pooled", "w", "b"], ["pre"]),
        helper.make_node("Relu", ["pre"], ["conv5"]),
    ]
    graph = helper.make_graph(
        nodes,
        "tiny",
        [helper.make_tensor_value_info("image", TensorProto.FLOAT, [1, 3, 224, 224])],
        [helper.make_tensor_value_info("conv5", TensorProto.FLOAT, [1, 2048, 7, 7])],
        initializer=[numpy_helper.from_array(w, "w"), numpy_helper.from_array(b, "b")],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, str(path))
    return w[:, :, 0, 0], b


def test_residual_backend_equals_pooled_exported_activations(tmp_path):
    import onnxruntime as ort

    w, b = tiny_conv5_model(tmp_path / "tiny.onnx")
    backend = ResidualBackend(tmp_path / "tiny.onnx")
    pixels = np.random.default_rng(11).random((224, 224, 3))
    fv = backend.extract(Patch(pixels, "img", (5, 6)))
    assert fv.values.shape == (2048,) and np.all(fv.values >= 0)

    # activations exported by a separate session, input normalised by hand
    mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
    std = np.array([0.229, 0.224, 0.225], dtype=np.float32)
    x = ((pixels.astype(np.float32) - mean) / std).transpose(2, 0, 1)[None]
    sess = ort.InferenceSession(str(tmp_path / "tiny.onnx"), providers=["CPUExecutionProvider"])
    (act,) = sess.run(["conv5"], {"image": np.ascontiguousarray(x)})
    block = np.ascontiguousarray(act[0].transpose(1, 2, 0))
    assert np.array_equal(fv.values, triple_loop_max(block))

    # and the graph does what it says
    cells = x[0].reshape(3, 7, 32, 7, 32).mean(axis=(2, 4))
    ref = np.maximum(np.einsum("kc,chw->hwk", w, cells) + b, 0)
    np.testing.assert_allclose(block, ref, rtol=1e-4, atol=1e-4)


def test_residual_backend_rejects_wrong_channel_count(tmp_path):
    tiny_conv5_model(tmp_path / "tiny.onnx")
    backend = ResidualBackend(tmp_path / "tiny.onnx", expected_dim=1024)
    with pytest.raises(DimensionMismatch):
        backend.extract(Patch(np.zeros((224, 224, 3)), "i", (0, 0)))


def test_residual_backend_id_tracks_preprocessing(tmp_path):
    tiny_conv5_model(tmp_path / "tiny.onnx")
    a = ResidualBackend(tmp_path / "tiny.onnx")
    b = ResidualBackend(tmp_path / "tiny.onnx", mean=(0.5, 0.5, 0.5))
    c = ResidualBackend(tmp_path / "tiny.onnx", pool="avg")
    assert len({a.backend_id, b.backend_id, c.backend_id}) == 3
