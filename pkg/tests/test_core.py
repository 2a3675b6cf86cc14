import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptcf import errors
from conceptcf.core import (
    EBF_MAGIC,
    Manifest,
    l2_normalize,
    load_matrix,
    make_rng,
    manifest_path,
    save_matrix,
)


def test_load_small_f32_file(tmp_path):
    # hand-assembled EBF file: 2x3 float32 of values 1..6
    path = tmp_path / "m.ebf"
    header = struct.pack("<4sIIQQ", b"CXEB", 1, 0, 2, 3)
    payload = np.arange(1, 7, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    matrix, manifest = load_matrix(path)
    assert matrix.shape == (2, 3)
    assert matrix.dtype == np.float64
    np.testing.assert_array_equal(matrix, [[1, 2, 3], [4, 5, 6]])
    assert manifest.dim == 3


def test_bad_magic(tmp_path):
    path = tmp_path / "m.ebf"
    path.write_bytes(b"XXXX" + b"\x00" * 24)
    with pytest.raises(errors.BadMagic):
        load_matrix(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "m.ebf"
    path.write_bytes(struct.pack("<4sIIQQ", EBF_MAGIC, 9, 1, 0, 0))
    with pytest.raises(errors.VersionMismatch):
        load_matrix(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.ebf"
    header = struct.pack("<4sIIQQ", EBF_MAGIC, 1, 1, 2, 2)
    path.write_bytes(header + b"\x00" * 8)  # 8 of 32 payload bytes
    with pytest.raises(errors.TruncatedPayload):
        load_matrix(path)


def test_extra_bytes_rejected(tmp_path):
    path = tmp_path / "m.ebf"
    header = struct.pack("<4sIIQQ", EBF_MAGIC, 1, 1, 1, 1)
    path.write_bytes(header + b"\x00" * 16)
    with pytest.raises(errors.TruncatedPayload):
        load_matrix(path)


def test_non_finite_entry(tmp_path):
    path = tmp_path / "m.ebf"
    header = struct.pack("<4sIIQQ", EBF_MAGIC, 1, 1, 1, 1)
    path.write_bytes(header + np.array([np.nan]).tobytes())
    with pytest.raises(errors.NonFiniteEntry):
        load_matrix(path)


def test_save_zero_matrix_header(tmp_path):
    path = tmp_path / "z.ebf"
    save_matrix(np.zeros((1, 1)), Manifest(kind="features", dim=1), path)
    blob = path.read_bytes()
    magic, version, code, rows, cols = struct.unpack_from("<4sIIQQ", blob)
    assert (magic, version, code, rows, cols) == (EBF_MAGIC, 1, 1, 1, 1)
    assert len(blob) == 28 + 8
    assert struct.unpack("<d", blob[28:])[0] == 0.0


def test_bank_scale_f32_payload_size(tmp_path):
    path = tmp_path / "bank.ebf"
    matrix = np.ones((192, 512))
    names = [f"c{i}" for i in range(192)]
    save_matrix(matrix, Manifest(kind="concept_bank", dim=512, names=names), path, precision="f32")
    assert len(path.read_bytes()) == 28 + 192 * 512 * 4


def test_f64_dtype_code_and_width(tmp_path):
    path = tmp_path / "m.ebf"
    save_matrix(np.full((3, 2), 0.5), Manifest(kind="features", dim=2), path, precision="f64")
    blob = path.read_bytes()
    assert struct.unpack_from("<I", blob, 8)[0] == 1
    assert len(blob) == 28 + 3 * 2 * 8


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "m.ebf"
    manifest = Manifest(kind="vlm_embeddings", dim=4, names=["a", "b"], extra={"note": "x"})
    save_matrix(np.ones((2, 4)), manifest, path)
    assert manifest_path(path).exists()
    _, loaded = load_matrix(path)
    assert loaded.kind == "vlm_embeddings"
    assert loaded.names == ["a", "b"]
    assert loaded.extra == {"note": "x"}


def test_manifest_names_length_enforced(tmp_path):
    with pytest.raises(errors.ManifestError):
        save_matrix(
            np.ones((2, 4)),
            Manifest(kind="features", dim=4, names=["only-one"]),
            tmp_path / "m.ebf",
        )


def test_save_rejects_non_finite():
    bad = np.ones((2, 2))
    bad[0, 0] = np.inf
    with pytest.raises(errors.NonFiniteEntry):
        save_matrix(bad, Manifest(kind="features", dim=2), "/tmp/never-written.ebf")


def test_f32_overflow_rejected(tmp_path):
    big = np.full((1, 1), 1e300)
    with pytest.raises(errors.NonFiniteEntry):
        save_matrix(big, Manifest(kind="features", dim=1), tmp_path / "m.ebf", precision="f32")


@settings(max_examples=60, deadline=None)
@given(
    rows=st.integers(1, 6),
    cols=st.integers(1, 6),
    precision=st.sampled_from(["f32", "f64"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_identity_at_stored_precision(rows, cols, precision, seed):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(seed)
    matrix = rng.normal(scale=10.0, size=(rows, cols))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "rt.ebf"
        save_matrix(matrix, Manifest(kind="features", dim=cols), path, precision=precision)
        loaded, _ = load_matrix(path)
    expected = matrix.astype(np.float32).astype(np.float64) if precision == "f32" else matrix
    np.testing.assert_array_equal(loaded, expected)


def test_csv_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    matrix = np.array([[1.5, -2.25], [0.125, 3.0], [4.0, 5.5]])
    save_matrix(matrix, Manifest(kind="features", dim=2, names=["a", "b", "c"]), path)
    loaded, manifest = load_matrix(path)
    np.testing.assert_array_equal(loaded, matrix)
    assert manifest.names == ["a", "b", "c"]


def test_csv_hand_written(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("x,y\n1.0,3.0\n2.0,4.0\n")
    matrix, manifest = load_matrix(path)
    # columns are the named rows of the logical matrix
    np.testing.assert_array_equal(matrix, [[1.0, 2.0], [3.0, 4.0]])
    assert manifest.names == ["x", "y"]


def test_l2_normalize_345_triangle():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)


def test_l2_normalize_zero_vector():
    with pytest.raises(errors.ZeroVector):
        l2_normalize([0.0, 0.0])


def test_l2_normalize_unit_vector_fixed():
    v = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(l2_normalize(v), v, rtol=0, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    dim=st.integers(1, 8),
    scale=st.floats(1e-6, 1e6),
)
def test_l2_normalize_scale_invariant_and_idempotent(seed, dim, scale):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    if np.linalg.norm(v) <= 1e-9:
        return
    unit = l2_normalize(v)
    assert abs(np.linalg.norm(unit) - 1.0) <= 1e-12
    np.testing.assert_allclose(l2_normalize(scale * v), unit, atol=1e-12)
    np.testing.assert_allclose(l2_normalize(unit), unit, atol=1e-12)


def test_make_rng_reproducible_stream():
    a = make_rng(1234).standard_normal(8)
    b = make_rng(1234).standard_normal(8)
    np.testing.assert_array_equal(a, b)
    c = make_rng(1235).standard_normal(8)
    assert not np.array_equal(a, c)
