import numpy as np
import pytest
import scipy.sparse as sp

from cmcsphere import fields as fl
from cmcsphere import io

from conftest import mesh_at


def test_map_roundtrip(tmp_path):
    m = mesh_at(2)
    u = fl.random_map(m, np.random.default_rng(0))
    io.save_map(tmp_path / "u.ply", u, {"tracked_volume": 1.25, "H": 0.5})
    v, meta = io.load_map(tmp_path / "u.ply")
    assert np.array_equal(v.values, u.values)
    assert meta["tracked_volume"] == 1.25 and meta["H"] == 0.5 and meta["subdivision_level"] == 2
    assert v.mesh.n_faces == m.n_faces


def test_mesh_roundtrip(tmp_path):
    m = mesh_at(2)
    io.save_mesh(tmp_path / "m.ply", m)
    m2 = io.load_mesh(tmp_path / "m.ply")
    assert np.array_equal(m2.vertices, m.vertices) and np.array_equal(m2.faces, m.faces)
    assert abs(m2.stiffness - m.stiffness).max() == 0


@pytest.mark.parametrize("cut", [10, 200, -7])
def test_truncated_ply_reports_offset(tmp_path, cut):
    m = mesh_at(1)
    p = tmp_path / "u.ply"
    io.save_map(p, fl.equatorial_map(m))
    raw = p.read_bytes()
    p.write_bytes(raw[:cut])
    with pytest.raises(io.PlyParseError) as exc:
        io.load_map(p)
    assert "byte offset" in str(exc.value)
    assert 0 <= exc.value.offset <= len(raw)


def test_corrupt_header_offset(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty quad x\nend_header\n")
    with pytest.raises(io.PlyParseError) as exc:
        io.read_ply(p)
    assert exc.value.offset == len(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n")


def test_ascii_format_rejected(tmp_path):
    p = tmp_path / "a.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
    with pytest.raises(io.PlyParseError, match="unsupported format"):
        io.read_ply(p)


def test_trailing_bytes(tmp_path):
    p = tmp_path / "u.ply"
    io.save_map(p, fl.equatorial_map(mesh_at(1)))
    size = p.stat().st_size
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(io.PlyParseError) as exc:
        io.read_ply(p)
    assert exc.value.offset == size


def test_coo_roundtrip(tmp_path):
    A = mesh_at(2).stiffness
    io.dump_coo(tmp_path / "a.coo", A)
    B = io.load_coo(tmp_path / "a.coo")
    assert B.shape == A.shape and abs(B.tocsr() - A).max() == 0
    io.dump_coo(tmp_path / "z.coo", sp.csr_matrix((3, 3)))
    assert io.load_coo(tmp_path / "z.coo").nnz == 0


def test_json_and_csv(tmp_path):
    io.write_json(tmp_path / "r.json", {"b": np.float64(1.5), "a": np.arange(3), "c": np.bool_(True)})
    assert io.read_json(tmp_path / "r.json") == {"a": [0, 1, 2], "b": 1.5, "c": True}
    assert (tmp_path / "r.json").read_text().index('"a"') < (tmp_path / "r.json").read_text().index('"b"')
    io.write_csv(tmp_path / "t.csv", [{"x": 0.1, "y": None}], ["x", "y"])
    assert (tmp_path / "t.csv").read_text() == "x,y\n0.1,\n"
