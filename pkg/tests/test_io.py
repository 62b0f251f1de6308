import json
import struct

import numpy as np
import pytest

from pardyn.errors import ModelFormatError
from pardyn.io import FORMAT_VERSION, MAGIC, format_value, load_model, read_csv, read_header, save_model, write_csv
from pardyn.offline import OfflineConfig, run_offline
from pardyn.online import online_zetas
from pardyn.vs import run_vs

from conftest import small


@pytest.fixture(scope="module")
def burgers_model():
    s = small("burgers")
    return s, run_offline(s.ops, s.grid, s.training, OfflineConfig(n_max=3))


def _assert_same(a, b):
    assert a.problem == b.problem and a.mesh == b.mesh and a.grid == b.grid
    assert (a.method, a.scheme, a.config, a.n_terms) == (b.method, b.scheme, b.config, b.n_terms)
    for ta, tb in zip(a.terms, b.terms):
        np.testing.assert_array_equal(ta.anchor, tb.anchor)
        assert ta.norm == tb.norm and ta.vs_step == tb.vs_step and ta.vs_candidates == tb.vs_candidates
        for key, arr in ta.record.arrays().items():
            np.testing.assert_array_equal(arr, tb.record.arrays()[key])
        for key, arr in ta.zeta0.arrays().items():
            np.testing.assert_array_equal(arr, tb.zeta0.arrays()[key])
        if ta.g is not None:
            np.testing.assert_array_equal(ta.g, tb.g)
    for sa, sb in zip(a.trace, b.trace):
        assert (sa.k, sa.anchor_index, sa.elapsed) == (sb.k, sb.anchor_index, sb.elapsed)
        np.testing.assert_array_equal(sa.deltas, sb.deltas)


def test_round_trip(burgers_model, tmp_path):
    s, model = burgers_model
    path = save_model(model, tmp_path / "m.bin")
    back = load_model(path)
    _assert_same(model, back)
    assert isinstance(back.terms[0].g, np.memmap)
    xi = s.test_set(5)
    np.testing.assert_array_equal(online_zetas(back, xi).zetas, online_zetas(model, xi).zetas)
    eager = load_model(path, mmap=False)
    assert not isinstance(eager.terms[0].g, np.memmap)


def test_layout_is_little_endian_node_major(burgers_model, tmp_path):
    _, model = burgers_model
    path = save_model(model, tmp_path / "m.bin")
    version, header, start = read_header(path)
    assert version == FORMAT_VERSION
    entry = next(e for e in header["arrays"] if e["name"] == "t1/g")
    raw = np.fromfile(path, dtype="<f8", count=int(np.prod(entry["shape"])), offset=start + entry["offset"])
    np.testing.assert_array_equal(raw.reshape(entry["shape"]), model.terms[1].g)
    assert entry["shape"] == [model.grid.n_steps + 1, model.mesh.interior.size]
    assert header["affine_terms"]["nonlinear"] == ["convection"]


def test_stripped_and_static_models_round_trip(heat, tmp_path):
    vs = run_vs(heat.ops, heat.grid, heat.training, n_max=2)
    _assert_same(vs, load_model(save_model(vs, tmp_path / "vs.bin")))
    st = vs.stripped()
    back = load_model(save_model(st, tmp_path / "st.bin"))
    assert not back.has_fields
    np.testing.assert_array_equal(online_zetas(back, heat.test_set(2)).zetas, online_zetas(vs, heat.test_set(2)).zetas)


def test_manifest(burgers_model, tmp_path):
    _, model = burgers_model
    path = save_model(model, tmp_path / "m.bin")
    man = json.loads((tmp_path / "m.bin.json").read_text())
    assert man["n_terms"] == 3 and man["term_norms"] == [t.norm for t in model.terms]
    assert [d["anchor_index"] for d in man["delta_history"]] == [st.anchor_index for st in model.trace]
    assert man["config"]["strategy"] == "true-error" and man["version"]
    assert path.exists()


def _patch_version(path, major):
    data = bytearray(path.read_bytes())
    data[8:12] = struct.pack("<I", major)
    path.write_bytes(bytes(data))


def test_newer_major_version_is_refused_with_header(burgers_model, tmp_path):
    _, model = burgers_model
    path = save_model(model, tmp_path / "m.bin")
    _patch_version(path, FORMAT_VERSION[0] + 1)
    with pytest.raises(ModelFormatError, match="not readable") as err:
        load_model(path)
    assert '"method": "dvs"' in str(err.value)


def test_corrupt_files(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"hello")
    with pytest.raises(ModelFormatError, match="too short"):
        load_model(p)
    p.write_bytes(b"NOTAMODEL" + bytes(40))
    with pytest.raises(ModelFormatError, match="magic"):
        load_model(p)
    p.write_bytes(struct.pack("<8sIIQ", MAGIC, 1, 0, 100) + b"{}")
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(p)


def test_truncated_payload(burgers_model, tmp_path):
    _, model = burgers_model
    path = save_model(model, tmp_path / "m.bin")
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(ModelFormatError, match="past the end"):
        load_model(path)


def test_csv_format(tmp_path):
    assert format_value(1234.5678) == "1.23457e+03"
    assert format_value(np.float64(-2.5e-7)) == "-2.50000e-07"
    assert format_value(7) == "7" and format_value(np.int64(3)) == "3" and format_value("dvs") == "dvs"
    p = write_csv(tmp_path / "a" / "t.csv", ["N", "eps"], [[1, 0.5], [2, float("nan")]])
    header, rows = read_csv(p)
    assert header == ["N", "eps"] and rows == [["1", "5.00000e-01"], ["2", "nan"]]
    assert p.read_text().startswith("N,eps\n1,5.00000e-01\n")
