import json
import struct
import warnings

import numpy as np
import pytest

from dsir import io
from dsir.contrastive import TrainConfig
from dsir.io import FormatError
from dsir.volume import DisplacementField, LabelVolume, Volume


def nifti_bytes(arr, code, pixdim=(1.0, 1.0, 1.0), slope=0.0, inter=0.0, magic=b"n+1\x00", qform=0):
    """Minimal single-file NIfTI-1 built field by field."""
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, arr.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, slope)
    struct.pack_into("<f", hdr, 116, inter)
    struct.pack_into("<h", hdr, 252, qform)
    struct.pack_into("4s", hdr, 344, magic)
    return bytes(hdr) + b"\x00" * 4 + arr.ravel(order="F").tobytes()


LEGEND = {0: "background", 1: "organ", 2: "tumour", 3: "vessel"}


class TestNative:
    def test_intensity_round_trip(self, tmp_path):
        v = Volume(np.random.default_rng(0).random((4, 5, 6)).astype(np.float32), (1.0, 2.0, 0.5))
        io.write_volume(v, tmp_path / "v.f32")
        back = io.read_volume(tmp_path / "v.f32")
        assert back.data.tobytes() == v.data.tobytes() and back.spacing == (1.0, 2.0, 0.5)

    def test_label_round_trip(self, tmp_path):
        lab = LabelVolume(np.random.default_rng(1).integers(0, 4, (4, 4, 4)), LEGEND)
        io.write_volume(lab, tmp_path / "l.f32")
        back = io.read_volume(tmp_path / "l.f32")
        assert isinstance(back, LabelVolume)
        assert np.array_equal(back.data, lab.data) and back.legend == LEGEND

    def test_displacement_round_trip(self, tmp_path):
        phi = DisplacementField(np.random.default_rng(2).standard_normal((3, 4, 5, 6)).astype(np.float32))
        io.write_volume(phi, tmp_path / "d.f32")
        back = io.read_volume(tmp_path / "d.f32")
        assert isinstance(back, DisplacementField)
        assert back.data.astype(np.float32).tobytes() == phi.data.astype(np.float32).tobytes()
        # stored channels last
        raw = np.frombuffer((tmp_path / "d.f32").read_bytes(), "<f4").reshape(4, 5, 6, 3)
        assert np.array_equal(raw[..., 1], phi.data[1].astype(np.float32))

    def test_dsir_round_trip(self, tmp_path):
        D = np.random.default_rng(3).standard_normal((4, 4, 4, 24)).astype(np.float32)
        io.write_volume(D, tmp_path / "x.dsir")
        back = io.read_volume(tmp_path / "x.dsir")
        assert back.dtype == np.float32 and back.tobytes() == D.tobytes()
        side = json.loads((tmp_path / "x.dsir.json").read_text())
        assert side["channels"] == 24 and side["kind"] == "dsir"

    def test_truncated_payload(self, tmp_path):
        io.write_volume(np.ones((4, 4, 4)), tmp_path / "v.f32")
        (tmp_path / "v.f32").write_bytes((tmp_path / "v.f32").read_bytes()[:-4])
        with pytest.raises(FormatError, match="bytes"):
            io.read_volume(tmp_path / "v.f32")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "v.f32").write_bytes(b"\x00" * 16)
        with pytest.raises(FormatError, match="sidecar"):
            io.read_volume(tmp_path / "v.f32")

    def test_bad_kind(self, tmp_path):
        with pytest.raises(ValueError):
            io.write_volume(np.ones((2, 2, 2)), tmp_path / "v", kind="mesh")


class TestNifti:
    def test_handmade_float(self, tmp_path):
        arr = np.arange(8 * 8 * 8, dtype="<f4").reshape(8, 8, 8)
        (tmp_path / "a.nii").write_bytes(nifti_bytes(arr, 16, (2.0, 2.0, 2.0)))
        v = io.read_volume(tmp_path / "a.nii")
        assert v.dims == (8, 8, 8) and v.spacing == (2.0, 2.0, 2.0)
        assert np.array_equal(v.data, arr)

    def test_first_axis_fastest(self, tmp_path):
        arr = np.arange(2 * 3 * 4, dtype="<f4").reshape(2, 3, 4)
        (tmp_path / "a.nii").write_bytes(nifti_bytes(arr, 16))
        raw = np.frombuffer((tmp_path / "a.nii").read_bytes()[352:], "<f4")
        assert raw[1] == arr[1, 0, 0]
        assert np.array_equal(io.read_nifti(tmp_path / "a.nii").data, arr)

    def test_int16_scaling(self, tmp_path):
        arr = np.array([0, 10, 20, 30, 40, 50, 60, 70], dtype="<i2").reshape(2, 2, 2)
        (tmp_path / "s.nii").write_bytes(nifti_bytes(arr, 4, slope=0.5, inter=-1.0))
        v = io.read_nifti(tmp_path / "s.nii")
        assert np.allclose(v.data, arr * 0.5 - 1.0)
        assert v.meta["scl_slope"] == 0.5 and v.meta["datatype"] == 4

    def test_uint8(self, tmp_path):
        arr = np.arange(27, dtype="u1").reshape(3, 3, 3)
        (tmp_path / "u.nii").write_bytes(nifti_bytes(arr, 2))
        assert np.array_equal(io.read_nifti(tmp_path / "u.nii").data, arr)

    def test_two_file_magic_rejected(self, tmp_path):
        (tmp_path / "b.nii").write_bytes(nifti_bytes(np.zeros((2, 2, 2), "<f4"), 16, magic=b"ni1\x00"))
        with pytest.raises(FormatError, match="ni1"):
            io.read_nifti(tmp_path / "b.nii")

    def test_big_endian_rejected(self, tmp_path):
        data = bytearray(nifti_bytes(np.zeros((2, 2, 2), "<f4"), 16))
        struct.pack_into(">i", data, 0, 348)
        (tmp_path / "b.nii").write_bytes(bytes(data))
        with pytest.raises(FormatError, match="big-endian"):
            io.read_nifti(tmp_path / "b.nii")

    def test_unsupported_datatype(self, tmp_path):
        (tmp_path / "d.nii").write_bytes(nifti_bytes(np.zeros((2, 2, 2), "<f8"), 64))
        with pytest.raises(FormatError, match="datatype"):
            io.read_nifti(tmp_path / "d.nii")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.nii").write_bytes(nifti_bytes(np.zeros((4, 4, 4), "<f4"), 16)[:-8])
        with pytest.raises(FormatError, match="truncated"):
            io.read_nifti(tmp_path / "t.nii")

    def test_orientation_warning(self, tmp_path):
        (tmp_path / "q.nii").write_bytes(nifti_bytes(np.zeros((2, 2, 2), "<f4"), 16, qform=1))
        with pytest.warns(UserWarning, match="orientation"):
            io.read_nifti(tmp_path / "q.nii")

    def test_no_warning_without_orientation(self, tmp_path):
        (tmp_path / "q.nii").write_bytes(nifti_bytes(np.zeros((2, 2, 2), "<f4"), 16))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            io.read_nifti(tmp_path / "q.nii")

    def test_writer_round_trip(self, tmp_path):
        v = Volume(np.random.default_rng(4).random((3, 4, 5)).astype(np.float32), (0.5, 1.0, 1.5))
        io.write_volume(v, tmp_path / "w.nii")
        back = io.read_volume(tmp_path / "w.nii")
        assert back.data.tobytes() == v.data.tobytes() and back.spacing == (0.5, 1.0, 1.5)

    def test_writer_refuses_displacement(self, tmp_path):
        with pytest.raises(FormatError):
            io.write_volume(DisplacementField.zeros((2, 2, 2)), tmp_path / "d.nii")


class TestConfig:
    def test_yaml_and_json_agree(self, tmp_path):
        (tmp_path / "c.yaml").write_text("n_samples: 64\ntemperature: 0.1\n")
        (tmp_path / "c.json").write_text('{"n_samples": 64, "temperature": 0.1}')
        assert io.load_config(tmp_path / "c.yaml") == io.load_config(tmp_path / "c.json")

    def test_empty(self, tmp_path):
        (tmp_path / "e.yaml").write_text("")
        assert io.load_config(tmp_path / "e.yaml") == {}

    def test_non_mapping(self, tmp_path):
        (tmp_path / "l.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(FormatError):
            io.load_config(tmp_path / "l.yaml")

    def test_config_from_dict(self):
        cfg = io.config_from_dict(TrainConfig, {"n_samples": 64, "temperature": 0.1}, temperature=None, seed=4)
        assert cfg.n_samples == 64 and cfg.temperature == 0.1 and cfg.seed == 4

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="tempreature"):
            io.config_from_dict(TrainConfig, {"tempreature": 0.1})
