import json

import numpy as np
import pytest

from h2axdose.artifact import (
    CalibrationArtifact,
    atomic_write_text,
    coefficients_from_dict,
    coefficients_to_dict,
    ingest_calibration_csv,
    parse_artifact,
    read_artifact,
    read_design_csv,
    read_params_file,
    serialize_artifact,
    write_artifact,
    write_calibration_csv,
)
from h2axdose.errors import ParseError
from h2axdose.model import MixtureParams


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestIngest:
    def test_three_rows(self, tmp_path):
        path = write(tmp_path, "c.csv", "dose_gy,time_h,foci_count\n0,0.5,1\n1,2,4\n2,0.5,9\n")
        data = ingest_calibration_csv(path)
        assert len(data) == 3
        assert data.records[1].count == 4

    def test_aggregated_expansion(self, tmp_path):
        path = write(tmp_path, "a.csv", "dose_gy,time_h,foci_count,cell_count\n2.0,0.5,7,15\n0,1,0,3\n")
        data = ingest_calibration_csv(path)
        assert len(data) == 18
        assert sum(1 for r in data.records if (r.dose, r.time, r.count) == (2.0, 0.5, 7)) == 15

    def test_negative_dose_names_line(self, tmp_path):
        path = write(tmp_path, "b.csv", "dose_gy,time_h,foci_count\n0,1,2\n-1,1,2\n")
        with pytest.raises(ParseError) as info:
            ingest_calibration_csv(path)
        assert info.value.line == 3 and info.value.column == 1
        assert "line 3" in str(info.value)

    def test_non_numeric(self, tmp_path):
        path = write(tmp_path, "b.csv", "dose_gy,time_h,foci_count\n0,1,x\n")
        with pytest.raises(ParseError) as info:
            ingest_calibration_csv(path)
        assert (info.value.line, info.value.column) == (2, 3)

    @pytest.mark.parametrize("text", ["", "dose,time,count\n0,1,2\n", "0,1,2\n1,2,3\n"])
    def test_bad_header(self, tmp_path, text):
        with pytest.raises(ParseError, match="header"):
            ingest_calibration_csv(write(tmp_path, "h.csv", text))

    def test_fractional_count_and_zero_time(self, tmp_path):
        with pytest.raises(ParseError):
            ingest_calibration_csv(write(tmp_path, "f.csv", "dose_gy,time_h,foci_count\n0,1,1.5\n"))
        with pytest.raises(ParseError):
            ingest_calibration_csv(write(tmp_path, "f.csv", "dose_gy,time_h,foci_count\n0,0,1\n"))

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(ParseError) as info:
            ingest_calibration_csv(write(tmp_path, "f.csv", "dose_gy,time_h,foci_count\n0,1\n"))
        assert info.value.line == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="not found"):
            ingest_calibration_csv(tmp_path / "nope.csv")

    def test_roundtrip(self, tmp_path, k1_data):
        write_calibration_csv(tmp_path / "out.csv", k1_data)
        assert ingest_calibration_csv(tmp_path / "out.csv").digest() == k1_data.digest()

    def test_design(self, tmp_path):
        path = write(tmp_path, "d.csv", "dose_gy,time_h,cells\n0,1,10\n1,2,0\n")
        assert read_design_csv(path) == [(0.0, 1.0, 10), (1.0, 2.0, 0)]


class TestArtifact:
    def test_byte_identical_roundtrip(self, k2_calib):
        text = serialize_artifact(CalibrationArtifact(k2_calib, {"software": "x"}))
        again = serialize_artifact(parse_artifact(text))
        assert again == text

    def test_contents(self, k2_calib):
        obj = json.loads(serialize_artifact(CalibrationArtifact(k2_calib, {})))
        assert obj["format_version"] == 1
        assert len(obj["covariance"]) == k2_calib.p**2
        assert obj["parameter_order"] == k2_calib.parameter_order
        assert obj["data_digest"] == k2_calib.data_digest
        assert "timestamp" not in json.dumps(obj)

    def test_parsed_values_exact(self, k2_calib):
        art = parse_artifact(serialize_artifact(CalibrationArtifact(k2_calib, {})))
        np.testing.assert_array_equal(art.result.covariance, k2_calib.covariance)
        np.testing.assert_array_equal(art.result.free_mode, k2_calib.free_mode)
        assert art.result.params == k2_calib.params

    def test_file_roundtrip(self, tmp_path, k2_calib):
        path = tmp_path / "cal.json"
        write_artifact(path, CalibrationArtifact(k2_calib, {"a": 1}))
        first = path.read_bytes()
        write_artifact(path, read_artifact(path))
        assert path.read_bytes() == first
        assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]

    @pytest.mark.parametrize("mutate", [
        lambda o: o.update(format_version=99),
        lambda o: o.update(covariance=o["covariance"][:-1]),
        lambda o: o.update(K=3),
        lambda o: o["coefficients"].update(a=[1.0]),
        lambda o: o.update(free_mode=[v + 0.1 for v in o["free_mode"]]),
        lambda o: o.pop("aic"),
        lambda o: o.update(format="other"),
    ])
    def test_rejects_corruption(self, k2_calib, mutate):
        obj = json.loads(serialize_artifact(CalibrationArtifact(k2_calib, {})))
        mutate(obj)
        with pytest.raises(ParseError):
            parse_artifact(json.dumps(obj))

    def test_invalid_json(self):
        with pytest.raises(ParseError) as info:
            parse_artifact("{\n  nope")
        assert info.value.line == 2

    def test_atomic_write_failure_leaves_target(self, tmp_path):
        path = tmp_path / "keep.txt"
        path.write_text("old")

        with pytest.raises(TypeError):
            atomic_write_text(path, object())
        assert path.read_text() == "old"
        assert list(tmp_path.iterdir()) == [path]


class TestParamsFile:
    @pytest.mark.parametrize("shared", [True, False])
    def test_coefficients_roundtrip(self, shared):
        params = MixtureParams.from_arrays([0.25, 0.75], [2.0, 8.0], [1.0, 2.0], [0.1] if shared else [0.1, -0.1],
                                           [-0.2, -0.3], shared_u=shared)
        assert coefficients_from_dict(coefficients_to_dict(params)) == params

    def test_read_both_kinds(self, tmp_path, k2_calib):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(coefficients_to_dict(k2_calib.params)))
        assert read_params_file(path) == k2_calib.params
        write_artifact(tmp_path / "a.json", CalibrationArtifact(k2_calib, {}))
        assert read_params_file(tmp_path / "a.json") == k2_calib.params

    def test_invalid(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"weights": [0.5, 0.6], "a": [1, 1], "c": [1, 1], "v": [0, 0], "u": 0}))
        with pytest.raises(ParseError):
            read_params_file(path)
        path.write_text(json.dumps({"weights": [1.0], "a": [1], "c": [1], "v": [0]}))
        with pytest.raises(ParseError):
            read_params_file(path)
