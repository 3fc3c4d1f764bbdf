import json

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError, InvalidInputError
from file_utils import (BUNDLE_FILES, load_bundle, read_config, read_matrix, save_bundle, save_train_log,
                        validate_output_dir, write_csv)
from model import LOG_COLUMNS


class TestOutputDir:
    def test_creates_directory(self, tmp_path):
        ok, error = validate_output_dir(str(tmp_path / "a" / "b"))
        assert ok and error is None
        assert (tmp_path / "a" / "b").is_dir()

    def test_path_under_a_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        ok, error = validate_output_dir(str(blocker / "sub"))
        assert not ok and "Cannot create" in error

    def test_empty_path(self):
        assert validate_output_dir("") == (False, "No output directory given")


class TestConfig:
    def test_missing_path_gives_empty(self):
        assert read_config(None) == {}

    def test_flat_object(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"alpha": 0.2, "cdl_mode": "linear"}))
        assert read_config(str(path)) == {"alpha": 0.2, "cdl_mode": "linear"}

    @pytest.mark.parametrize("text", ["[1, 2]", "{\"a\": {\"b\": 1}}", "{not json"])
    def test_rejects(self, tmp_path, text):
        path = tmp_path / "c.json"
        path.write_text(text)
        with pytest.raises(ConfigError):
            read_config(str(path))


class TestBundleFiles:
    def test_round_trip_is_exact(self, tmp_path, small_pendulum):
        paths = save_bundle(small_pendulum, str(tmp_path))
        assert [p.rsplit("/", 1)[-1] for p in paths] == list(BUNDLE_FILES)
        back = load_bundle(str(tmp_path))
        np.testing.assert_array_equal(back.factors, small_pendulum.factors)
        np.testing.assert_array_equal(back.observations, small_pendulum.observations)
        np.testing.assert_array_equal(back.mixing, small_pendulum.mixing)
        np.testing.assert_array_equal(back.pair_index, small_pendulum.pair_index)
        assert back.truth == small_pendulum.truth
        assert back.factor_names == small_pendulum.factor_names

    def test_missing_files(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_bundle(str(tmp_path))

    @pytest.mark.parametrize("field", ["m_u", "factor_names", "mixing"])
    def test_meta_missing_a_field(self, tmp_path, small_pendulum, field):
        save_bundle(small_pendulum, str(tmp_path))
        meta_path = tmp_path / "meta.json"
        meta = json.loads(meta_path.read_text())
        del meta[field]
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(InvalidInputError, match=field):
            load_bundle(str(tmp_path))

    def test_meta_must_be_an_object(self, tmp_path, small_pendulum):
        save_bundle(small_pendulum, str(tmp_path))
        (tmp_path / "meta.json").write_text("[1, 2]")
        with pytest.raises(InvalidInputError):
            load_bundle(str(tmp_path))

    def test_header_check(self, tmp_path):
        path = str(tmp_path / "m.csv")
        write_csv(path, pd.DataFrame({"a": [1.0], "b": [2.0]}))
        assert read_matrix(path, ["a", "b"]).tolist() == [[1.0, 2.0]]
        with pytest.raises(InvalidInputError):
            read_matrix(path, ["b", "a"])


class TestTrainLog:
    def test_empty_log_keeps_header(self, tmp_path):
        path = str(tmp_path / "log.csv")
        save_train_log([], path, LOG_COLUMNS)
        with open(path) as f:
            assert f.read().strip() == ",".join(LOG_COLUMNS)
