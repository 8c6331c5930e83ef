# tests/test_checkpoint.py
import json

import numpy as np
import pytest

from npmatch.checkpoint import CHECKPOINT_FORMAT, load_checkpoint, save_checkpoint
from npmatch.errors import CheckpointError
from npmatch.nn_core import EmaShadow
from npmatch.np_model import ModelDims, NpModel, bank_init

DIMS = ModelDims(input_dim=2, feature_dim=3, latent_dim=2, num_classes=2, hidden_dim=4)


@pytest.fixture
def saved(tmp_path):
    student = NpModel.initialize(DIMS, 0)
    shadow = EmaShadow.from_parameters(NpModel.initialize(DIMS, 1).parameters())
    bank = bank_init(capacity=3, feature_dim=3, num_classes=2, seed=0)
    bank.push(np.ones((4, 3)), np.full((4, 2), 0.5))
    path = save_checkpoint(
        tmp_path / "run" / "checkpoint.json",
        student,
        shadow,
        {"labeled": bank},
        config={"seed": 0},
        metadata={"iterations": 7},
    )
    return path, student, shadow, bank


def _rewrite(path, mutate):
    document = json.loads(path.read_text())
    mutate(document)
    path.write_text(json.dumps(document))


class TestCheckpoint:
    """Versioned JSON checkpoints"""

    def test_round_trip(self, saved):
        """Student, EMA teacher and banks come back exactly"""
        path, student, shadow, bank = saved
        bundle = load_checkpoint(path)
        for name, value in student.parameters().items():
            np.testing.assert_array_equal(bundle.student.parameters()[name], value)
        for name, value in shadow.params.items():
            np.testing.assert_array_equal(bundle.teacher.parameters()[name], value)
        restored = bundle.banks["labeled"]
        np.testing.assert_array_equal(restored.features, bank.features)
        assert (restored.pushes, restored.evictions, restored.capacity) == (5, 2, 3)
        assert bundle.metadata == {"iterations": 7}
        assert bundle.dims == DIMS

    def test_layout(self, saved):
        """Header fields and tensor prefixes"""
        document = json.loads(saved[0].read_text())
        assert document["format"] == CHECKPOINT_FORMAT
        assert document["version"] == 1
        assert "student/encoder.w1" in document["tensors"]
        assert "ema/decoder.b2" in document["tensors"]

    def test_file_is_byte_stable(self, saved, tmp_path):
        """Saving the same state twice gives identical bytes"""
        path, student, shadow, bank = saved
        again = save_checkpoint(
            tmp_path / "again.json", student, shadow, {"labeled": bank}, {"seed": 0}, {"iterations": 7}
        )
        assert again.read_bytes() == path.read_bytes()

    def test_missing_file(self, tmp_path):
        """A missing path is a CheckpointError"""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.json")

    def test_not_json(self, tmp_path):
        """Garbage bytes are a CheckpointError"""
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_version(self, saved):
        """Unknown versions are rejected"""
        path = saved[0]
        _rewrite(path, lambda d: d.update(version=2))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_tensor(self, saved):
        """A dropped tensor is reported"""
        path = saved[0]
        _rewrite(path, lambda d: d["tensors"].pop("ema/encoder.b1"))
        with pytest.raises(CheckpointError) as exc:
            load_checkpoint(path)
        assert "encoder.b1" in exc.value.details["missing"]

    def test_truncated_tensor(self, saved):
        """Data that does not fill its shape is rejected"""
        path = saved[0]
        _rewrite(path, lambda d: d["tensors"]["student/decoder.w2"]["data"].pop())
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_overfull_bank(self, saved):
        """A bank with more records than its capacity is rejected"""
        path = saved[0]
        _rewrite(path, lambda d: d["banks"]["labeled"].update(capacity=1))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    @pytest.mark.parametrize("section", ["tensors", "banks", "config", "metadata"])
    def test_section_not_an_object(self, saved, section):
        """Sections holding a list instead of an object are rejected"""
        path = saved[0]
        _rewrite(path, lambda d: d.update({section: ["oops"]}))
        with pytest.raises(CheckpointError) as exc:
            load_checkpoint(path)
        assert exc.value.details["section"] == section

    def test_bank_entry_not_an_object(self, saved):
        """A bank stored as a bare string is rejected"""
        path = saved[0]
        _rewrite(path, lambda d: d["banks"].update(labeled="oops"))
        with pytest.raises(CheckpointError) as exc:
            load_checkpoint(path)
        assert exc.value.details["bank"] == "labeled"
