"""
Unit tests for dnn module
"""
import math

import numpy as np
import pytest
import torch

from ssb_guard import dnn
from ssb_guard.config import ModelLayout
from ssb_guard.exceptions import FileMissingException, FormatException, ValidationException


def accuracy(model: dnn.JammingCNN, tensors: np.ndarray, labels: np.ndarray) -> float:
    scores = dnn.predict_scores(model, tensors)
    return float(np.mean(scores.argmax(axis=1) == labels))


class TestJammingCNN:
    """Test the network shape and scores"""

    def test_score_shape_and_sum(self, tiny_layout, separable_data):
        """Test inference returns N x 2 probabilities summing to 1"""
        tensors, _ = separable_data
        model = dnn.JammingCNN(tiny_layout, (5, 16), seed=1)
        scores = dnn.predict_scores(model, tensors[:10])
        assert scores.shape == (10, 2)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(scores >= 0.0)

    def test_empty_batch(self, tiny_layout):
        """Test an empty batch gives an empty score array"""
        model = dnn.JammingCNN(tiny_layout, (5, 16))
        assert dnn.predict_scores(model, np.zeros((0, 5, 16))).shape == (0, 2)

    def test_seeded_init(self, tiny_layout):
        """Test the same seed gives the same weights"""
        a = dnn.JammingCNN(tiny_layout, (5, 16), seed=4)
        b = dnn.JammingCNN(tiny_layout, (5, 16), seed=4)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_too_small_input_rejected(self, tiny_layout):
        """Test an input narrower than the kernels raises"""
        with pytest.raises(ValidationException):
            dnn.JammingCNN(tiny_layout, (5, 2))

    def test_wrong_batch_shape_rejected(self, tiny_layout):
        """Test a batch of the wrong shape raises"""
        model = dnn.JammingCNN(tiny_layout, (5, 16))
        with pytest.raises(ValidationException):
            model.as_batch(np.zeros((2, 5, 12)))

    def test_layer_record_order(self, tiny_layout):
        """Test the file layer order: input, 3 x (conv, bn), 2 x fc"""
        model = dnn.JammingCNN(tiny_layout, (5, 16))
        tags = [tag for tag, _, _ in model.layer_records()]
        assert tags == [0, 1, 2, 1, 2, 1, 2, 3, 3]

    def test_input_normalization(self, tiny_layout, separable_data):
        """Test fitted statistics standardize every row"""
        tensors, _ = separable_data
        model = dnn.JammingCNN(tiny_layout, (5, 16))
        model.fit_input_normalization(tensors)
        x = model.as_batch(tensors)
        normalized = ((x - model.input_mean) / model.input_scale).double()
        means = normalized.mean(dim=(0, 1, 3))
        assert torch.allclose(means, torch.zeros(5, dtype=torch.float64), atol=1e-4)


class TestLossAndStep:
    """Test the loss and the SGDM update"""

    def test_nll_uniform(self):
        """Test a 50/50 score costs ln 2"""
        scores = torch.tensor([[0.5, 0.5], [0.5, 0.5]], dtype=torch.float64)
        loss = dnn.nll_loss(scores, torch.tensor([0, 1]))
        assert float(loss) == pytest.approx(math.log(2.0))

    def test_nll_clamped(self):
        """Test a zero true-class score is clamped at 1e-12"""
        scores = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
        loss = dnn.nll_loss(scores, torch.tensor([0]))
        assert float(loss) == pytest.approx(-math.log(1e-12))

    def test_sgdm_two_steps(self):
        """Test the velocity recursion over two steps"""
        p = [torch.tensor([1.0], dtype=torch.float64)]
        v = [torch.zeros(1, dtype=torch.float64)]
        g = [torch.tensor([2.0], dtype=torch.float64)]
        dnn.sgdm_step(p, g, v, lr=0.1, momentum=0.9)
        assert float(v[0]) == pytest.approx(-0.2)
        assert float(p[0]) == pytest.approx(0.8)
        dnn.sgdm_step(p, g, v, lr=0.1, momentum=0.9)
        assert float(v[0]) == pytest.approx(-0.38)
        assert float(p[0]) == pytest.approx(0.42)

    def test_sgdm_shape_mismatch(self):
        """Test mismatched gradient shapes raise"""
        with pytest.raises(ValidationException):
            dnn.sgdm_step([torch.zeros(2)], [torch.zeros(3)], [torch.zeros(2)], 0.1, 0.9)


class TestGradientCheck:
    """Test backprop against central differences"""

    def test_output_bias(self, tiny_layout, separable_data):
        """Test the output bias gradient matches finite differences"""
        tensors, labels = separable_data
        model = dnn.JammingCNN(tiny_layout, (5, 16), seed=2)
        errors = dnn.gradient_errors(model, tensors[:8], labels[:8])
        assert errors["head.3.bias"] < 1e-6
        assert errors["head.3.weight"] < 1e-5

    def test_covers_every_parameter(self, tiny_layout, separable_data):
        """Test every named parameter gets an error entry"""
        tensors, labels = separable_data
        model = dnn.JammingCNN(tiny_layout, (5, 16), seed=2)
        errors = dnn.gradient_errors(model, tensors[:4], labels[:4])
        assert set(errors) == {name for name, _ in model.named_parameters()}
        assert dnn.gradient_check(model, tensors[:4], labels[:4]) == max(errors.values())

    def test_model_untouched(self, tiny_layout, separable_data):
        """Test the check runs on a copy"""
        tensors, labels = separable_data
        model = dnn.JammingCNN(tiny_layout, (5, 16), seed=2)
        before = [p.detach().clone() for p in model.parameters()]
        dnn.gradient_errors(model, tensors[:4], labels[:4])
        for p, q in zip(model.parameters(), before):
            assert torch.equal(p, q)
        assert model.dtype == torch.float32


class TestTraining:
    """Test SGDM and cascade training"""

    def test_separable_accuracy(self, tiny_layout, fast_train, separable_data):
        """Test a separable toy set is learned"""
        tensors, labels = separable_data
        result = dnn.train(tensors, labels, fast_train, tiny_layout)
        assert result.final_validation_accuracy is not None
        assert result.final_validation_accuracy >= 0.95
        assert accuracy(result.model, tensors, labels) >= 0.95

    def test_log_entries(self, tiny_layout, fast_train, separable_data):
        """Test one log entry per iteration with validation every fifth"""
        tensors, labels = separable_data
        log = dnn.train(tensors, labels, fast_train, tiny_layout).log
        assert [entry.iteration for entry in log] == list(range(1, len(log) + 1))
        assert {entry.stage for entry in log} == {0}
        for entry in log:
            assert (entry.validation_accuracy is not None) == (entry.iteration % 5 == 0)

    def test_deterministic(self, tiny_layout, fast_train, separable_data):
        """Test training is reproducible for a fixed seed"""
        tensors, labels = separable_data
        a = dnn.train(tensors, labels, fast_train, tiny_layout)
        b = dnn.train(tensors, labels, fast_train, tiny_layout)
        np.testing.assert_array_equal(
            dnn.predict_scores(a.model, tensors), dnn.predict_scores(b.model, tensors)
        )

    def test_single_class_rejected(self, tiny_layout, fast_train, separable_data):
        """Test training data without both classes raises"""
        tensors, _ = separable_data
        with pytest.raises(ValidationException):
            dnn.train(tensors, np.zeros(len(tensors), dtype=np.int64), fast_train, tiny_layout)

    def test_cascade(self, tiny_layout, fast_train, separable_data):
        """Test cascade training runs four stages and learns the toy set"""
        tensors, labels = separable_data
        stages = []
        result = dnn.cascade_train(
            tensors,
            labels,
            fast_train,
            tiny_layout,
            stage_callback=lambda stage, model: stages.append(stage),
        )
        assert stages == [1, 2, 3, 4]
        assert sorted({entry.stage for entry in result.log}) == [1, 2, 3, 4]
        assert accuracy(result.model, tensors, labels) >= 0.9
        assert all(p.requires_grad for p in result.model.parameters())

    def test_cascade_freezes_lower_blocks(self, tiny_layout, fast_train, separable_data):
        """Test block 1 does not change after its own stage"""
        tensors, labels = separable_data
        snapshots = {}

        def snapshot(stage, model):
            snapshots[stage] = model.blocks[0][0].weight.detach().clone()

        dnn.cascade_train(tensors, labels, fast_train, tiny_layout, stage_callback=snapshot)
        assert torch.equal(snapshots[1], snapshots[4])


class TestModelFile:
    """Test the SSBNN001 model file"""

    def test_save_load_scores(self, tiny_layout, fast_train, separable_data, temp_dir):
        """Test a reloaded model reproduces the scores"""
        tensors, labels = separable_data
        model = dnn.train(tensors, labels, fast_train, tiny_layout).model
        path = temp_dir / "dnn1.bin"
        dnn.save_model(model, path)
        loaded = dnn.load_model(path)
        assert loaded.layout == tiny_layout
        assert loaded.input_shape == (5, 16)
        np.testing.assert_allclose(
            dnn.predict_scores(loaded, tensors), dnn.predict_scores(model, tensors), atol=1e-6
        )

    def test_file_header_and_tags(self, tiny_layout, temp_dir):
        """Test the magic and the stored layer sequence"""
        path = temp_dir / "model.bin"
        dnn.save_model(dnn.JammingCNN(tiny_layout, (5, 16)), path)
        raw = path.read_bytes()
        assert raw[:8] == b"SSBNN001"
        assert int.from_bytes(raw[8:12], "little") == 1
        assert raw[12] == 0
        tags = [record[0] for record in dnn._read_records(path)]
        assert tags == [0, 1, 2, 1, 2, 1, 2, 3, 3]

    def test_default_layout_round_trip(self, temp_dir):
        """Test the default layout survives save and load"""
        path = temp_dir / "default.bin"
        dnn.save_model(dnn.JammingCNN(ModelLayout(), (5, 64)), path)
        assert dnn.load_model(path).layout == ModelLayout()

    def test_corrupt_magic(self, tiny_layout, temp_dir):
        """Test a bad magic raises FormatException at offset 0"""
        path = temp_dir / "model.bin"
        dnn.save_model(dnn.JammingCNN(tiny_layout, (5, 16)), path)
        raw = bytearray(path.read_bytes())
        raw[:8] = b"NOTMODEL"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatException) as exc_info:
            dnn.load_model(path)
        assert exc_info.value.details["offset"] == 0

    def test_truncated(self, tiny_layout, temp_dir):
        """Test a truncated file raises"""
        path = temp_dir / "model.bin"
        dnn.save_model(dnn.JammingCNN(tiny_layout, (5, 16)), path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatException):
            dnn.load_model(path)

    def test_missing_file(self, temp_dir):
        """Test a missing file raises FileMissingException"""
        with pytest.raises(FileMissingException):
            dnn.load_model(temp_dir / "absent.bin")
