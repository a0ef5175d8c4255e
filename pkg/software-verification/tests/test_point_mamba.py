"""
Unit tests for the point-sequence classifier: encoders, blocks, head and checkpoints.
"""

import json
from dataclasses import replace

import pytest
import torch
import torch.nn.functional as F

from models.errors import InvalidParameterError, NumericalOverflowError, ParseError
from models.point_mamba import (PatchEncoder, CenterEncoder, MambaBlock, AttentionBlock, ClassificationHead,
                                PointSequenceClassifier, parameter_count)
from models.pipeline import collate, prepare_sample
from models.shapes import gen_shape
from models.ssm import DTYPE


def _randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)


class TestPatchEncoder:
    """Tests for the shared pointwise patch network."""

    def test_output_width(self):
        """Test that each patch becomes one d_e token."""
        encoder = PatchEncoder(12, 16)
        assert encoder(_randn(2, 5, 7, 3)).shape == (2, 5, 12)

    def test_within_patch_permutation_invariance(self):
        """Test that shuffling points inside a patch leaves its token unchanged."""
        encoder = PatchEncoder(8, 16)
        patches = _randn(4, 10, 3)
        shuffled = patches[:, torch.randperm(10)]
        with torch.no_grad():
            assert float((encoder(patches) - encoder(shuffled)).abs().max()) <= 1e-12

    def test_zero_patch_ignores_first_weights(self):
        """Test that an all-zero patch only sees the first layer through its bias."""
        encoder = PatchEncoder(8, 16)
        zeros = torch.zeros(1, 5, 3, dtype=DTYPE)
        with torch.no_grad():
            token = encoder(zeros)
            encoder.stage1_in.weight.mul_(3.0)
            assert torch.equal(encoder(zeros), token)

    def test_matches_straight_line_evaluation(self):
        """Test the encoder against a hand-written evaluation of the two-stage map."""
        encoder = PatchEncoder(6, 9)
        patch = _randn(11, 3, seed=3)
        with torch.no_grad():
            h = F.gelu(patch @ encoder.stage1_in.weight.T + encoder.stage1_in.bias)
            f = h @ encoder.stage1_out.weight.T + encoder.stage1_out.bias
            g = f.max(dim=0).values
            joined = torch.cat([g.expand(11, -1), f], dim=1)
            h2 = F.gelu(joined @ encoder.stage2_in.weight.T + encoder.stage2_in.bias)
            expected = (h2 @ encoder.stage2_out.weight.T + encoder.stage2_out.bias).max(dim=0).values
            torch.testing.assert_close(encoder(patch), expected, rtol=0, atol=1e-12)

    def test_width_mismatch(self):
        """Test that non-3D points are rejected."""
        with pytest.raises(InvalidParameterError):
            PatchEncoder(4, 4)(torch.zeros(2, 3, 2, dtype=DTYPE))


class TestCenterEncoder:
    """Tests for the center (positional) embedding."""

    def test_matches_straight_line_evaluation(self):
        """Test the two-layer map against a direct evaluation."""
        encoder = CenterEncoder(5, 7)
        centers = _randn(4, 3, seed=1)
        with torch.no_grad():
            expected = F.gelu(centers @ encoder.fc1.weight.T + encoder.fc1.bias) @ encoder.fc2.weight.T
            expected = expected + encoder.fc2.bias
            torch.testing.assert_close(encoder(centers), expected, rtol=0, atol=1e-12)


class TestBlocks:
    """Tests for the Mamba and attention blocks."""

    def test_mamba_block_is_causal(self):
        """Test that the full block (conv + S6 + gate) never looks ahead."""
        block = MambaBlock(6, expand=2, conv_kernel=4, d_state=3)
        X = _randn(1, 8, 6)
        Z = X.clone()
        Z[0, -1] += 1.0
        with torch.no_grad():
            assert torch.equal(block(X)[:, :-1], block(Z)[:, :-1])

    def test_mamba_block_keeps_width(self):
        """Test that the block maps (B, N, d) to (B, N, d)."""
        assert MambaBlock(5, d_state=2)(_randn(2, 4, 5)).shape == (2, 4, 5)

    def test_attention_block_is_equivariant(self):
        """Test that the attention block commutes with token permutations."""
        block = AttentionBlock(4)
        X = _randn(1, 6, 4)
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        with torch.no_grad():
            torch.testing.assert_close(block(X[:, perm]), block(X)[:, perm], rtol=0, atol=1e-10)


class TestClassificationHead:
    """Tests for mean+max pooling and the logits head."""

    def test_constant_sequence_pools_to_constant(self):
        """Test that mean and max pooling agree on a constant sequence."""
        encoded = torch.full((1, 5, 3), 0.7, dtype=DTYPE)
        pooled = ClassificationHead.pool(encoded)
        assert torch.equal(pooled, torch.full((1, 6), 0.7, dtype=DTYPE))

    def test_single_token_pools_to_itself(self):
        """Test that pooling a one-token sequence repeats that token."""
        encoded = _randn(1, 1, 4)
        assert torch.equal(ClassificationHead.pool(encoded), torch.cat([encoded[:, 0], encoded[:, 0]], dim=-1))

    def test_empty_sequence_rejected(self, toy_config):
        """Test that classify refuses a zero-length sequence."""
        model = PointSequenceClassifier(toy_config)
        with pytest.raises(InvalidParameterError):
            model.classify(torch.zeros(1, 0, toy_config.d_e, dtype=DTYPE))


class TestClassifier:
    """Tests for the full classifier."""

    def test_logits_shape(self, toy_config, toy_batch):
        """Test that the model produces one logit row per sample."""
        model = PointSequenceClassifier(toy_config)
        logits = model(toy_batch.centers, toy_batch.patches, toy_batch.serializations)
        assert logits.shape == (len(toy_batch), toy_config.num_classes)

    def test_zero_layers_is_final_norm_only(self, toy_config, toy_batch):
        """Test that an empty encoder only applies the final norm."""
        model = PointSequenceClassifier(replace(toy_config, layers=0))
        tokens = model.tokens(toy_batch.centers, toy_batch.patches, toy_batch.serializations)
        with torch.no_grad():
            assert torch.equal(model.encoder_forward(tokens), model.final_norm(tokens))

    def test_encoder_is_causal(self, toy_config, toy_batch):
        """Test that perturbing the last token leaves earlier encoder outputs unchanged."""
        model = PointSequenceClassifier(replace(toy_config, layers=2))
        tokens = model.tokens(toy_batch.centers, toy_batch.patches, toy_batch.serializations)
        changed = tokens.clone()
        changed[:, -1] += 1.0
        with torch.no_grad():
            assert torch.equal(model.encoder_forward(tokens)[:, :-1], model.encoder_forward(changed)[:, :-1])

    def test_pe_off_ignores_center_encoder(self, toy_config, toy_batch):
        """Test that center-encoder parameters are dead with PE off."""
        model = PointSequenceClassifier(replace(toy_config, use_positional_embedding=False))
        args = (toy_batch.centers, toy_batch.patches, toy_batch.serializations)
        with torch.no_grad():
            before = model(*args)
            for param in model.center_encoder.parameters():
                param.mul_(-3.0).add_(1.0)
            assert torch.equal(model(*args), before)

    def test_pe_on_uses_center_encoder(self, toy_config, toy_batch):
        """Test that center-encoder parameters matter with PE on."""
        model = PointSequenceClassifier(toy_config)
        args = (toy_batch.centers, toy_batch.patches, toy_batch.serializations)
        with torch.no_grad():
            before = model(*args)
            model.center_encoder.fc2.bias.add_(1.0)
            assert not torch.equal(model(*args), before)

    def test_axis_triple_triples_sequence(self, toy_config):
        """Test that axis-triple samples produce 3 n_c tokens."""
        config = replace(toy_config, ordering="axis-triple")
        batch = collate([prepare_sample(gen_shape("cube", config.n_points, seed=1), config, label=0)])
        model = PointSequenceClassifier(config)
        tokens = model.tokens(batch.centers, batch.patches, batch.serializations)
        assert tokens.shape[1] == 3 * config.n_c == config.sequence_length

    def test_attention_mixer(self, toy_config, toy_batch):
        """Test that the attention baseline builds and runs."""
        model = PointSequenceClassifier(replace(toy_config, mixer="attention"))
        assert isinstance(model.blocks[0], AttentionBlock)
        assert model(toy_batch.centers, toy_batch.patches, toy_batch.serializations).shape[0] == len(toy_batch)

    def test_overflow_reports_layer(self, toy_config, toy_batch):
        """Test that a non-finite activation names the failing layer."""
        model = PointSequenceClassifier(replace(toy_config, layers=2))
        with torch.no_grad():
            model.blocks[1].out_proj.weight.fill_(float("inf"))
        with pytest.raises(NumericalOverflowError, match="layer 1"):
            model(toy_batch.centers, toy_batch.patches, toy_batch.serializations)

    def test_golden_output_is_reproducible(self, toy_config, toy_batch):
        """Test that a fixed seed yields bit-identical logits across constructions."""
        outputs = []
        for _ in range(2):
            torch.manual_seed(42)
            model = PointSequenceClassifier(replace(toy_config, layers=2))
            with torch.no_grad():
                outputs.append(model(toy_batch.centers, toy_batch.patches, toy_batch.serializations))
        assert torch.equal(outputs[0], outputs[1])

    def test_parameter_count(self, toy_config):
        """Test that parameter_count sums every tensor."""
        model = PointSequenceClassifier(toy_config)
        assert parameter_count(model) == sum(p.numel() for p in model.parameters()) > 0


class TestCheckpoint:
    """Tests for JSON checkpoint persistence."""

    def test_round_trip_is_bit_exact(self, toy_config, tmp_path):
        """Test that save/load reproduces every parameter exactly."""
        model = PointSequenceClassifier(toy_config)
        path = tmp_path / "model.json"
        model.save(path)
        loaded = PointSequenceClassifier.load(path)
        assert loaded.config == toy_config
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, loaded.state_dict()[name]), name

    def test_format_fields(self, toy_config):
        """Test the checkpoint header."""
        data = json.loads(PointSequenceClassifier(toy_config).to_json())
        assert data["format"] == "pointseq-checkpoint"
        assert data["version"] == 1
        assert "blocks.0.s6.A_log" in data["parameters"]

    def test_wrong_format_rejected(self):
        """Test that foreign JSON is rejected with a parse error."""
        with pytest.raises(ParseError):
            PointSequenceClassifier.load_from_json(json.dumps({"format": "other", "version": 1}))

    def test_malformed_json_rejected(self):
        """Test that broken JSON reports a line number."""
        with pytest.raises(ParseError, match=":1:"):
            PointSequenceClassifier.load_from_json("{not json", source="bad.json")
