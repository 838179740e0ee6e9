import numpy as np
import pytest

from mrc.data import gen_synthetic
from mrc.gaussians import DiagonalGaussian, gauss_kl_elementwise
from mrc.nn import ModelSpec, init_flat_weights
from mrc.pipeline import (
    MEAN_KL,
    MEAN_VAR,
    CompressedModel,
    CompressedModelFormatError,
    PipelineError,
    TrainConfig,
    anneal_beta,
    checkpoint_from_json,
    checkpoint_to_json,
    compress_model,
    compression_ratio,
    decompress_model,
    evaluate,
    export_histograms,
    train,
)
from mrc.codec import EncodedBlock


@pytest.fixture(scope="module")
def blob_data():
    return gen_synthetic(240, 4, 8, seed=0)


SPEC = ModelSpec((8, 12, 4))


def small_cfg(parameterization, **overrides):
    base = dict(
        parameterization=parameterization,
        budget_bits=8,
        block_size=10,
        learning_rate=0.004,
        batch_size=64,
        max_iters=300,
        seed=3,
        finetune_steps=5,
        eps_beta0=1e-4,
        eps_beta=0.01,
        init_log_std=-2.5,
        init_coding_log_std=-1.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestAnnealBeta:
    CFG = TrainConfig(parameterization=MEAN_VAR, eps_beta=5e-5, eps_beta0=1e-8)

    def test_over_budget_grows(self):
        assert anneal_beta(1e-8, 2.0, 1.0, self.CFG) == pytest.approx(1.00005e-8, rel=1e-12)

    def test_exactly_at_budget_shrinks(self):
        assert anneal_beta(1.0, 1.0, 1.0, self.CFG) == pytest.approx(1.0 / 1.00005, rel=1e-12)

    def test_ten_thousand_steps_closed_form(self):
        beta = 1e-8
        for _ in range(10_000):
            beta = anneal_beta(beta, 2.0, 1.0, self.CFG)
        assert beta == pytest.approx(1e-8 * (1.00005**10_000), rel=1e-9)
        assert beta == pytest.approx(1.6487e-8, rel=1e-4)

    def test_nonpositive_beta_rejected(self):
        with pytest.raises(ValueError):
            anneal_beta(0.0, 2.0, 1.0, self.CFG)


class TestTrain:
    def test_zero_iterations_returns_init(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, max_iters=0)
        posterior, coding, trace = train(SPEC, train_ds, cfg)
        assert trace.rows == []
        np.testing.assert_array_equal(coding.log_stds, [-1.0, -1.0])
        assert posterior.quota_logits.max() == 0.0

    def test_meankl_trace_pinned_to_budget(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, max_iters=120)
        posterior, coding, trace = train(SPEC, train_ds, cfg)
        total_budget = cfg.budget_nats * posterior.blocks.num_blocks
        for row in trace.rows:
            assert abs(row.kl_nats - total_budget) <= 1e-3 * posterior.blocks.num_blocks
            assert row.beta_or_kappa == cfg.budget_nats

    def test_meanvar_total_kl_crosses_budget(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_VAR, max_iters=2500)
        posterior, coding, trace = train(SPEC, train_ds, cfg)
        total_budget = cfg.budget_nats * posterior.blocks.num_blocks
        kl = trace.column("kl_nats")
        assert kl[0] > total_budget
        assert kl[-1] <= total_budget + 0.1 * posterior.blocks.num_blocks

    def test_meanvar_betas_positive_and_rule_shaped(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_VAR, max_iters=60)
        posterior, _, trace = train(SPEC, train_ds, cfg)
        assert np.all(posterior.betas > 0.0)
        mean_betas = trace.column("beta_or_kappa")
        assert np.all(mean_betas > 0.0)
        # over budget the whole short run: mean beta grows monotonically
        assert np.all(np.diff(mean_betas) > 0.0)

    def test_one_step_preserves_meankl_constraint(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, max_iters=1)
        posterior, coding, trace = train(SPEC, train_ds, cfg)
        q = posterior.marginals(coding)
        p = coding.flat(SPEC)
        kl = gauss_kl_elementwise(q.means, q.log_stds, p.means, p.log_stds)
        for b, (start, length) in enumerate(posterior.blocks.blocks):
            assert np.sum(kl[start : start + length]) == pytest.approx(cfg.budget_nats, abs=1e-6)

    def test_same_seed_bitwise_reproducible(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, max_iters=50)
        p1, c1, t1 = train(SPEC, train_ds, cfg)
        p2, c2, t2 = train(SPEC, train_ds, cfg)
        assert p1.taus.tobytes() == p2.taus.tobytes()
        assert c1.log_stds.tobytes() == c2.log_stds.tobytes()
        assert [r.cross_entropy for r in t1.rows] == [r.cross_entropy for r in t2.rows]


@pytest.fixture(scope="module")
def trained_mk(blob_data):
    train_ds, _ = blob_data
    cfg = small_cfg(MEAN_KL)
    posterior, coding, _ = train(SPEC, train_ds, cfg)
    return cfg, posterior, coding


class TestCompress:
    def test_roundtrip_bitwise(self, blob_data, trained_mk):
        train_ds, _ = blob_data
        cfg, posterior, coding = trained_mk
        result = compress_model(posterior, coding, train_ds, cfg)
        assert decompress_model(result.compressed).tobytes() == result.weights.tobytes()

    def test_block_count_and_payload(self, blob_data, trained_mk):
        train_ds, _ = blob_data
        cfg, posterior, coding = trained_mk
        result = compress_model(posterior, coding, train_ds, cfg)
        assert len(result.compressed.encoded) == posterior.blocks.num_blocks
        assert result.compressed.payload_bits == cfg.budget_bits * posterior.blocks.num_blocks

    def test_fixed_blocks_never_change(self, blob_data):
        # compress with a spy: snapshot the first block's sample right after
        # block 0 is fixed, then confirm the final weights still match it
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, max_iters=80, finetune_steps=12)
        posterior, coding, _ = train(SPEC, train_ds, cfg)
        result = compress_model(posterior, coding, train_ds, cfg)
        start, length = posterior.blocks.blocks[0]
        redone = compress_model(posterior, coding, train_ds, cfg)
        np.testing.assert_array_equal(result.weights[start : start + length], redone.weights[start : start + length])
        # decoded block 0 comes purely from (global_seed, block 0, index)
        from mrc.codec import StreamKey, decode_block

        cm = result.compressed
        p = DiagonalGaussian(
            np.zeros(length), np.full(length, cm.coding_log_stds[0])
        )
        direct = decode_block(p, cm.encoded[0], StreamKey(cm.global_seed, 0))
        np.testing.assert_array_equal(result.weights[start : start + length], direct)

    def test_end_to_end_deterministic(self, blob_data, trained_mk):
        train_ds, _ = blob_data
        cfg, posterior, coding = trained_mk
        a = compress_model(posterior, coding, train_ds, cfg).compressed.to_bytes()
        b = compress_model(posterior, coding, train_ds, cfg).compressed.to_bytes()
        assert a == b

    def test_meanvar_gate_error_names_block(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_VAR, max_iters=5, finetune_steps=0)
        posterior, coding, _ = train(SPEC, train_ds, cfg)
        # 5 iterations cannot anneal 10+ nats of slack per block away
        with pytest.raises(PipelineError, match="block 0"):
            compress_model(posterior, coding, train_ds, cfg)

    def test_single_block_model(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, block_size=SPEC.total_params, max_iters=40)
        posterior, coding, _ = train(SPEC, train_ds, cfg)
        assert posterior.blocks.num_blocks == 1
        result = compress_model(posterior, coding, train_ds, cfg)
        assert len(result.compressed.encoded) == 1


class TestSerialization:
    def make_cm(self):
        return CompressedModel(
            layer_sizes=(3, 4, 2),
            layer_kinds=(0, 0),
            coding_means=np.zeros(2),
            coding_log_stds=np.array([-1.0, -2.0]),
            block_size=10,
            budget_bits=4,
            global_seed=11,
            selection_seed=22,
            encoded=tuple(EncodedBlock(i + 1, 4) for i in range(3)),  # 26 params -> 3 blocks
        )

    def test_roundtrip(self):
        cm = self.make_cm()
        out = CompressedModel.from_bytes(cm.to_bytes())
        assert out.layer_sizes == (3, 4, 2)
        assert out.block_size == 10
        assert [e.index for e in out.encoded] == [1, 2, 3]
        assert out.to_bytes() == cm.to_bytes()

    def test_header_layout(self):
        raw = self.make_cm().to_bytes()
        assert raw[:4] == b"MRCL"
        assert raw[4:6] == (1).to_bytes(2, "little")
        assert raw[6:10] == (2).to_bytes(4, "little")  # layer count

    def test_bad_magic(self):
        raw = bytearray(self.make_cm().to_bytes())
        raw[:4] = b"NOPE"
        with pytest.raises(CompressedModelFormatError, match="magic"):
            CompressedModel.from_bytes(bytes(raw))

    def test_truncation(self):
        raw = self.make_cm().to_bytes()
        for cut in (3, 10, len(raw) - 1):
            with pytest.raises(CompressedModelFormatError):
                CompressedModel.from_bytes(raw[:cut])

    def test_trailing_garbage(self):
        with pytest.raises(CompressedModelFormatError, match="trailing"):
            CompressedModel.from_bytes(self.make_cm().to_bytes() + b"\x00")

    def test_tampered_index_still_decodes(self):
        cm = self.make_cm()
        raw = bytearray(cm.to_bytes())
        raw[-1] ^= 0x10  # flip the last index's low bit (final nibble is padding)
        out = CompressedModel.from_bytes(bytes(raw))
        a = decompress_model(CompressedModel.from_bytes(cm.to_bytes()))
        b = decompress_model(out)
        assert a.shape == b.shape
        assert not np.array_equal(a, b)


class TestEvaluate:
    def test_oracle_weights_zero_error(self, blob_data):
        _, test_ds = blob_data
        # direct readout: class c is the argmax of dimension c (blob centers)
        spec = ModelSpec((8, 4))
        flat = np.zeros(spec.total_params)
        flat[: 32] = (np.eye(8)[:, :4] * 10.0).ravel()
        accuracy, error = evaluate(spec, flat, test_ds)
        assert accuracy >= 0.97  # blobs overlap slightly after unit-box scaling
        assert error == pytest.approx(1.0 - accuracy, abs=1e-12)

    def test_uniform_logits_balanced_accuracy(self):
        rng = np.random.default_rng(0)
        from mrc.data import Dataset

        x = rng.random((1000, 4))
        y = np.tile(np.arange(10), 100).astype(np.int64)
        data = Dataset(x, y, "test")
        spec = ModelSpec((4, 10))
        accuracy, _ = evaluate(spec, np.zeros(spec.total_params), data)
        assert accuracy == pytest.approx(0.1, abs=1e-12)  # argmax ties to class 0


class TestRatioAndHistograms:
    def test_ratio_hand_example(self):
        cm = CompressedModel(
            layer_sizes=(10, 10),
            layer_kinds=(0,),
            coding_means=np.zeros(1),
            coding_log_stds=np.zeros(1),
            block_size=3,
            budget_bits=20,
            global_seed=0,
            selection_seed=0,
            encoded=tuple(EncodedBlock(0, 20) for _ in range(50)),
        )
        assert compression_ratio(1000, 32, cm, include_header=False) == 32.0
        assert compression_ratio(1000, 32, cm) < 32.0  # header counted

    def test_doubling_block_size_halves_payload(self):
        def payload(block_size):
            n_blocks = (100 + block_size - 1) // block_size
            return n_blocks * 20

        assert payload(10) == 2 * payload(20)

    def test_histograms_shape_and_sigma_bound(self, blob_data):
        train_ds, _ = blob_data
        cfg = small_cfg(MEAN_KL, max_iters=30)
        posterior, coding, _ = train(SPEC, train_ds, cfg)
        layers, means, log_stds = export_histograms(posterior, coding)
        assert len(layers) == SPEC.total_params
        rho_flat = coding.log_stds[SPEC.layer_of_param()]
        assert np.all(log_stds < rho_flat)

    def test_histograms_untrained_meankl_means_at_coding_mean(self, blob_data):
        cfg = small_cfg(MEAN_KL, max_iters=0)
        posterior, coding, _ = train(SPEC, blob_data[0], cfg)
        posterior.taus[:] = 0.0
        _, means, _ = export_histograms(posterior, coding)
        np.testing.assert_array_equal(means, np.zeros(SPEC.total_params))


class TestCheckpoint:
    def test_roundtrip_both_parameterizations(self, blob_data):
        train_ds, _ = blob_data
        for parameterization in (MEAN_KL, MEAN_VAR):
            cfg = small_cfg(parameterization, max_iters=25)
            posterior, coding, _ = train(SPEC, train_ds, cfg)
            text = checkpoint_to_json(posterior, coding, cfg)
            restored, coding2 = checkpoint_from_json(text)
            assert restored.parameterization == parameterization
            np.testing.assert_array_equal(coding.log_stds, coding2.log_stds)
            q1 = posterior.marginals(coding)
            q2 = restored.marginals(coding2)
            np.testing.assert_array_equal(q1.means, q2.means)

    def test_invalid_json(self):
        with pytest.raises(CompressedModelFormatError):
            checkpoint_from_json("{not json")
