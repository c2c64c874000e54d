import numpy as np
import pytest

from bmistab.bench import vaf
from bmistab.errors import ShapeError
from bmistab.interface import (
    InterfaceParams,
    NeuralEmgInterface,
    TrainConfig,
    decode,
    encode,
    init_params,
    joint_loss,
    joint_value_and_grads,
    latent_normality_score,
    load_interface,
    next_lambda,
    predict_emg,
    save_interface,
    train_joint,
    vae_regularizer,
)
from bmistab.numerics import RngStream, flatten_params, grad_check, unflatten_params


def toy_params(n=6, l=3, m=2, hidden=(5, 4), seed=0, vae_weight=0.0):
    cfg = TrainConfig(
        epochs=1, n_latents=l, hidden=hidden, seed=seed, vae_weight=vae_weight
    )
    return init_params(n, m, cfg)


def zeroed(p: InterfaceParams) -> InterfaceParams:
    for key in p.weights:
        p.weights[key] = np.zeros_like(p.weights[key])
    return p


class TestForwardTrivials:
    def test_zero_weights_zero_latent(self):
        p = zeroed(toy_params())
        z = encode(p, np.ones((7, 6)))
        assert np.array_equal(z.z, np.zeros((7, 3)))

    def test_zero_weights_zero_reconstruction(self):
        p = zeroed(toy_params())
        x_hat = decode(p, np.zeros((4, 3)))
        assert np.array_equal(x_hat.rates, np.zeros((4, 6)))

    def test_zero_weights_constant_bias_emg(self):
        p = zeroed(toy_params())
        p.weights["lstm_bout"] = np.array([0.3, 0.8])
        out = predict_emg(p, np.ones((5, 3)))
        assert np.allclose(out.envelopes, np.tile([0.3, 0.8], (5, 1)))

    def test_linear_toy_scaling(self):
        # with identity-like linear layers, scaling the input scales the latent
        from bmistab import nets

        rng = RngStream(2)
        params = nets.mlp_init(rng, [4, 5, 3], "enc")
        x = rng.normal(0, 1, (6, 4))
        z1, _ = nets.mlp_forward(params, "enc", x, hidden_activation="linear")
        z2, _ = nets.mlp_forward(params, "enc", 2.5 * x, hidden_activation="linear")
        assert np.allclose(z2, 2.5 * z1, atol=1e-12)

    def test_hidden_activations_strictly_positive(self):
        from bmistab import nets

        p = toy_params(seed=4)
        xs = RngStream(1).normal(0, 1, (11, 6))
        _, cache = nets.mlp_forward(p.weights, "enc", xs)
        for u in cache["preacts"][:-1]:
            assert np.exp(np.minimum(u, nets.EXP_CLAMP)).min() > 0

    def test_causality(self):
        p = toy_params(seed=3)
        rng = RngStream(8)
        z = rng.normal(0, 1, (30, 3))
        base = predict_emg(p, z).envelopes
        for t in (5, 17, 29):
            z_pert = z.copy()
            z_pert[t] += 1.0
            pert = predict_emg(p, z_pert).envelopes
            assert np.array_equal(pert[:t], base[:t])
            assert not np.array_equal(pert[t:], base[t:])

    def test_shape_mismatch(self):
        p = toy_params()
        with pytest.raises(ShapeError):
            encode(p, np.ones((4, 5)))


class TestGoldenFixtures:
    """Regression pins recorded from a reference run at fixed seeds."""

    def test_encode_golden(self):
        p = toy_params(seed=123)
        x = RngStream(456).uniform(0, 10, (3, 6))
        z = encode(p, x).z
        expected = np.array(
            [
                [2.452534469157985, 1.325586471917272, -0.35387979932141767],
                [0.35336437068152515, 0.36639686898996204, 0.07137294975032515],
                [0.9577387137677559, 0.44883505239421684, -0.3506207621744754],
            ]
        )
        assert np.allclose(z, expected, atol=1e-12)

    def test_predict_golden(self):
        from bmistab.interface import predict_emg_raw

        p = toy_params(seed=123)
        z = RngStream(789).normal(0, 1, (3, 3))
        y = predict_emg_raw(p, z)
        expected = np.array(
            [
                [-0.1627980290177169, -0.1728899543251698],
                [-0.2626280746444206, -0.2734267080051807],
                [-0.11539653328465418, -0.12913679871809414],
            ]
        )
        assert np.allclose(y, expected, atol=1e-12)


class TestJointLoss:
    def test_perfect_prediction_zero(self):
        p = zeroed(toy_params())
        x = np.zeros((5, 6))
        y = np.zeros((5, 2))
        total, lx, ly, lam = joint_loss(p, x, y, lam=1.0)
        assert total == 0.0 and lx == 0.0 and ly == 0.0

    def test_lambda_update_rule(self):
        assert next_lambda(1.0, 2.0, 4.0) == pytest.approx(2.0)
        # degenerate reconstruction loss keeps the previous value
        assert next_lambda(0.7, 0.0, 4.0) == 0.7

    def test_lambda_identity_holds_each_boundary(self):
        lam = 1.0
        rng = RngStream(0)
        for _ in range(100):
            lx = float(rng.uniform(0.1, 5.0))
            ly = float(rng.uniform(0.1, 5.0))
            lam = next_lambda(lam, lx, ly)
            assert lam * lx == pytest.approx(ly, rel=5e-16)

    def test_gradients_match_finite_differences(self):
        p = toy_params(n=6, l=3, m=2, hidden=(5, 4), seed=9)
        rng = RngStream(10)
        x = rng.uniform(0, 8, (12, 6))
        y = rng.uniform(0, 1, (12, 2))
        p.rate_mean = x.mean(axis=0)
        p.rate_std = np.maximum(x.std(axis=0), 1e-3)
        vec, layout = flatten_params(p.weights)

        def loss(v):
            p.weights = unflatten_params(v, layout)
            total, _, _, grads = joint_value_and_grads(p, x, y, lam=0.7)
            g, _ = flatten_params(grads)
            return total, g

        report = grad_check(loss, vec, step=1e-5)
        assert report.max_rel_error <= 1e-4


class TestVaeRegularizer:
    def test_standard_normal_is_zero(self):
        assert vae_regularizer(np.zeros((4, 3)), np.zeros((4, 3))) == 0.0

    def test_unit_mean_shift_half(self):
        assert vae_regularizer(np.array([[1.0]]), np.array([[0.0]])) == pytest.approx(0.5)

    def test_gradients_match_finite_differences(self):
        p = toy_params(n=6, l=3, m=2, hidden=(5, 4), seed=11, vae_weight=0.5)
        rng = RngStream(12)
        x = rng.uniform(0, 8, (10, 6))
        y = rng.uniform(0, 1, (10, 2))
        eps = rng.normal(0, 1, (10, 3))
        p.rate_mean = x.mean(axis=0)
        p.rate_std = np.maximum(x.std(axis=0), 1e-3)
        vec, layout = flatten_params(p.weights)

        def loss(v):
            p.weights = unflatten_params(v, layout)
            total, _, _, grads = joint_value_and_grads(
                p, x, y, lam=0.5, vae_weight=0.5, vae_noise=eps
            )
            g, _ = flatten_params(grads)
            return total, g

        report = grad_check(loss, vec, step=1e-5)
        assert report.max_rel_error <= 1e-4


class TestTraining:
    def test_seed_determinism(self, day0_data):
        x, y, _ = day0_data
        cfg = TrainConfig(epochs=3, seed=5)
        p1, h1 = train_joint(x.rates[:400], y.envelopes[:400], cfg)
        p2, h2 = train_joint(x.rates[:400], y.envelopes[:400], cfg)
        assert p1.checksum() == p2.checksum()
        assert h1["lx"] == h2["lx"]

    def test_frozen_after_fit(self, trained_interface):
        p = trained_interface.params_
        assert p.frozen
        with pytest.raises(ValueError):
            p.weights["enc0_W"][0, 0] = 99.0

    def test_lambda_boundary_identity_in_history(self, trained_interface):
        h = trained_interface.history_
        for i in range(len(h["lx"]) - 1):
            if h["lx"][i] > 0:
                assert h["lam"][i + 1] * h["lx"][i] == pytest.approx(h["ly"][i], rel=5e-16)

    def test_loss_nonincreasing_smoothed(self, trained_interface):
        total = np.array(trained_interface.history_["epoch_total"])
        window = 5
        smooth = np.convolve(total, np.ones(window) / window, mode="valid")
        after = smooth[window:]
        drops = np.diff(after)
        assert np.all(drops <= np.abs(after[:-1]) * 0.01 + 1e-9)

    def test_heldout_vaf_gate(self, trained_interface, day0_heldout):
        x_test, y_test = day0_heldout
        report = vaf(y_test, trained_interface.predict(x_test))
        assert report.mean_vaf >= 85.0

    def test_reconstruction_beats_mean_predictor(self, trained_interface, day0_data):
        x, _, _ = day0_data
        p = trained_interface.params_
        xs = (x.rates - p.rate_mean) / p.rate_std
        xs_hat = (trained_interface.reconstruct(x.rates) - p.rate_mean) / p.rate_std
        mse = float(np.mean((xs_hat - xs) ** 2))
        variance = float(np.mean((xs - xs.mean(axis=0)) ** 2))
        assert mse < variance


class TestSequentialIsolation:
    def test_autoencoder_stage_takes_no_emg(self):
        import inspect

        from bmistab.interface import fit_autoencoder

        names = list(inspect.signature(fit_autoencoder).parameters)
        assert names == ["x", "cfg"]

    def test_sequential_determinism(self, day0_data):
        from bmistab.interface import train_sequential

        x, y, _ = day0_data
        cfg = TrainConfig(epochs=2, seed=1)
        p1, _ = train_sequential(x.rates[:400], y.envelopes[:400], cfg)
        p2, _ = train_sequential(x.rates[:400], y.envelopes[:400], cfg)
        assert p1.checksum() == p2.checksum()


def test_save_load_roundtrip(tmp_path, trained_interface):
    p = trained_interface.params_
    save_interface(p, tmp_path / "iface")
    back = load_interface(tmp_path / "iface")
    assert back.checksum() == p.checksum()
    assert back.frozen
    x = RngStream(3).uniform(0, 30, (20, p.n_channels))
    assert np.array_equal(encode(back, x).z, encode(p, x).z)


def test_normality_score_orders_gaussian_first():
    rng = RngStream(14)
    gaussian = rng.normal(0, 1, (4000, 3))
    heavy = rng.normal(0, 1, (4000, 3)) ** 3
    assert latent_normality_score(gaussian) < latent_normality_score(heavy)
