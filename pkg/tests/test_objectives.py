import numpy as np
import pytest
import torch

from freqad.objectives import (
    DegenerateScoresError,
    LossWeights,
    ScoreRecord,
    anomaly_score,
    content_loss,
    discriminator_loss,
    generator_adv_loss,
    latent_loss,
    normalize_scores,
    read_score_csv,
    total_generator_loss,
    write_score_csv,
)


class TestContentLoss:
    def test_identical_is_zero(self):
        x = torch.randn(2, 3, 8, 8)
        assert content_loss(x, x).item() == 0.0

    def test_zeros_vs_ones(self):
        a = torch.zeros(1, 3, 4, 4)
        b = torch.ones(1, 3, 4, 4)
        assert content_loss(a, b).item() == pytest.approx(1.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((2, 1, 3, 3))
        b = rng.standard_normal((2, 1, 3, 3))
        got = content_loss(torch.tensor(a), torch.tensor(b)).item()
        total = 0.0
        for idx in np.ndindex(a.shape):
            total += abs(a[idx] - b[idx])
        assert got == pytest.approx(total / a.size, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            content_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 8, 8))


class TestLatentLoss:
    def test_identical_is_zero(self):
        x = torch.randn(2, 8, 2, 2)
        assert latent_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        x = torch.zeros(1, 4, 2, 2)
        assert latent_loss(x, x + 2.0).item() == pytest.approx(4.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((1, 4, 2, 2))
        b = rng.standard_normal((1, 4, 2, 2))
        got = latent_loss(torch.tensor(a), torch.tensor(b)).item()
        total = sum((a[idx] - b[idx]) ** 2 for idx in np.ndindex(a.shape))
        assert got == pytest.approx(total / a.size, abs=1e-6)


class TestAdversarialLosses:
    def test_all_zero(self):
        z = torch.zeros(4)
        assert discriminator_loss(z, z, z).item() == 0.0

    def test_linear_form(self):
        one, zero = torch.ones(1), torch.zeros(1)
        assert discriminator_loss(one, zero, zero).item() == pytest.approx(1.0)
        assert discriminator_loss(zero, one, one).item() == pytest.approx(-2.0)

    def test_mixed_batch_matches_mean_arithmetic(self):
        rng = np.random.default_rng(2)
        r, g, f = (torch.tensor(rng.standard_normal(6)) for _ in range(3))
        got = discriminator_loss(r, g, f).item()
        expect = r.numpy().mean() - g.numpy().mean() - f.numpy().mean()
        assert got == pytest.approx(expect, abs=1e-9)

    def test_forged_term_optional(self):
        r, g = torch.ones(2), torch.zeros(2)
        assert discriminator_loss(r, g).item() == pytest.approx(1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            discriminator_loss(torch.tensor([float("inf")]), torch.zeros(1))

    def test_generator_adv_loss_mean(self):
        assert generator_adv_loss(torch.zeros(3)).item() == 0.0
        assert generator_adv_loss(torch.tensor([1.0, 3.0])).item() == pytest.approx(2.0)

    def test_generator_step_reduces_critic_score(self):
        # 1-parameter toy generator against a frozen linear critic
        theta = torch.tensor([0.5], requires_grad=True)
        critic = lambda x: 3.0 * x  # frozen D with positive slope
        opt = torch.optim.SGD([theta], lr=0.1)
        before = critic(theta).mean().item()
        loss = generator_adv_loss(critic(theta))
        opt.zero_grad()
        loss.backward()
        opt.step()
        assert critic(theta).mean().item() < before


class TestTotalLoss:
    def test_all_zero(self):
        w = LossWeights()
        assert total_generator_loss(0.0, 0.0, 0.0, w) == 0.0

    def test_default_weights(self):
        w = LossWeights(50.0, 1.0, 1.0)
        assert total_generator_loss(1.0, 1.0, 1.0, w) == pytest.approx(52.0)

    def test_content_only(self):
        w = LossWeights(1.0, 0.0, 0.0)
        assert total_generator_loss(0.7, 123.0, -5.0, w) == pytest.approx(0.7)

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0, 0.0)


class TestAnomalyScore:
    def test_convexity_fixed_point(self):
        for lam in (0.0, 0.3, 0.9, 1.0):
            assert anomaly_score(0.7, 0.7, lam) == pytest.approx(0.7)

    def test_paper_weighting(self):
        assert anomaly_score(1.0, 0.0, 0.9) == pytest.approx(0.9)

    def test_monotone(self):
        base = anomaly_score(0.5, 0.5, 0.6)
        assert anomaly_score(0.6, 0.5, 0.6) >= base
        assert anomaly_score(0.5, 0.6, 0.6) >= base

    def test_endpoints(self):
        assert anomaly_score(0.3, 0.8, 1.0) == pytest.approx(0.3)
        assert anomaly_score(0.3, 0.8, 0.0) == pytest.approx(0.8)

    def test_lambda_out_of_range(self):
        with pytest.raises(ValueError):
            anomaly_score(1.0, 1.0, 1.5)


class TestNormalizeScores:
    def test_basic(self):
        np.testing.assert_allclose(normalize_scores([2, 4, 6]), [0.0, 0.5, 1.0])

    def test_extremes_map_to_unit_interval(self):
        rng = np.random.default_rng(3)
        s = rng.standard_normal(20)
        out = normalize_scores(s)
        assert out[np.argmin(s)] == 0.0
        assert out[np.argmax(s)] == 1.0

    def test_order_preserving(self):
        rng = np.random.default_rng(4)
        s = rng.standard_normal(30)
        out = normalize_scores(s)
        np.testing.assert_array_equal(np.argsort(s), np.argsort(out))

    def test_affine_invariance(self):
        rng = np.random.default_rng(5)
        s = rng.standard_normal(25)
        np.testing.assert_allclose(
            normalize_scores(3.7 * s + 11.0), normalize_scores(s), atol=1e-12
        )

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateScoresError):
            normalize_scores([1.0, 1.0, 1.0])


class TestTotalLossGradient:
    def test_matches_finite_differences_on_tiny_model(self):
        # full loss graph (content + adversarial + latent) through a tiny
        # generator/discriminator pair, float64, against central differences
        from freqad.networks import BranchedGenerator, Discriminator
        from freqad.objectives import (
            content_loss as c_loss,
            generator_adv_loss as g_loss,
            latent_loss as l_loss,
        )

        torch.manual_seed(0)
        gen = BranchedGenerator(n_branches=2, base_channels=1).double()
        disc = Discriminator(base_channels=1).double()
        disc.eval()  # freeze spectral-norm power iteration
        rng = np.random.default_rng(0)
        img = torch.tensor(rng.uniform(-1, 1, (2, 3, 32, 32)))
        bands = [img * 0.5, img * 0.5]
        weights = LossWeights(50.0, 1.0, 1.0)

        def loss_value():
            _, recon = gen(bands)
            score, lat_recon = disc(recon)
            with torch.no_grad():
                _, lat_real = disc(img)
            return total_generator_loss(
                c_loss(img, recon), g_loss(score), l_loss(lat_real, lat_recon),
                weights,
            )

        loss_value().backward()
        params = [p for p in gen.parameters() if p.grad is not None]
        h = 1e-5
        checked = 0
        for p in params[::3]:
            flat = p.data.view(-1)
            grad = p.grad.view(-1)
            idx = rng.choice(flat.numel(), size=min(2, flat.numel()), replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_value().item()
                flat[i] = orig - h
                down = loss_value().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                an = grad[i].item()
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                assert rel < 1e-3, (fd, an, rel)
                checked += 1
        assert checked >= 10


class TestScoreCsv:
    def test_round_trip(self, tmp_path):
        records = [
            ScoreRecord("a", 0.1, 0.2, 0.11, 0.0, "normal"),
            ScoreRecord("b", 0.4, 0.8, 0.44, 1.0, "abnormal"),
        ]
        path = tmp_path / "scores.csv"
        write_score_csv(path, records)
        back = read_score_csv(path)
        assert [r.sample_id for r in back] == ["a", "b"]
        assert back[1].label == "abnormal"
        assert back[0].raw_score == pytest.approx(0.11)
