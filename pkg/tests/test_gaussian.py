import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradml import gaussian as g
from gradml.gaussian import DomainError, GaussianModelParams
from gradml.joint import ShotData

H = math.pi / 2


def integrate_square(theta, sigma, order=12):
    """Integral of the density over the s-square in rotated coordinates.

    u = s1 - s2, v = s1 + s2 turns the square into |u| + |v| <= pi; panels
    are refined geometrically toward every density ridge.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    offs = sigma * np.array([0.0, 0.5, 1, 2, 3, 5, 8, 12, 20, 40])

    def breaks(lo, hi, ridges):
        pts = {lo, hi}
        for r in ridges:
            for o in offs:
                pts.update((r - o, r + o))
        pts = np.array(sorted(p for p in pts if lo <= p <= hi))
        pts = pts[np.concatenate([[True], np.diff(pts) > 1e-14])]
        # cap panel width so smooth stretches are still resolved
        out = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            k = max(1, int(math.ceil((b - a) / 0.05)))
            out.extend(np.linspace(a, b, k + 1)[1:])
        return np.array(out)

    def nodes(br):
        a, b = br[:-1, None], br[1:, None]
        return (a + (b - a) * (x + 1) / 2).ravel(), ((b - a) / 2 * w).ravel()

    us, uw = nodes(breaks(-math.pi, math.pi, (-theta, theta, 0.0)))
    total = 0.0
    for u, wu in zip(us, uw):
        half = math.pi - abs(u)
        vs, vw = nodes(breaks(-half, half, (-(math.pi - theta), math.pi - theta)))
        s1, s2 = 0.5 * (u + vs), 0.5 * (vs - u)
        s1 = np.clip(s1, -H, H)
        s2 = np.clip(s2, -H, H)
        total += wu * (vw @ np.exp(g.log_ps_density(s1, s2, theta, sigma)))
    return 0.5 * total


class TestWrappedGaussian:
    def test_peak(self):
        assert g.wrapped_gaussian_pdf(0.0, 0.1) == pytest.approx(1 / (0.1 * math.sqrt(2 * math.pi)), rel=1e-14)
        assert g.wrapped_gaussian_pdf(0.0, 0.1) == pytest.approx(3.98942, abs=1e-5)

    @pytest.mark.parametrize("sigma", [0.05, 0.5, 2.0])
    def test_normalized(self, sigma):
        x, w = np.polynomial.legendre.leggauss(400)
        chi = math.pi * x
        assert math.pi * (w @ g.wrapped_gaussian_pdf(chi, sigma)) == pytest.approx(1.0, abs=1e-10)

    def test_long_sum(self):
        k = np.arange(-50, 51)
        ref = np.exp(-0.5 * ((math.pi + 2 * math.pi * k) / 2.0) ** 2).sum() / (2.0 * math.sqrt(2 * math.pi))
        assert g.wrapped_gaussian_pdf(math.pi, 2.0) == pytest.approx(ref, abs=1e-13)

    @given(st.floats(-20, 20), st.floats(0.01, 5))
    def test_periodic(self, chi, sigma):
        a = g.wrapped_gaussian_pdf(chi, sigma)
        b = g.wrapped_gaussian_pdf(chi + 2 * math.pi, sigma)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-300)

    def test_rejects_sigma(self):
        with pytest.raises(DomainError):
            g.wrapped_gaussian_pdf(0.0, 0.0)


class TestDensity:
    @pytest.mark.parametrize("theta,sigma", [(0.3 * math.pi, 0.05), (0.9 * math.pi, 0.3)])
    def test_normalized(self, theta, sigma):
        assert integrate_square(theta, sigma) == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("theta,sigma", [(0.0, 1e-3), (0.5 * math.pi, 1e-3), (math.pi, 0.01), (1.0, 5.0), (2.0, 0.7)])
    def test_normalized_range(self, theta, sigma):
        assert integrate_square(theta, sigma) == pytest.approx(1.0, abs=1e-8)

    def test_four_branch_formula(self):
        rng = np.random.default_rng(0)
        s1, s2 = rng.uniform(-H, H, (2, 50))
        th, sg = 1.1, 0.3
        p = g.wrapped_gaussian_pdf
        ref = (p(th - s1 + s2, sg) + p(th + math.pi - s1 - s2, sg) + p(th - math.pi + s1 + s2, sg) + p(th + s1 - s2, sg)) / (2 * math.pi)
        np.testing.assert_allclose(g.ps_density(s1, s2, GaussianModelParams(th, sg)), ref, rtol=1e-12)

    @settings(max_examples=50)
    @given(st.floats(-H, H), st.floats(-H, H), st.floats(0, math.pi), st.floats(0.005, 5))
    def test_symmetries(self, s1, s2, theta, sigma):
        ref = g.log_ps_density(s1, s2, theta, sigma)
        assert math.isfinite(ref)
        assert g.log_ps_density(s1, s2, -theta, sigma) == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert g.log_ps_density(-s1, -s2, theta, sigma) == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert g.log_ps_density(s2, s1, theta, sigma) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_corner_twice_arm(self):
        th, sg = 0.3 * math.pi, 0.02
        a = g.rectangle_edges(th)["A"]
        corner = g.log_ps_density(*a, th, sg)
        arm = g.log_ps_density(th / 2, -th / 2, th, sg)
        assert 1.8 <= math.exp(corner - arm) <= 2.2

    def test_no_underflow(self):
        # far from every ridge the density is tiny but its log stays finite
        v = g.log_ps_density(0.0, 0.0, 0.5 * math.pi, 1e-3)
        assert math.isfinite(v) and v < -1e5

    def test_concentration(self):
        th, sg = 0.4 * math.pi, 1e-3
        s1, s2 = g.sample_model(th, sg, 200_000, np.random.default_rng(1))
        d = s1 - s2
        t = s1 + s2
        dist = np.min(
            np.abs(np.stack([d - th, d + th, t - (math.pi - th), t + (math.pi - th)])), axis=0
        ) / math.sqrt(2)
        assert np.mean(dist <= 3 * sg) >= 0.997

    def test_sampler_matches_density(self):
        th, sg = 0.7, 0.25
        s1, s2 = g.sample_model(th, sg, 400_000, np.random.default_rng(2))
        edges = np.linspace(-H, H, 9)
        counts, _, _ = np.histogram2d(s1, s2, bins=[edges, edges])
        x, w = np.polynomial.legendre.leggauss(20)
        for i in (1, 3, 6):
            for j in (0, 2, 5):
                a, b = edges[i], edges[i + 1]
                c, d = edges[j], edges[j + 1]
                xs = a + (b - a) * (x + 1) / 2
                ys = c + (d - c) * (x + 1) / 2
                dens = np.exp(g.log_ps_density(xs[:, None], ys[None, :], th, sg))
                mass = (b - a) * (d - c) / 4 * w @ dens @ w
                se = math.sqrt(mass * (1 - mass) / len(s1))
                assert abs(counts[i, j] / len(s1) - mass) < 5 * se

    def test_pz_jacobian(self):
        prm = GaussianModelParams(1.0, 0.2)
        z1, z2 = np.array([0.3, -0.8]), np.array([0.1, 0.95])
        ref = g.ps_density(np.arcsin(z1), np.arcsin(z2), prm) / np.sqrt((1 - z1**2) * (1 - z2**2))
        np.testing.assert_allclose(g.pz_density(z1, z2, prm), ref, rtol=1e-14)
        with pytest.raises(DomainError):
            g.pz_density(1.0, 0.0, prm)

    def test_domain(self):
        with pytest.raises(DomainError):
            g.log_ps_density(2.0, 0.0, 1.0, 0.1)
        with pytest.raises(DomainError):
            GaussianModelParams(1.0, 0.0)
        with pytest.raises(DomainError):
            GaussianModelParams(4.0, 0.1)


class TestLikelihood:
    def test_uniform_limit(self):
        prm = GaussianModelParams(1.0, 50.0)
        for s in [(0.0, 0.0), (1.2, -0.4), (-H, H)]:
            assert g.ps_density(*s, prm) == pytest.approx(1 / math.pi**2, rel=0.01)

    def test_duplicated(self):
        d = ShotData(np.array([0.2, -0.7, 0.9]), np.array([0.5, 0.1, -0.3]))
        prm = GaussianModelParams(0.3 * math.pi, 0.1)
        assert g.log_likelihood(d.repeated(2), prm) == 2 * g.log_likelihood(d, prm)

    def test_hand_dataset(self):
        d = ShotData(np.array([0.2, -0.7, 0.9]), np.array([0.5, 0.1, -0.3]))
        prm = GaussianModelParams(0.3 * math.pi, 0.1)
        ref = sum(math.log(g.ps_density(a, b, prm)) for a, b in zip(d.s1, d.s2))
        assert g.log_likelihood(d, prm) == pytest.approx(ref, abs=1e-12)

    @settings(max_examples=40)
    @given(st.integers(0, 10_000), st.floats(0.3, 2.8), st.floats(0.02, 2.0))
    def test_gradient_fd(self, seed, theta, sigma):
        rng = np.random.default_rng(seed)
        s1, s2 = g.sample_model(theta, sigma, 30, rng)
        th, sg = theta + 0.05, sigma * 1.1
        grad = g.grad_loglik(s1, s2, th, sg)
        h = 1e-6
        fd = np.array([
            (g.loglik(s1, s2, th + h, sg) - g.loglik(s1, s2, th - h, sg)) / (2 * h),
            (g.loglik(s1, s2, th, sg + h) - g.loglik(s1, s2, th, sg - h)) / (2 * h),
        ])
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.all(np.abs(grad - fd) / scale < 1e-5)

    def test_hessian_fd(self):
        rng = np.random.default_rng(3)
        s1, s2 = g.sample_model(1.0, 0.2, 40, rng)
        hs = g.hess_loglik(s1, s2, 1.05, 0.22)
        h = 1e-6
        col_t = (g.grad_loglik(s1, s2, 1.05 + h, 0.22) - g.grad_loglik(s1, s2, 1.05 - h, 0.22)) / (2 * h)
        col_s = (g.grad_loglik(s1, s2, 1.05, 0.22 + h) - g.grad_loglik(s1, s2, 1.05, 0.22 - h)) / (2 * h)
        np.testing.assert_allclose(hs, np.column_stack([col_t, col_s]), rtol=1e-5, atol=1e-4)

    def test_mirror_symmetric_data_stationary(self):
        # adding the mirror images (s1, -s2) makes the likelihood even about pi/2
        rng = np.random.default_rng(4)
        s1, s2 = g.sample_model(1.2, 0.15, 60, rng)
        a = np.concatenate([s1, s1])
        b = np.concatenate([s2, -s2])
        assert abs(g.grad_loglik(a, b, 0.5 * math.pi, 0.2)[0]) < 1e-8

    def test_exchange_symmetric_data(self):
        rng = np.random.default_rng(5)
        s1, s2 = g.sample_model(0.9, 0.15, 60, rng)
        a = np.concatenate([s1, s2])
        b = np.concatenate([s2, s1])
        assert g.loglik(a, b, 0.9, 0.15) == pytest.approx(2 * g.loglik(s1, s2, 0.9, 0.15), rel=1e-13)

    def test_wrapper_matches(self):
        d = ShotData(np.array([0.2, -0.7]), np.array([0.5, 0.1]))
        prm = GaussianModelParams(1.0, 0.3)
        np.testing.assert_array_equal(g.grad_log_likelihood(d, prm), g.grad_loglik(d.s1, d.s2, 1.0, 0.3))


class TestRectangle:
    def test_edges(self):
        e = g.rectangle_edges(0.3 * math.pi)
        assert e["A"] == pytest.approx((-0.2 * math.pi, -0.5 * math.pi))
        assert e["B"] == pytest.approx((-H, -H + 0.3 * math.pi))
        assert e["C"] == pytest.approx((H - 0.3 * math.pi, H))
        assert e["D"] == pytest.approx((H, H - 0.3 * math.pi))

    def test_degenerate(self):
        e = g.rectangle_edges(0.0)
        assert e["A"] == e["B"] and e["C"] == e["D"]
        e = g.rectangle_edges(math.pi)
        assert e["A"] == pytest.approx(e["D"]) and e["B"] == pytest.approx(e["C"])
