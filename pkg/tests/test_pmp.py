import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_input_design.bayes import GaussianBelief
from bayes_input_design.errors import SingularGram
from bayes_input_design.objective import atomize_prior, gradient, make_context
from bayes_input_design.pmp import (classify_arcs, gram_matrices, integrate_covector, interval_switching,
                                    legendre_clebsch_check, sign_consistency, singular_feedback, singular_residual,
                                    switching_functions)
from bayes_input_design.sysmodel import LinearParamSystem, discretize, simulate_trajectory

from conftest import oscillator, random_control, random_instance, scalar_system


class TestCovector:
    def test_zero_control(self, rng):
        sys, prior = random_instance(rng)
        d = discretize(sys, 10)
        for w in (prior.mean, prior):
            cov = integrate_covector(sys, d, w, np.zeros((10, sys.m)), 1.0)
            assert np.all(cov.P == 0) and np.all(cov.pB == 0)

    def test_scalar_closed_form(self):
        # A = 0, x(t) = t on [0, 1], alpha = 1: p(t) = t^2 - 1
        s = scalar_system(T=1.0)
        d = discretize(s, 20)
        cov = integrate_covector(s, d, np.zeros(1), np.ones((20, 1)), 1.0)
        assert np.allclose(cov.x[:, 0], d.nodes, atol=1e-14)
        assert np.allclose(cov.p[:, 0], d.nodes ** 2 - 1, atol=1e-13)
        # interval integral of t^2 - 1
        t0, t1 = d.nodes[:-1], d.nodes[1:]
        assert np.allclose(cov.pB_int[:, 0], (t1 ** 3 - t0 ** 3) / 3 - (t1 - t0), atol=1e-14)

    def test_terminal_condition(self, rng):
        sys, prior = random_instance(rng)
        d = discretize(sys, 10)
        cov = integrate_covector(sys, d, prior, random_control(rng, 10, sys.m), 1.3)
        assert np.all(cov.P[-1] == 0)

    def test_states_match_simulation(self, rng):
        sys, prior = random_instance(rng)
        d = discretize(sys, 10)
        u = random_control(rng, 10, sys.m)
        theta = rng.standard_normal(sys.p)
        cov = integrate_covector(sys, d, theta, u, 1.0)
        assert np.allclose(cov.x, simulate_trajectory(sys, d, theta, u), atol=1e-14)

    def test_ensemble_has_no_single_path(self, rng):
        sys, prior = random_instance(rng)
        d = discretize(sys, 6)
        cov = integrate_covector(sys, d, prior, random_control(rng, 6, sys.m), 1.0)
        with pytest.raises(ValueError):
            cov.p

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_gradient_identity(self, seed):
        rng = np.random.default_rng(seed)
        sys, prior = random_instance(rng)
        K = 14
        d = discretize(sys, K)
        ctx = make_context(sys, d, prior, float(rng.uniform(0.2, 2.0)))
        u = random_control(rng, K, sys.m)
        for w in (rng.standard_normal(sys.p), prior):
            cov = integrate_covector(sys, d, w, u, ctx.alpha)
            link = interval_switching(ctx.psi_fam, cov, d.dt) * d.dt / sys.T
            assert np.max(np.abs(link - gradient(sys, d, ctx, w, u))) < 1e-8

    def test_atoms_cross_check(self, preset, preset_disc, study):
        u = study.designs["ensemble-exact"].control
        exact = integrate_covector(preset.system, preset_disc, preset.prior, u, preset.alpha)
        atoms = integrate_covector(preset.system, preset_disc, atomize_prior(preset.prior, 51), u, preset.alpha)
        assert np.max(np.abs(exact.pB - atoms.pB)) < 1e-2 * np.max(np.abs(exact.pB))


class TestSwitching:
    def test_terminal_zero(self, rng):
        sys, prior = random_instance(rng)
        d = discretize(sys, 10)
        ctx = make_context(sys, d, prior, 1.0)
        for w in (prior.mean, prior):
            phi = switching_functions(ctx.psi_fam, integrate_covector(sys, d, w, random_control(rng, 10, sys.m), 1.0))
            assert np.all(phi[-1] == 0)

    def test_zero_control_is_kernel(self, rng):
        sys, prior = random_instance(rng)
        d = discretize(sys, 10)
        ctx = make_context(sys, d, prior, 3.0)
        phi = switching_functions(ctx.psi_fam, integrate_covector(sys, d, prior, np.zeros((10, sys.m)), 3.0))
        assert np.array_equal(phi, ctx.psi_fam.psi)

    @pytest.mark.parametrize("method", ["classical", "ensemble-exact", "ensemble-atoms"])
    def test_consistency_at_optimum(self, study, method):
        rep = study.designs[method].report
        assert rep.consistency >= 0.99
        assert rep.consistency_nodes >= 0.95


class TestClassifyArcs:
    t = np.linspace(0.0, 1.0, 11)

    def test_single_bang(self):
        arcs = classify_arcs(np.r_[np.linspace(2.0, 0.5, 10), 0.0], self.t)
        assert [a.label for a in arcs[0]] == ["bang+"]

    def test_identically_zero(self):
        arcs = classify_arcs(np.zeros(11), self.t)
        assert [(a.label, a.start, a.stop) for a in arcs[0]] == [("singular", 0, 10)]

    def test_one_switch(self):
        phi = np.r_[np.ones(5), -np.ones(5), 0.0]
        arcs = classify_arcs(phi, self.t)
        assert [a.label for a in arcs[0]] == ["bang+", "bang-"]
        assert arcs[0][1].t_start == pytest.approx(0.5)

    def test_short_small_run_is_indeterminate(self):
        phi = np.r_[np.ones(4), 1e-6, 1e-6, -np.ones(4), -1.0]
        assert [a.label for a in classify_arcs(phi, self.t)[0]] == ["bang+", "indeterminate", "bang-"]

    def test_singular_between_bangs(self):
        phi = np.r_[np.ones(3), np.full(5, 1e-5), -np.ones(3)]
        labels = [(a.label, a.start, a.stop) for a in classify_arcs(phi, self.t)[0]]
        assert labels == [("bang+", 0, 2), ("singular", 3, 7), ("bang-", 8, 10)]

    def test_isolated_zero_takes_previous_label(self):
        phi = np.r_[np.ones(5), 0.0, np.ones(5)]
        assert [a.label for a in classify_arcs(phi, self.t)[0]] == ["bang+"]

    def test_channels(self):
        phi = np.column_stack([np.ones(11), -np.ones(11)])
        arcs = classify_arcs(phi, self.t)
        assert [a.label for a in arcs[0]] == ["bang+"] and [a.label for a in arcs[1]] == ["bang-"]


class TestGram:
    def test_oscillator(self):
        Gb, Gs, Ge = gram_matrices(oscillator(), GaussianBelief([0.0], [[0.5]]))
        assert Gb[0, 0] == pytest.approx(1.0) and Gs[0, 0] == pytest.approx(0.5) and Ge[0, 0] == pytest.approx(1.5)

    def test_collapsed_prior(self, rng):
        sys, prior = random_instance(rng)
        Gb, Gs, Ge = gram_matrices(sys, GaussianBelief(prior.mean, np.eye(sys.p) * 1e-15))
        assert np.allclose(Ge, Gb, atol=1e-12)

    def test_orthonormal_columns(self):
        B = np.zeros((2, 2, 2))
        B[0] = np.eye(2)
        B[1] = [[1.0, 0.0], [0.0, 2.0]]
        sys = LinearParamSystem(A=-np.eye(2), B=B, C=[[1.0, 0.0]], sigma=[[1.0]], T=1.0)
        Gb, _, _ = gram_matrices(sys, GaussianBelief([0.0], [[1.0]]))
        assert np.allclose(Gb, np.eye(2))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_ensemble_identity(self, seed):
        rng = np.random.default_rng(seed)
        sys, prior = random_instance(rng, n_max=4, p_max=3)
        Gb, Gs, Ge = gram_matrices(sys, prior)
        assert np.max(np.abs(Ge - Gb - Gs)) < 1e-12
        for G in (Gb, Gs, Ge):
            assert np.array_equal(G, G.T)
            assert np.linalg.eigvalsh(G)[0] >= -1e-12
        # independent B^i family: the prior part is positive definite
        assert np.linalg.eigvalsh(Gs)[0] > 0


class TestLegendreClebsch:
    def test_oscillator(self):
        Gb, _, Ge = gram_matrices(oscillator(), GaussianBelief([0.0], [[0.5]]))
        ok, lam = legendre_clebsch_check(Gb, 1.2)
        assert ok and lam == pytest.approx(2.4, abs=1e-9)
        ok, lam = legendre_clebsch_check(Ge, 1.2)
        assert ok and lam == pytest.approx(3.6, abs=1e-9)

    def test_degenerate(self):
        ok, lam = legendre_clebsch_check(np.zeros((2, 2)), 1.0)
        assert not ok and lam == 0.0

    def test_identity(self):
        assert legendre_clebsch_check(np.eye(3), 1.0) == (True, 2.0)

    def test_restriction(self):
        ok, lam = legendre_clebsch_check(np.diag([0.0, 3.0]), 0.5, singular=[1])
        assert ok and lam == pytest.approx(3.0)

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            legendre_clebsch_check(np.eye(1), 0.0)


class TestSingularFeedback:
    def test_homogeneous(self):
        s = oscillator(T=5.0)
        d = discretize(s, 20)
        ctx = make_context(s, d, GaussianBelief([0.0], [[0.5]]), 1.0)
        cov = integrate_covector(s, d, np.zeros(1), np.zeros((20, 1)), 1.0)
        # x = p = 0; the remaining term is the kernel curvature
        fb = singular_feedback(s, ctx.psi_fam, cov, [3, 7], [0])
        assert np.allclose(fb.values[:, 0], -ctx.psi_fam.ddpsi[[3, 7], 0] / 2.0)
        s0 = scalar_system(C=0.0)
        d0 = discretize(s0, 10)
        ctx0 = make_context(s0, d0, GaussianBelief([0.0], [[1.0]]), 1.0)
        cov0 = integrate_covector(s0, d0, np.zeros(1), np.zeros((10, 1)), 1.0)
        assert np.all(singular_feedback(s0, ctx0.psi_fam, cov0, [1, 2], [0]).values == 0)

    def test_scalar_zero_drift(self, rng):
        # A = 0: x-dependent terms and p A^2 B vanish, u_s = -psi''/(2 alpha G)
        s = scalar_system(B0=1.0, B1=0.5, T=2.0)
        d = discretize(s, 16)
        ctx = make_context(s, d, GaussianBelief([0.0], [[1.0]]), 0.7)
        theta = np.array([0.4])
        cov = integrate_covector(s, d, theta, random_control(rng, 16, 1), 0.7)
        nodes = np.arange(16)
        fb = singular_feedback(s, ctx.psi_fam, cov, nodes, [0])
        G = (1.0 + 0.5 * 0.4) ** 2
        assert np.allclose(fb.values[:, 0], -ctx.psi_fam.ddpsi[nodes, 0] / (2 * 0.7 * G), atol=1e-14)
        assert np.allclose(fb.values, 0.0, atol=1e-14)

    @pytest.mark.parametrize("ensemble", [False, True])
    def test_second_derivative_by_finite_differences(self, rng, ensemble):
        # for a constant control phi is smooth; phi'' from the closed form must match differences
        for _ in range(5):
            sys, prior = random_instance(rng, T=2.0)
            K = 2000
            d = discretize(sys, K)
            alpha = 0.9
            ctx = make_context(sys, d, prior, alpha)
            c = rng.uniform(-1, 1, sys.m)
            w = prior if ensemble else rng.standard_normal(sys.p)
            cov = integrate_covector(sys, d, w, np.tile(c, (K, 1)), alpha)
            phi = switching_functions(ctx.psi_fam, cov)
            fd = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / d.dt ** 2
            for k in (200, 1000, 1700):
                ref = singular_residual(sys, ctx.psi_fam, cov, k, c)
                assert np.allclose(fd[k - 1], ref, atol=1e-4 * max(1.0, np.max(np.abs(ref))))

    def test_plug_back_residual(self, rng):
        for _ in range(10):
            sys, prior = random_instance(rng)
            K = 12
            d = discretize(sys, K)
            ctx = make_context(sys, d, prior, 1.1)
            cov = integrate_covector(sys, d, prior, random_control(rng, K, sys.m), 1.1)
            S = [0]
            bang = {i: float(rng.choice([-1.0, 1.0])) for i in range(1, sys.m)}
            nodes = np.arange(K)
            fb = singular_feedback(sys, ctx.psi_fam, cov, nodes, S, bang)
            scale = max(1.0, np.max(np.abs(ctx.psi_fam.ddpsi)))
            for r, k in enumerate(nodes):
                u = np.zeros(sys.m)
                u[S] = fb.values[r]
                for j, e in bang.items():
                    u[j] = e
                assert np.max(np.abs(singular_residual(sys, ctx.psi_fam, cov, k, u)[S])) < 1e-6 * scale
            assert np.array_equal(fb.feasible, np.all(np.abs(fb.values) <= 1, axis=1))

    def test_infeasible_flag(self):
        s = oscillator(T=5.0)
        d = discretize(s, 20)
        ctx = make_context(s, d, GaussianBelief([0.0], [[0.5]]), 1e-3)
        cov = integrate_covector(s, d, np.zeros(1), np.zeros((20, 1)), 1e-3)
        fb = singular_feedback(s, ctx.psi_fam, cov, np.arange(20), [0])
        assert not np.all(fb.feasible)
        assert np.all(fb.feasible == (np.abs(fb.values[:, 0]) <= 1))

    def test_singular_gram(self):
        s = oscillator()
        d = discretize(s, 10)
        ctx = make_context(s, d, GaussianBelief([0.0], [[0.5]]), 1.0)
        # B(-1) = B_0 - B_1 = 0
        cov = integrate_covector(s, d, np.array([-1.0]), np.ones((10, 1)), 1.0)
        with pytest.raises(SingularGram):
            singular_feedback(s, ctx.psi_fam, cov, [1], [0])

    def test_channel_overlap(self):
        s = oscillator()
        d = discretize(s, 10)
        ctx = make_context(s, d, GaussianBelief([0.0], [[0.5]]), 1.0)
        cov = integrate_covector(s, d, np.zeros(1), np.ones((10, 1)), 1.0)
        with pytest.raises(ValueError):
            singular_feedback(s, ctx.psi_fam, cov, [1], [0], {0: 1.0})


class TestReport:
    @pytest.mark.parametrize("method,lc", [("classical", 2.4), ("ensemble-exact", 3.6), ("ensemble-atoms", 3.6)])
    def test_second_order(self, study, method, lc):
        rep = study.designs[method].report
        assert rep.lc_pass and rep.lc_min_eig == pytest.approx(lc, abs=1e-9)
        assert np.max(np.abs(rep.gram_ensemble - rep.gram_classical - rep.gram_sigma)) < 1e-12

    @pytest.mark.parametrize("method", ["classical", "ensemble-exact"])
    def test_singular_arc_structure(self, study, method):
        rep = study.designs[method].report
        labels = [a.label for a in rep.arcs[0]]
        assert labels[0] == "singular" and "bang+" in labels
        assert rep.singular_feasible_fraction == 1.0
        assert rep.singular_residual_max < 1e-6 * max(1.0, np.max(np.abs(study.designs[method].ctx.psi_fam.ddpsi)))
        # the computed control follows the singular feedback on the arc
        assert rep.singular_feedback_error < 0.15


def test_sign_consistency():
    phi = np.array([[1.0], [-2.0], [1e-9], [3.0]])
    u = np.array([[1.0], [1.0], [-1.0], [1.0]])
    assert sign_consistency(phi, u) == pytest.approx(2 / 3)
