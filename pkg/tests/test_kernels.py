import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mildsolve.errors import ContractError, DomainError
from mildsolve.kernels import (
    HypothesisWarning,
    Kernel,
    apply_extended,
    apply_kernel,
    holder_modulus,
    singularity_bound,
)
from mildsolve.spaces import SpaceSpec, StateVector

from oracles import sup_t_pow_exp

S1 = SpaceSpec(1)
S2 = SpaceSpec(2)
A2 = np.array([[-1.0, 0.5], [-0.3, -2.0]])


def kernels(T=1.0):
    return [
        Kernel.identity(S2, T),
        Kernel.scalar_exp(-0.7, S2, T),
        Kernel.diagonal_exp([1.0, 3.0], S2, T),
        Kernel.matrix_exp(A2, S2, T),
        Kernel.singular_scaled(0.4, Kernel.matrix_exp(A2, S2, T)),
    ]


class TestConstruction:
    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            Kernel("fractional", 1.0, S1)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ContractError):
            Kernel.identity(S1, 1.0, alpha=alpha)

    def test_rho_range(self):
        with pytest.raises(ContractError):
            Kernel.identity(S1, 1.0, rho=1.0)

    def test_horizon_positive(self):
        with pytest.raises(ContractError):
            Kernel.identity(S1, 0.0)

    def test_diagonal_length(self):
        with pytest.raises(ContractError):
            Kernel.diagonal_exp([1.0], S2, 1.0)

    def test_singular_needs_alpha0_in_unit_interval(self):
        with pytest.raises(ContractError):
            Kernel.singular_scaled(1.0, Kernel.identity(S1, 1.0))

    def test_singular_not_nested(self):
        inner = Kernel.singular_scaled(0.3, Kernel.identity(S1, 1.0))
        with pytest.raises(ContractError):
            Kernel.singular_scaled(0.3, inner)

    def test_default_alpha(self):
        assert Kernel.singular_scaled(0.3, Kernel.identity(S1, 1.0)).alpha == 0.3
        assert 0 < Kernel.identity(S1, 1.0).alpha < 1

    def test_splitting_flag(self):
        assert Kernel.matrix_exp(A2, S2, 1.0).has_splitting
        assert not Kernel.singular_scaled(0.5, Kernel.identity(S2, 1.0)).has_splitting


class TestApplyKernel:
    def test_identity(self):
        out = apply_kernel(Kernel.identity(S2, 1.0), 0.3, [1.0, 2.0])
        assert np.array_equal(out.coords, [1.0, 2.0])

    def test_scalar_exp(self):
        out = apply_kernel(Kernel.scalar_exp(-1.0, S1, 2.0), 1.0, [1.0])
        assert out.coords[0] == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_singular_scaled_identity(self):
        k = Kernel.singular_scaled(0.5, Kernel.identity(S1, 1.0))
        assert apply_kernel(k, 0.25, [1.0]).coords[0] == pytest.approx(2.0, rel=1e-15)

    def test_matrix_exp_against_scipy(self):
        k = Kernel.matrix_exp(A2, S2, 1.0)
        w = np.array([0.3, -1.2])
        assert np.allclose(apply_kernel(k, 0.6, w).coords, expm(0.6 * A2) @ w, rtol=1e-13)

    @pytest.mark.parametrize("n", [5, 2000])
    def test_defective_generator_closed_form(self, n):
        # a Jordan block has no eigenbasis; exp(uJ) = e^{-u} [[1, u], [0, 1]]
        k = Kernel.matrix_exp(np.array([[-1.0, 1.0], [0.0, -1.0]]), S2, 1.0)
        u = np.linspace(0.001, 0.999, n)
        E = k.semigroup_factors(u)
        exact = np.exp(-u)[:, None, None] * np.stack([np.ones_like(u), u, np.zeros_like(u), np.ones_like(u)], -1).reshape(n, 2, 2)
        assert np.allclose(E, exact, rtol=1e-13, atol=1e-15)

    def test_rotation_generator(self):
        k = Kernel.matrix_exp(np.array([[0.0, -2.0], [2.0, 0.0]]), S2, 1.0)
        u = np.linspace(0.0, 1.0, 7)
        E = k.semigroup_factors(u)
        assert np.allclose(E[:, 0, 0], np.cos(2 * u), atol=1e-14)
        assert np.allclose(E[:, 1, 0], np.sin(2 * u), atol=1e-14)

    @pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
    def test_open_interval(self, t):
        with pytest.raises(DomainError):
            apply_kernel(Kernel.identity(S1, 1.0), t, [1.0])

    def test_space_checked(self):
        k = Kernel.identity(S2, 1.0)
        with pytest.raises(ContractError):
            apply_kernel(k, 0.5, StateVector([1.0, 2.0], SpaceSpec(2, "euclidean")))

    @settings(max_examples=60, deadline=None)
    @given(
        st.sampled_from(range(5)),
        st.floats(0.01, 0.99),
        st.lists(st.floats(-10, 10), min_size=2, max_size=2),
        st.lists(st.floats(-10, 10), min_size=2, max_size=2),
        st.floats(-5, 5),
    )
    def test_linearity(self, idx, t, w, z, a):
        k = kernels()[idx]
        w, z = np.array(w), np.array(z)
        lhs = apply_kernel(k, t, a * w + z).coords
        rhs = a * apply_kernel(k, t, w).coords + apply_kernel(k, t, z).coords
        scale = 1.0 + np.abs(lhs).max() + np.abs(a * apply_kernel(k, t, w).coords).max()
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * scale)
        ext_l = apply_extended(k, t, a * w + z).coords
        ext_r = a * apply_extended(k, t, w).coords + apply_extended(k, t, z).coords
        assert np.allclose(ext_l, ext_r, rtol=0, atol=1e-12 * (1 + np.abs(ext_l).max() + 10 * abs(a) * 10))


class TestApplyExtended:
    @pytest.mark.parametrize("k", kernels(), ids=lambda k: k.kind)
    def test_zero_is_identity(self, k):
        v = np.array([0.4, -7.0])
        assert np.array_equal(apply_extended(k, 0.0, v).coords, v)

    def test_diagonal(self):
        k = Kernel.diagonal_exp([1.0, 2.0], S2, 2.0)
        out = apply_extended(k, 1.0, [1.0, 1.0]).coords
        assert np.allclose(out, [math.exp(-1.0), math.exp(-2.0)], rtol=1e-15)

    def test_closed_interval_endpoint(self):
        k = Kernel.scalar_exp(-1.0, S1, 1.0)
        assert apply_extended(k, 1.0, [1.0]).coords[0] == pytest.approx(math.exp(-1.0))
        with pytest.raises(DomainError):
            apply_extended(k, 1.01, [1.0])

    def test_semigroup_example(self):
        k = Kernel.scalar_exp(-1.0, S1, 1.0)
        two_step = apply_extended(k, 0.3, apply_kernel(k, 0.2, [1.0])).coords[0]
        assert two_step == pytest.approx(math.exp(-0.5), rel=1e-14)
        assert apply_kernel(k, 0.5, [1.0]).coords[0] == pytest.approx(math.exp(-0.5), rel=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(
        st.sampled_from(range(4)),
        st.floats(0.0, 0.98),
        st.floats(0.005, 1.0),
        st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    )
    def test_splitting_property(self, idx, t1, frac, w):
        k = kernels()[idx]
        t2 = frac * (k.T - t1) * 0.999
        if t2 <= 0:
            return
        w = np.array(w)
        lhs = apply_kernel(k, t1 + t2, w).coords
        rhs = apply_extended(k, t1, apply_kernel(k, t2, w)).coords
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-13 * (1 + np.abs(w).max()))

    @pytest.mark.parametrize("k", kernels(), ids=lambda k: k.kind)
    def test_extension_continuous_under_refinement(self, k):
        v = np.array([1.0, -0.5])
        jumps = []
        for level in range(3, 9):
            t = np.linspace(0.0, k.T, 2**level + 1)
            vals = np.array([apply_extended(k, s, v).coords for s in t])
            jumps.append(np.abs(np.diff(vals, axis=0)).max())
        assert all(b <= a + 1e-15 for a, b in zip(jumps, jumps[1:]))
        assert jumps[-1] < 0.02


class TestSingularityBound:
    def test_identity(self):
        assert singularity_bound(Kernel.identity(S1, 1.0, alpha=0.5)) == pytest.approx(1.0, rel=1e-15)

    def test_scalar_exp_calculus_maximum(self):
        M = singularity_bound(Kernel.scalar_exp(-1.0, S1, 1.0, alpha=0.5))
        expected = math.exp(-0.5) / math.sqrt(2.0)
        assert M == pytest.approx(expected, rel=1e-12)
        assert M == pytest.approx(0.42888, abs=5e-6)
        assert M == pytest.approx(sup_t_pow_exp(0.5, -1.0, 1.0), rel=1e-8)

    def test_singular_scaled_identity(self):
        k = Kernel.singular_scaled(0.5, Kernel.identity(S1, 4.0), alpha=0.5)
        assert singularity_bound(k) == pytest.approx(1.0, rel=1e-15)

    def test_infinite_when_alpha_below_alpha0(self):
        k = Kernel.singular_scaled(0.5, Kernel.identity(S1, 1.0), alpha=0.3)
        assert singularity_bound(k) == math.inf

    def test_mesh_minimum(self):
        with pytest.raises(ContractError):
            singularity_bound(Kernel.identity(S1, 1.0), mesh=1)

    def test_matrix_kernel_against_brute_force(self):
        k = Kernel.matrix_exp(A2, S2, 1.0, alpha=0.3)
        t = np.linspace(1e-6, 1.0, 4001)
        brute = max(s**0.3 * np.abs(expm(s * A2)).sum(axis=1).max() for s in t)
        M = singularity_bound(k, mesh=256)
        assert M == pytest.approx(brute, rel=1e-3)

    def test_monotone_in_mesh_and_converges(self):
        k = Kernel.matrix_exp(np.array([[0.0, 1.0], [-4.0, -0.2]]), SpaceSpec(2, "euclidean"), 2.0, alpha=0.4)
        vals = [singularity_bound(k, mesh=m) for m in (4, 8, 16, 32, 64, 128)]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - vals[-2]) < 1e-3 * vals[-1]

    @pytest.mark.parametrize("mesh", [2, 8, 64])
    def test_closed_form_kinds_exact_at_any_mesh(self, mesh):
        k = Kernel.diagonal_exp([0.5, 2.0], S2, 3.0, alpha=0.25)
        assert singularity_bound(k, mesh) == pytest.approx(sup_t_pow_exp(0.25, -0.5, 3.0), rel=1e-8)


class TestHolderModulus:
    def test_identity_zero(self):
        assert holder_modulus(Kernel.identity(S1, 1.0, alpha=0.5)) == 0.0

    def test_scalar_exp_finite_and_at_most_one(self):
        k = Kernel.scalar_exp(-1.0, S1, 1.0, alpha=0.5, rho=0.5)
        C = holder_modulus(k, mesh=64)
        # |e^-u - e^-s| <= |u - s| <= |u - s|^0.5 on (0, 1)
        assert 0 < C <= 1.0
        s = np.linspace(1e-4, 1, 300)
        S, U = np.meshgrid(s, s, indexing="ij")
        m = U > S
        brute = np.max(S[m] ** 0.5 * np.abs(np.exp(-U[m]) - np.exp(-S[m])) / (U[m] - S[m]) ** 0.5)
        assert C >= 0.9 * brute

    def test_one_dim_diagonal_matches_scalar(self):
        a = holder_modulus(Kernel.scalar_exp(-1.0, S1, 1.0, alpha=0.5))
        b = holder_modulus(Kernel.diagonal_exp([1.0], S1, 1.0, alpha=0.5))
        assert a == pytest.approx(b, rel=1e-14)

    def test_divergence_warns(self):
        k = Kernel.singular_scaled(0.5, Kernel.identity(S1, 1.0), alpha=0.5)
        with pytest.warns(HypothesisWarning):
            holder_modulus(k, mesh=16)

    def test_bounded_kernel_does_not_warn(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            holder_modulus(Kernel.matrix_exp(A2, S2, 1.0, alpha=0.5), mesh=8)
