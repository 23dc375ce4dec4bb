import numpy as np
import pytest

from nncp import (
    DenseTensor,
    DimTreeContext,
    DimTreePlan,
    TempTensor,
    choose_split_mode,
    khatri_rao,
    multi_ttv,
    naive_mttkrp,
    partial_mttkrp,
)
from nncp.dimtree import multi_ttv_flops, partial_mttkrp_flops


class TestChooseSplitMode:
    def test_cube(self):
        assert choose_split_mode([128, 128, 128]) == 2

    def test_tall_first_mode(self):
        assert choose_split_mode([1446680, 69, 25]) == 1

    def test_even_order_cube(self):
        assert choose_split_mode([384, 384, 384, 384]) == 2
        assert choose_split_mode([384, 384, 384, 384], strict=True) == 3

    def test_two_modes(self):
        assert choose_split_mode([5, 3]) == 1
        assert choose_split_mode([3, 5]) == 1  # capped at N-1

    def test_cap_when_never_dominant(self):
        assert choose_split_mode([2, 2, 100]) == 2


class TestPlan:
    def test_buffer_sizes(self):
        plan = DimTreePlan.create((4, 5, 3, 2), rank=3)
        assert plan.split == 2
        assert plan.left_buffer_elems == 4 * 5 * 3
        assert plan.right_buffer_elems == 3 * 2 * 3


class TestPartialMttkrp:
    def test_zero_tensor(self):
        plan = DimTreePlan.create((2, 2, 2), 1)
        x = DenseTensor((2, 2, 2))
        t = partial_mttkrp(x, np.ones((2, 1)), "left", plan)
        assert np.array_equal(t.data, np.zeros(4 * 1))

    def test_left_row_sums(self):
        # S=1 forced by a plan over dims where split lands at 1
        plan = DimTreePlan.create((8, 2, 2), 1)
        x = DenseTensor((8, 2, 2), np.arange(1.0, 33.0))
        t = partial_mttkrp(x, np.ones((4, 1)), "left", plan)
        assert np.array_equal(t.data, x.unfold_leading(1).sum(axis=1))

    def test_hand_example_2x2x2(self):
        # split=1 view of the 2x2x2 tensor: left result = row sums
        x = DenseTensor((2, 2, 2), np.arange(1.0, 9.0))
        plan = DimTreePlan((2, 2, 2), 1, split=1)
        t = partial_mttkrp(x, np.ones((4, 1)), "left", plan)
        assert np.array_equal(t.data, np.array([16.0, 20.0]))

    def test_rank_one_ones_contraction(self):
        dims = (3, 2, 2, 2)
        x = DenseTensor(dims, np.ones(24))
        plan = DimTreePlan.create(dims, 2)
        left = partial_mttkrp(x, np.ones((4, 2)), "left", plan)
        assert np.allclose(left.data, 4.0)
        right = partial_mttkrp(x, np.ones((6, 2)), "right", plan)
        assert np.allclose(right.data, 6.0)

    def test_shape_mismatch(self):
        plan = DimTreePlan.create((2, 2, 2), 1)
        x = DenseTensor((2, 2, 2))
        with pytest.raises(ValueError):
            partial_mttkrp(x, np.ones((3, 1)), "left", plan)
        with pytest.raises(ValueError):
            partial_mttkrp(x, np.ones((3, 1)), "right", plan)

    def test_flop_count(self):
        x = DenseTensor((4, 5, 6))
        assert partial_mttkrp_flops(x, 3) == 2 * 120 * 3


class TestMultiTtv:
    def test_zeros(self):
        t = TempTensor((2, 3), 2, np.zeros(12))
        out = multi_ttv(t, np.ones((3, 2)))
        assert np.array_equal(out.as_matrix(), np.zeros((2, 2)))

    def test_hand_matvec(self):
        # single rank block [[1,2],[3,4]] against column [1,1]
        t = TempTensor((2, 2), 1, np.array([1.0, 3.0, 2.0, 4.0]))
        out = multi_ttv(t, np.ones((2, 1)))
        assert np.array_equal(out.as_matrix(), np.array([[3.0], [7.0]]))

    def test_ones_give_row_sums(self):
        rng = np.random.default_rng(0)
        data = rng.standard_normal(2 * 3 * 2)
        t = TempTensor((2, 3), 2, data.copy())
        out = multi_ttv(t, np.ones((3, 2)), side="trailing")
        for r in range(2):
            assert np.allclose(out.as_matrix()[:, r], t.block_unfold1(r).sum(axis=1))

    def test_leading_contraction(self):
        rng = np.random.default_rng(1)
        t = TempTensor((3, 2, 2), 2, rng.standard_normal(24))
        coeff = rng.standard_normal((3, 2))
        out = multi_ttv(t, coeff, side="leading")
        assert out.retained_dims == (2, 2)
        for r in range(2):
            expect = t.block_unfold1(r).T @ coeff[:, r]
            assert np.allclose(out.block(r), expect)

    def test_shape_errors(self):
        t = TempTensor((2, 3), 1, np.zeros(6))
        with pytest.raises(ValueError):
            multi_ttv(t, np.ones((4, 1)))
        with pytest.raises(ValueError):
            multi_ttv(t, np.ones((3, 2)))  # rank mismatch
        single = TempTensor((4,), 1, np.zeros(4))
        with pytest.raises(ValueError):
            multi_ttv(single, np.ones((4, 1)))

    def test_flop_count(self):
        t = TempTensor((2, 3), 4, np.zeros(24))
        assert multi_ttv_flops(t) == 24


class TestTempTensorLayout:
    def test_block_contiguity(self):
        rng = np.random.default_rng(2)
        dims, r = (3, 2, 4), 3
        data = rng.standard_normal(int(np.prod(dims)) * r)
        t = TempTensor(dims, r, data)
        full = data.reshape(dims + (r,), order="F")
        for k in range(r):
            block = t.block(k)
            assert block.base is data or np.shares_memory(block, data)
            assert np.array_equal(block.reshape(dims, order="F"), full[..., k])
            assert np.array_equal(
                t.block_unfold1(k), full[..., k].reshape(3, -1, order="F")
            )


def tree_all_modes(x, hs, rank, strict=False):
    ctx = DimTreeContext(DimTreePlan.create(x.dims, rank, strict))
    ctx.begin_iteration()
    return ctx, [ctx.mttkrp(x, hs, n) for n in range(x.order)]


class TestDimTreeMttkrp:
    def test_three_way_matches_hand_example(self):
        x = DenseTensor((2, 2, 2), np.arange(1.0, 9.0))
        hs = [np.zeros((2, 2)), np.eye(2), np.ones((2, 2))]
        _, results = tree_all_modes(x, hs, 2)
        assert np.allclose(results[0], np.array([[6.0, 10.0], [8.0, 12.0]]))

    def test_rank_one_identity(self):
        rng = np.random.default_rng(3)
        hs = [rng.random((d, 1)) + 0.1 for d in (3, 4, 2)]
        from nncp import FactorSet, reconstruct

        x = reconstruct(FactorSet(hs))
        _, results = tree_all_modes(x, hs, 1)
        for mode in range(3):
            scale = np.prod(
                [float(hs[m][:, 0] @ hs[m][:, 0]) for m in range(3) if m != mode]
            )
            assert np.allclose(results[mode], hs[mode] * scale, rtol=1e-12)

    @pytest.mark.parametrize("order", [2, 3, 4, 5])
    def test_oracle_equivalence_all_modes(self, order):
        rng = np.random.default_rng(order)
        for _ in range(8):
            dims = tuple(int(d) for d in rng.integers(2, 7, size=order))
            r = int(rng.integers(1, 5))
            x = DenseTensor(dims, rng.standard_normal(int(np.prod(dims))))
            hs = [rng.standard_normal((d, r)) for d in dims]
            _, results = tree_all_modes(x, hs, r)
            for mode in range(order):
                oracle = naive_mttkrp(x, hs, mode)
                scale = max(np.abs(oracle).max(), 1e-30)
                assert np.abs(results[mode] - oracle).max() <= 1e-12 * scale

    @pytest.mark.parametrize("order", [2, 3, 4, 5, 6])
    def test_two_partials_per_iteration(self, order):
        rng = np.random.default_rng(10 + order)
        dims = (3,) * order
        x = DenseTensor(dims, rng.standard_normal(3**order))
        hs = [rng.standard_normal((3, 2)) for _ in range(order)]
        ctx = DimTreeContext(DimTreePlan.create(dims, 2))
        for sweep in range(1, 4):
            ctx.begin_iteration()
            for mode in range(order):
                ctx.mttkrp(x, hs, mode)
            assert ctx.partial_calls == 2 * sweep

    def test_snapshot_semantics_with_mutating_factors(self):
        # alternating updates change factors between modes; the tree must
        # combine the snapshot in its temporaries with the latest factors
        rng = np.random.default_rng(4)
        dims = (4, 3, 3, 2)
        x = DenseTensor(dims, rng.standard_normal(72))
        hs = [rng.standard_normal((d, 2)) for d in dims]
        ctx = DimTreeContext(DimTreePlan.create(dims, 2))
        ctx.begin_iteration()
        for mode in range(4):
            got = ctx.mttkrp(x, hs, mode)
            want = naive_mttkrp(x, hs, mode)
            assert np.allclose(got, want, rtol=1e-12, atol=1e-12)
            hs[mode] = rng.standard_normal(hs[mode].shape)  # the "update"

    def test_out_of_order_request_raises(self):
        x = DenseTensor((2, 2, 2), np.ones(8))
        hs = [np.ones((2, 1))] * 3
        ctx = DimTreeContext(DimTreePlan.create((2, 2, 2), 1))
        with pytest.raises(RuntimeError):
            ctx.mttkrp(x, hs, 0)  # begin_iteration not called
        ctx.begin_iteration()
        with pytest.raises(RuntimeError):
            ctx.mttkrp(x, hs, 1)

    def test_stale_cache_after_sweep_raises(self):
        x = DenseTensor((2, 2, 2), np.ones(8))
        hs = [np.ones((2, 1))] * 3
        ctx = DimTreeContext(DimTreePlan.create((2, 2, 2), 1))
        ctx.begin_iteration()
        for mode in range(3):
            ctx.mttkrp(x, hs, mode)
        with pytest.raises(RuntimeError):
            ctx.mttkrp(x, hs, 0)

    def test_flop_accounting(self):
        rng = np.random.default_rng(5)
        dims = (3, 3, 3)
        x = DenseTensor(dims, rng.standard_normal(27))
        hs = [rng.standard_normal((3, 2)) for _ in range(3)]
        ctx = DimTreeContext(DimTreePlan.create(dims, 2))
        ctx.begin_iteration()
        for mode in range(3):
            ctx.mttkrp(x, hs, mode)
        assert ctx.flops_partial == 2 * (2 * 27 * 2)
        # split=2: leaf TTVs touch T{1:2} (9*2 elems) twice, leaf for mode 3
        # touches T{3} once via the right partial (no TTV when S+1 == N)
        assert ctx.flops_ttv == (9 * 2) * 2

    def test_last_mode_shortcut(self):
        rng = np.random.default_rng(6)
        for dims in [(3, 4), (4, 3, 2), (2, 3, 2, 3)]:
            x = DenseTensor(dims, rng.standard_normal(int(np.prod(dims))))
            hs = [rng.standard_normal((d, 3)) for d in dims]
            ctx = DimTreeContext(DimTreePlan.create(dims, 3))
            got = ctx.mttkrp_last_mode(x, hs)
            want = naive_mttkrp(x, hs, len(dims) - 1)
            assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_krp_argument_order_matches_matricization(self):
        # the kept contract: X_(1:S) columns pair with ascending-mode KRP rows
        rng = np.random.default_rng(7)
        dims = (3, 2, 4, 2)
        x = DenseTensor(dims, rng.standard_normal(48))
        hs = [rng.standard_normal((d, 2)) for d in dims]
        plan = DimTreePlan.create(dims, 2)
        k = khatri_rao(hs[plan.split :])
        t = partial_mttkrp(x, k, "left", plan)
        direct = x.unfold_leading(plan.split) @ k
        assert np.allclose(t.data, direct.ravel(order="F"))
