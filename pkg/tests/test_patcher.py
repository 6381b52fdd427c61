import json

import numpy as np
import pytest

from pandaug.errors import InvalidConfigError, PartialBalanceWarning
from pandaug.patcher import (
    AugmentedSample,
    BalanceConfig,
    PatchGrid,
    apply_standard_ops,
    balance_task,
    build_mask,
    compose_sample,
    partition_head_tail,
    partition_patches,
    read_balance_log,
    reassemble,
    score_patches,
    select_patches,
    standard_augment,
    write_balance_log,
)
from pandaug.providers import SyntheticProvider, synthetic_image


def random_image(seed, res=32):
    return np.random.default_rng(seed).integers(0, 256, (res, res, 3), dtype=np.uint8)


class TestPartition:
    def test_224_g4(self):
        grid = PatchGrid(g=4, resolution=224)
        patches = partition_patches(random_image(0, 224), grid)
        assert len(patches) == 16
        assert all(p.shape == (56, 56, 3) for p in patches)

    def test_g1_identity(self):
        grid = PatchGrid(g=1, resolution=32)
        img = random_image(1)
        patches = partition_patches(img, grid)
        assert len(patches) == 1
        assert np.array_equal(patches[0], img)

    def test_tiling_identity(self):
        grid = PatchGrid(g=8, resolution=32)
        img = random_image(2)
        assert np.array_equal(reassemble(partition_patches(img, grid), grid), img)

    def test_indivisible_grid(self):
        with pytest.raises(InvalidConfigError):
            PatchGrid(g=3, resolution=32)


class TestScoring:
    def test_foreground_ranks_first(self):
        provider = SyntheticProvider(dimension=64, seed=4, fg_fraction=0.25)
        grid = PatchGrid(g=4, resolution=32)
        scores = score_patches(provider, "itemA", "cat", None, grid)
        fg = set(provider.foreground_patches("itemA", 16).tolist())
        ranked = np.argsort(scores)[::-1][:len(fg)]
        assert set(ranked.tolist()) == fg

    def test_shape(self):
        provider = SyntheticProvider(dimension=16, seed=4)
        grid = PatchGrid(g=2, resolution=32)
        assert score_patches(provider, "x", "cat", None, grid).shape == (4,)


class TestSelect:
    def test_topk_above_threshold(self):
        assert select_patches(np.array([0.9, 0.5, 0.3, 0.1]), 2, 0.45) == (0, 1)

    def test_all_below_threshold(self):
        assert select_patches(np.array([0.1, 0.2, 0.45]), 2, 0.45) == ()

    def test_tie_breaks_to_low_index(self):
        assert select_patches(np.array([0.6, 0.6, 0.6]), 2, 0.45) == (0, 1)

    def test_selection_soundness(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            scores = rng.uniform(-1, 1, size=16)
            sel = select_patches(scores, 8, 0.45)
            assert len(sel) <= 8
            assert all(scores[i] > 0.45 for i in sel)
            unthresholded = select_patches(scores, 8, -1.0)
            assert set(sel) <= set(unthresholded) or len(unthresholded) == 8
            assert len(sel) <= len(unthresholded)


class TestMask:
    def test_empty(self):
        grid = PatchGrid(g=4, resolution=32)
        assert build_mask((), grid).sum() == 0

    def test_full(self):
        grid = PatchGrid(g=4, resolution=32)
        assert build_mask(range(16), grid).min() == 1

    def test_single_patch_rectangle(self):
        grid = PatchGrid(g=4, resolution=224)
        mask = build_mask({0}, grid)
        # per-pixel brute force over the whole plane
        for u in range(0, 224, 7):
            for v in range(0, 224, 7):
                expected = 1 if (u < 56 and v < 56) else 0
                assert mask[u, v] == expected

    def test_complement_identity(self):
        grid = PatchGrid(g=4, resolution=32)
        img = random_image(3)
        rng = np.random.default_rng(1)
        for _ in range(20):
            idx = rng.choice(16, size=rng.integers(0, 17), replace=False)
            m = build_mask(idx, grid)[:, :, None]
            recon = (1 - m) * img + m * img
            assert np.array_equal(recon.astype(np.uint8), img)


class TestCompose:
    def test_full_replacement(self):
        grid = PatchGrid(g=4, resolution=32)
        xh, xt = random_image(4), random_image(5)
        s = compose_sample(xh, xt, (0,), tuple(range(16)), grid, tail_label_id=7)
        assert np.array_equal(s.image, xt)
        assert s.label_id == 7

    def test_per_pixel_oracle_aligned(self):
        grid = PatchGrid(g=4, resolution=32)
        rng = np.random.default_rng(2)
        for _ in range(25):
            xh, xt = random_image(rng.integers(1e9)), random_image(rng.integers(1e9))
            i_h = tuple(rng.choice(16, size=4, replace=False).tolist())
            i_t = tuple(rng.choice(16, size=rng.integers(1, 9), replace=False).tolist())
            s = compose_sample(xh, xt, i_h, i_t, grid, tail_label_id=0)
            m = build_mask(i_t, grid)
            for u in range(0, 32, 3):
                for v in range(0, 32, 3):
                    src = xt if m[u, v] else xh
                    assert np.array_equal(s.image[u, v], src[u, v])

    def test_literal_equals_aligned_when_masks_coincide(self):
        grid = PatchGrid(g=4, resolution=32)
        xh, xt = random_image(6), random_image(7)
        idx = (1, 5, 9)
        a = compose_sample(xh, xt, idx, idx, grid, 0, mode="aligned")
        b = compose_sample(xh, xt, idx, idx, grid, 0, mode="literal")
        assert np.array_equal(a.image, b.image)

    def test_dimension_mismatch(self):
        grid = PatchGrid(g=4, resolution=32)
        with pytest.raises(InvalidConfigError):
            compose_sample(random_image(0, 32), random_image(0, 64), (0,), (0,), grid, 0)

    def test_empty_selection_rejected(self):
        grid = PatchGrid(g=4, resolution=32)
        with pytest.raises(InvalidConfigError):
            compose_sample(random_image(0), random_image(1), (), (0,), grid, 0)


class TestStandardAugment:
    def _sample(self, seed=0):
        return AugmentedSample(image=random_image(seed), label_id=1, item_id="s1",
                               head_source="h", tail_source="t",
                               head_indices=(0,), tail_indices=(1,))

    def test_deterministic(self):
        a = standard_augment(self._sample(), seed=11)
        b = standard_augment(self._sample(), seed=11)
        assert np.array_equal(a.image, b.image)
        assert a.post_augment_ops == b.post_augment_ops

    def test_shape_and_label_unchanged(self):
        out = standard_augment(self._sample(), seed=11)
        assert out.image.shape == (32, 32, 3)
        assert out.label_id == 1
        assert set(out.post_augment_ops) == {
            "flip", "crop", "brightness", "contrast", "saturation", "blur_sigma"}

    def test_identity_ops(self):
        img = random_image(9)
        ops = {"flip": False, "crop": [0, 0, 32], "brightness": 1.0,
               "contrast": 1.0, "saturation": 1.0, "blur_sigma": 0.0}
        assert np.array_equal(apply_standard_ops(img, ops), img)


class TestHeadTail:
    def test_two_classes(self):
        split = partition_head_tail({0: 100, 1: 10})
        assert split.head == (0,) and split.tail == (1,)

    def test_uniform_is_no_op(self):
        assert partition_head_tail({0: 5, 1: 5}).already_balanced

    def test_mean_threshold(self):
        split = partition_head_tail({0: 100, 1: 50, 2: 10})
        assert split.head == (0,)
        assert split.tail == (1, 2)


def _uniform_task(counts, seed=0):
    """Train list with given per-class counts plus label names."""
    train = []
    for cid, n in counts.items():
        train += [(f"it/{cid}/{i}", cid) for i in range(n)]
    labels = {cid: f"class{cid}" for cid in counts}
    return train, labels


class TestBalanceTask:
    grid = PatchGrid(g=4, resolution=32)

    def _loader(self, seed=0):
        return lambda iid: synthetic_image(seed, iid, 32)

    def test_already_balanced(self):
        train, labels = _uniform_task({0: 5, 1: 5})
        provider = SyntheticProvider(dimension=32, seed=0)
        res = balance_task(train, labels, provider, BalanceConfig(), self.grid, 0,
                           self._loader())
        assert res.samples == [] and res.log == []

    def test_gap_monotone_and_bounded(self):
        counts = {0: 50, 1: 10, 2: 10, 3: 10, 4: 10}
        train, labels = _uniform_task(counts)
        provider = SyntheticProvider(dimension=32, seed=0)
        res = balance_task(train, labels, provider, BalanceConfig(q=1), self.grid, 0,
                           self._loader())
        gaps = [rec["post_gap"] for rec in res.log]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert abs(res.residual_gap) <= 1

    def test_synthesized_labels_are_tail(self):
        train, labels = _uniform_task({0: 30, 1: 5, 2: 5})
        provider = SyntheticProvider(dimension=32, seed=0)
        res = balance_task(train, labels, provider, BalanceConfig(), self.grid, 0,
                           self._loader())
        split = partition_head_tail({0: 30, 1: 5, 2: 5})
        assert res.samples
        assert all(s.label_id in split.tail for s in res.samples)

    def test_head_consumption(self):
        train, labels = _uniform_task({0: 30, 1: 5, 2: 5})
        provider = SyntheticProvider(dimension=32, seed=0)
        res = balance_task(train, labels, provider, BalanceConfig(), self.grid, 0,
                          self._loader())
        assert len(res.consumed_head) == len(res.samples)
        assert len(set(res.consumed_head)) == len(res.consumed_head)

    def test_max_iterations_warning(self):
        train, labels = _uniform_task({0: 40, 1: 3})
        provider = SyntheticProvider(dimension=32, seed=0)
        with pytest.warns(PartialBalanceWarning):
            res = balance_task(train, labels, provider,
                               BalanceConfig(max_iterations=2), self.grid, 0,
                               self._loader())
        assert abs(res.residual_gap) > 1

    def test_deterministic_log(self, tmp_path):
        train, labels = _uniform_task({0: 30, 1: 5, 2: 5})
        provider = SyntheticProvider(dimension=32, seed=0)
        logs = []
        for run in range(2):
            res = balance_task(train, labels, provider, BalanceConfig(), self.grid, 7,
                               self._loader())
            path = tmp_path / f"log{run}.jsonl"
            write_balance_log(res, path)
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]

    def test_log_round_trip(self, tmp_path):
        train, labels = _uniform_task({0: 30, 1: 5, 2: 5})
        provider = SyntheticProvider(dimension=32, seed=0)
        res = balance_task(train, labels, provider, BalanceConfig(), self.grid, 7,
                          self._loader())
        path = tmp_path / "log.jsonl"
        write_balance_log(res, path)
        records, footer = read_balance_log(path)
        assert len(records) == len(res.log)
        assert footer["syntheses"] == len(res.log)
        assert footer["residual_gap"] == round(res.residual_gap, 6)
