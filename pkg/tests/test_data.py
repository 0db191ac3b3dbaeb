"""Dataset IO, masking strategies, fills, and windowing."""
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cofill.data import (MaskedBatch, Normalizer, SpatioTemporalSeries,
                         SynthSpec, TrainingMaskConfig, Window,
                         _draw_components, forward_interpolate, gaussian_fill,
                         load_series, mask_block, mask_point, save_series,
                         split_series, synth_dataset, training_mask, window)
from cofill.errors import ContractError, ParseError
from cofill.graph import Graph


def _series(values, mask):
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    return SpatioTemporalSeries(values=values,
                                mask=np.asarray(mask, dtype=float),
                                graph=Graph(adjacency=np.zeros((n, n))))


class TestLoadSave:
    def test_missing_cell_becomes_mask_zero(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("time,node_0,node_1\n0,1.5,2.5\n1,,3.5\n2,4.5,5.5\n")
        s = load_series(path)
        assert s.values.shape == (2, 3)
        assert s.mask.sum() == 5
        assert s.mask[0, 1] == 0.0

    def test_header_only_is_error(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("time,node_0\n")
        with pytest.raises(ParseError, match="no data rows"):
            load_series(path)

    def test_ragged_row_names_location(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("time,node_0,node_1\n0,1.0\n")
        with pytest.raises(ParseError, match="v.csv:2"):
            load_series(path)

    def test_non_numeric_cell_names_location(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("time,node_0,node_1\n0,1.0,oops\n")
        with pytest.raises(ParseError, match="column 2"):
            load_series(path)

    def test_round_trip_bit_identical(self, tmp_path, rng):
        values = rng.standard_normal((3, 7))
        mask = (rng.random((3, 7)) > 0.3).astype(float)
        mask[:, 0] = 1.0
        s = _series(values, mask)
        path = tmp_path / "v.csv"
        save_series(s, path)
        loaded = load_series(path)
        assert np.array_equal(loaded.mask, s.mask)
        assert np.array_equal(loaded.values[s.mask > 0], s.values[s.mask > 0])
        assert loaded.timestamps == s.timestamps


class TestSynthDataset:
    def test_deterministic_for_seed(self):
        a = synth_dataset(4, 50, seed=9)
        b = synth_dataset(4, 50, seed=9)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, synth_dataset(4, 50, seed=10).values)

    def test_noiseless_matches_closed_form(self):
        spec = SynthSpec(noise_std=0.0, smooth_passes=0)
        s = synth_dataset(3, 40, seed=2, spec=spec)
        amps, periods, phases = _draw_components(np.random.default_rng(2), 3, spec)
        for i in range(3):
            for l in range(40):
                expected = sum(
                    amps[i, c] * math.sin(2 * math.pi * l / periods[i, c]
                                          + phases[i, c])
                    for c in range(spec.n_components))
                assert abs(s.values[i, l] - expected) < 1e-12

    def test_fully_observed(self):
        assert synth_dataset(2, 10, seed=0).mask.all()

    def test_neighbor_correlation_exceeds_non_neighbor(self):
        s = synth_dataset(6, 4000, seed=3, spec=SynthSpec(noise_std=0.02))
        corr = np.corrcoef(s.values)
        a = s.graph.adjacency
        neigh = corr[(a > 0)]
        non = corr[(a == 0) & ~np.eye(6, dtype=bool)]
        assert neigh.mean() > non.mean()


class TestMaskPoint:
    def test_ratio_zero_is_identity(self, rng):
        s = synth_dataset(3, 20, seed=0)
        assert np.array_equal(mask_point(s, 0.0, rng), s.mask)

    def test_ratio_one_hides_everything(self, rng):
        s = synth_dataset(3, 20, seed=0)
        assert mask_point(s, 1.0, rng).sum() == 0

    def test_hidden_count_binomial(self):
        s = synth_dataset(10, 1000, seed=0)  # 10,000 observed entries
        m = mask_point(s, 0.25, np.random.default_rng(4))
        hidden = int(s.mask.sum() - m.sum())
        se = math.sqrt(10_000 * 0.25 * 0.75)
        assert abs(hidden - 2500) <= 3 * se

    def test_bad_ratio(self, rng):
        with pytest.raises(ContractError):
            mask_point(synth_dataset(2, 5, seed=0), 1.5, rng)


def _block_expected_fraction(length, point_ratio, seg_prob, min_len, max_len):
    """Exact per-entry hidden probability for the block pattern, averaged
    over positions (independent per-step segment starts, uniform lengths)."""
    n_lens = max_len - min_len + 1
    total = 0.0
    for l in range(length):
        p_clear = 1.0
        for s in range(max(0, l - max_len + 1), l + 1):
            delta = l - s
            # fraction of lengths that reach position l from start s
            reach = sum(1 for k in range(min_len, max_len + 1) if k > delta) / n_lens
            p_clear *= 1.0 - seg_prob * reach
        p_hidden = 1.0 - p_clear * (1.0 - point_ratio)
        total += p_hidden
    return total / length


class TestMaskBlock:
    def test_all_zero_params_identity(self, rng):
        s = synth_dataset(3, 60, seed=0)
        assert np.array_equal(mask_block(s, 0.0, 0.0, 1, 4, rng), s.mask)

    def test_saturation(self, rng):
        s = synth_dataset(3, 60, seed=0)
        m = mask_block(s, 0.0, 1.0, 60, 60, rng)
        assert m.sum() == 0

    def test_empirical_fraction_matches_analytic(self):
        # defaults: 5% point + 0.15% per-step starts of 12..48-step outages
        length = 2000
        s = synth_dataset(4, length, seed=0)
        expected = _block_expected_fraction(length, 0.05, 0.0015, 12, 48)
        fracs = []
        for seed in range(50):
            m = mask_block(s, 0.05, 0.0015, 12, 48, np.random.default_rng(seed))
            fracs.append(1.0 - m.sum() / m.size)
        assert abs(np.mean(fracs) - expected) / expected < 0.10

    def test_block_superset_of_point_component(self):
        s = synth_dataset(3, 100, seed=1)
        seed = 77
        m = mask_block(s, 0.3, 0.02, 3, 9, np.random.default_rng(seed))
        # replay the generator's draw order to isolate the point component
        r = np.random.default_rng(seed)
        r.random(s.mask.shape)                      # segment starts
        r.integers(3, 10, size=s.mask.shape)        # segment lengths
        point_hidden = r.random(s.mask.shape) < 0.3
        assert (m[point_hidden & (s.mask > 0)] == 0).all()

    def test_bad_lengths(self, rng):
        s = synth_dataset(2, 10, seed=0)
        with pytest.raises(ContractError):
            mask_block(s, 0.0, 0.1, 5, 3, rng)


class TestForwardInterpolate:
    def test_carry_forward(self):
        out = forward_interpolate(np.array([[1.0, 9.0, 9.0, 4.0]]),
                                  np.array([[1.0, 0.0, 0.0, 1.0]]))
        assert np.array_equal(out, [[1.0, 1.0, 1.0, 4.0]])

    def test_fully_observed_unchanged(self, rng):
        x = rng.standard_normal((2, 6))
        assert np.array_equal(forward_interpolate(x, np.ones((2, 6))), x)

    def test_leading_gap_backfills(self):
        out = forward_interpolate(np.array([[9.0, 9.0, 5.0, 9.0]]),
                                  np.array([[0.0, 0.0, 1.0, 0.0]]))
        assert np.array_equal(out, [[5.0, 5.0, 5.0, 5.0]])

    def test_all_missing_node_is_zero(self):
        out = forward_interpolate(np.array([[7.0, 7.0]]), np.zeros((1, 2)))
        assert np.array_equal(out, [[0.0, 0.0]])

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_observed_entries_preserved_and_finite(self, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((3, 8))
        m = (r.random((3, 8)) > 0.5).astype(float)
        out = forward_interpolate(x, m)
        assert np.isfinite(out).all()
        assert np.array_equal(out[m > 0], x[m > 0])


class TestGaussianFill:
    def test_no_missing_is_identity(self, rng):
        x = rng.standard_normal((2, 5))
        assert np.array_equal(gaussian_fill(x, np.ones((2, 5)), rng), x)

    def test_fill_statistics(self):
        x = np.zeros((100, 100))
        out = gaussian_fill(x, np.zeros_like(x), np.random.default_rng(8))
        n = x.size
        assert abs(out.mean()) < 3.0 / math.sqrt(n)
        assert abs(out.std() - 1.0) < 0.05

    def test_deterministic_for_seed(self):
        x = np.zeros((3, 4))
        m = np.zeros_like(x)
        a = gaussian_fill(x, m, np.random.default_rng(5))
        b = gaussian_fill(x, m, np.random.default_rng(5))
        assert np.array_equal(a, b)


class TestWindow:
    def test_exact_fit_single_window(self):
        s = synth_dataset(2, 24, seed=0)
        assert len(window(s, 24, 1)) == 1

    def test_disjoint_windows(self):
        s = synth_dataset(2, 48, seed=0)
        wins = window(s, 24, 24)
        assert len(wins) == 2
        assert [w.start for w in wins] == [0, 24]

    def test_strided_window_count(self):
        s = synth_dataset(2, 30, seed=0)
        wins = window(s, 24, 2)
        assert len(wins) == (30 - 24) // 2 + 1 == 4
        assert [w.start for w in wins] == [0, 2, 4, 6]

    def test_too_long_window_rejected(self):
        with pytest.raises(ContractError):
            window(synth_dataset(2, 10, seed=0), 11, 1)


class TestTrainingMask:
    def _window(self, rng, n=3, length=24):
        x = rng.standard_normal((n, length))
        return Window(values=x, mask=np.ones((n, length)), start=0)

    def test_point_ratio_zero_gives_empty_target(self, rng):
        win = self._window(rng)
        cfg = TrainingMaskConfig(point_ratio_max=0.0)
        mb = training_mask(win, "point", rng, cfg)
        assert mb.target_mask.sum() == 0

    @pytest.mark.parametrize("strategy", ["point", "block", "hybrid"])
    def test_condition_target_disjoint_union(self, strategy):
        r = np.random.default_rng(42)
        for _ in range(20):
            win = self._window(r)
            mb = training_mask(win, strategy, r)
            assert (mb.cond_mask * mb.target_mask).sum() == 0
            assert np.array_equal(mb.cond_mask + mb.target_mask, win.mask)

    def test_hybrid_coin_is_fair(self):
        r = np.random.default_rng(0)
        win = self._window(np.random.default_rng(1), n=2, length=8)
        point_draws = 0
        for _ in range(1000):
            # peek at the coin the strategy will consume: point iff u < 0.5
            state = r.bit_generator.state
            u = r.random()
            r.bit_generator.state = state
            mb = training_mask(win, "hybrid", r, TrainingMaskConfig())
            assert mb is not None
            if u < 0.5:
                point_draws += 1
        se = math.sqrt(1000 * 0.25)
        assert abs(point_draws - 500) <= 3 * se

    def test_empty_window_skipped_with_warning(self, rng):
        win = Window(values=np.zeros((2, 4)), mask=np.zeros((2, 4)), start=0)
        with pytest.warns(UserWarning, match="no observed entries"):
            assert training_mask(win, "point", rng) is None

    def test_unknown_strategy(self, rng):
        with pytest.raises(ContractError):
            training_mask(self._window(rng), "nope", rng)

    def test_no_leakage_from_target_values(self):
        # the pre-imputed inputs must be functions of condition-visible data
        base_rng = np.random.default_rng(11)
        win = self._window(base_rng)
        mb1 = training_mask(win, "point", np.random.default_rng(3))
        perturbed = win.values.copy()
        perturbed[mb1.target_mask > 0] += 100.0
        win2 = Window(values=perturbed, mask=win.mask, start=0)
        mb2 = training_mask(win2, "point", np.random.default_rng(3))
        assert np.array_equal(mb1.target_mask, mb2.target_mask)
        assert np.array_equal(mb1.x1, mb2.x1)
        assert np.array_equal(mb1.xg, mb2.xg)

    def test_partially_observed_targets_stay_within_observed(self):
        r = np.random.default_rng(5)
        x = r.standard_normal((3, 24))
        mask = (r.random((3, 24)) > 0.4).astype(float)
        win = Window(values=x, mask=mask, start=0)
        for _ in range(10):
            mb = training_mask(win, "hybrid", r)
            assert ((mb.target_mask > 0) <= (mask > 0)).all()
            assert ((mb.cond_mask > 0) <= (mask > 0)).all()


class TestNormalizer:
    def test_round_trip_identity(self, rng):
        x = rng.standard_normal((4, 50)) * 7 + 3
        m = (rng.random((4, 50)) > 0.2).astype(float)
        norm = Normalizer.fit(x, m)
        back = norm.inverse(norm.transform(x))
        assert np.abs((back - x)[m > 0]).max() < 1e-6

    def test_constant_node_std_floor(self):
        x = np.full((1, 10), 4.2)
        norm = Normalizer.fit(x, np.ones((1, 10)))
        assert norm.stds[0] >= Normalizer.EPS
        assert np.abs(norm.transform(x)).max() < 1e-6
        assert np.abs(norm.inverse(norm.transform(x)) - x).max() < 1e-6

    def test_unobserved_node_defaults(self):
        x = np.array([[1.0, 2.0], [9.0, 9.0]])
        m = np.array([[1.0, 1.0], [0.0, 0.0]])
        norm = Normalizer.fit(x, m)
        assert norm.means[1] == 0.0 and norm.stds[1] == 1.0


class TestSplit:
    def test_contiguous_70_10_20(self):
        s = synth_dataset(2, 100, seed=0)
        tr, va, te = split_series(s)
        assert tr.n_steps == 70 and va.n_steps == 10 and te.n_steps == 20
        assert np.array_equal(np.concatenate(
            [tr.values, va.values, te.values], axis=1), s.values)

    def test_bad_fractions(self):
        with pytest.raises(ContractError):
            split_series(synth_dataset(2, 10, seed=0), fracs=(0.5, 0.1, 0.1))
