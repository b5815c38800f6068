import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustpipe.data import gen_two_moons
from robustpipe.hpo import TrainSettings
from robustpipe.pipeline import RobustSpec
from robustpipe.shapley import (
    CoalitionGame,
    build_game,
    coalition_spec,
    indices_document,
    interaction_indices,
    mask_of,
    members,
    read_game_csv,
    shapley_values,
    split_indices,
    write_game_csv,
    write_indices_json,
)

ABC = ("a", "b", "c")


def _planted(coef, k):
    basis = [frozenset(t) for r in (1, 2) for t in itertools.combinations(range(k), r)]
    game = CoalitionGame.from_function(tuple("abcdef"[:k]), lambda S: sum(e for e, T in zip(coef, basis) if T <= S))
    return game, basis


class TestShapley:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 6))
    def test_efficiency(self, seed, k):
        g = CoalitionGame(tuple("abcdef"[:k]), np.random.default_rng(seed).normal(size=2**k))
        assert abs(shapley_values(g).sum() - (g.values[-1] - g.values[0])) < 1e-12

    def test_dummy_player(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=4)
        g = CoalitionGame.from_function(ABC, lambda S: base[mask_of(S - {2})])
        assert abs(shapley_values(g)[2]) < 1e-15

    def test_symmetric_players(self):
        g = CoalitionGame.from_function(ABC, lambda S: float(len(S & {0, 1}) == 2) + 0.3 * (2 in S))
        phi = shapley_values(g)
        assert phi[0] == pytest.approx(phi[1]) and phi[2] == pytest.approx(0.3)

    def test_additive_game(self):
        c = np.array([0.5, -1.25, 2.0])
        g = CoalitionGame.from_function(ABC, lambda S: sum(c[i] for i in S))
        np.testing.assert_allclose(shapley_values(g), c, atol=1e-14)

    def test_pure_pair_splits_evenly(self):
        g = CoalitionGame.from_function(ABC, lambda S: float({0, 1} <= S))
        np.testing.assert_allclose(shapley_values(g), [0.5, 0.5, 0.0], atol=1e-15)


class TestInteractions:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("k", [3, 4, 5])
    def test_planted_order_two_recovered(self, seed, k):
        basis_len = k + k * (k - 1) // 2
        coef = np.random.default_rng(seed).normal(size=basis_len)
        g, basis = _planted(coef, k)
        got = interaction_indices(g, 2)
        for T, e in zip(basis, coef):
            assert got[T] == pytest.approx(e, abs=1e-10)

    def test_order_one_is_shapley(self):
        g = CoalitionGame(ABC + ("d",), np.random.default_rng(1).normal(size=16))
        idx = interaction_indices(g, 1)
        np.testing.assert_allclose([idx[frozenset([i])] for i in range(4)], shapley_values(g), atol=1e-10)

    def test_additive_has_no_pairs(self):
        g = CoalitionGame.from_function(ABC, lambda S: 0.1 * len(S))
        mains, pairs = split_indices(g, interaction_indices(g))
        np.testing.assert_allclose(mains, 0.1, atol=1e-12)
        assert max(abs(v) for v in pairs.values()) < 1e-12 and set(pairs) == {(0, 1), (0, 2), (1, 2)}

    def test_efficiency_of_fit(self):
        g = CoalitionGame(ABC, np.random.default_rng(2).normal(size=8))
        idx = interaction_indices(g)
        assert sum(idx.values()) == pytest.approx(g.values[-1] - g.values[0], abs=1e-10)

    def test_bad_order(self):
        g = CoalitionGame(ABC, np.zeros(8))
        with pytest.raises(ValueError):
            interaction_indices(g, 0)
        with pytest.raises(ValueError):
            interaction_indices(g, 4)


class TestGameObject:
    def test_members_and_masks(self):
        assert members(5, 3) == frozenset({0, 2}) and mask_of({0, 2}) == 5

    def test_value_lookup(self):
        g = CoalitionGame(ABC, np.arange(8.0))
        assert g.value({1, 2}) == 6.0

    def test_size_checks(self):
        with pytest.raises(ValueError):
            CoalitionGame(ABC, np.zeros(7))
        with pytest.raises(ValueError):
            CoalitionGame(tuple("abcdefghijk"), np.zeros(2**11))

    def test_csv_and_json(self, tmp_path):
        g = CoalitionGame(ABC, np.random.default_rng(3).normal(size=8))
        write_game_csv(g, tmp_path / "g.csv")
        back = read_game_csv(tmp_path / "g.csv", ABC)
        np.testing.assert_array_equal(back.values, g.values)
        assert (tmp_path / "g.csv").read_text().splitlines()[4].startswith("3,a+b,")
        write_indices_json(g, tmp_path / "i.json")
        doc = json.loads((tmp_path / "i.json").read_text())
        assert doc == json.loads(json.dumps(indices_document(g)))
        assert set(doc["fsii_pairs"]) == {"a|b", "a|c", "b|c"}


class TestCoalitionSpecs:
    TUNED = {"vrm": {"sigma": 0.2}, "w_dro": {"rho": 0.05}, "kl_dro": {"tau": 0.7}}

    def test_empty_is_erm_and_full_activates_all(self):
        players = ("vrm", "w_dro", "kl_dro")
        assert coalition_spec(players, 0, self.TUNED) == RobustSpec()
        full = coalition_spec(players, 7, self.TUNED)
        assert full.stage_flags() == {"enrich": True, "input": True, "label": False, "aggregate": True}
        assert (full.sigma, full.rho, full.tau) == (0.2, 0.05, 0.7)

    def test_tuned_spec_objects_accepted(self):
        spec = coalition_spec(("w_dro",), 1, {"w_dro": RobustSpec(input_stance="pessimistic", rho=0.3, lr=0.5)})
        assert spec.rho == 0.3 and spec.lr == RobustSpec().lr

    def test_conflicts_and_unknown(self):
        with pytest.raises(ValueError):
            coalition_spec(("w_dro", "w_dfo"), 0, {})
        with pytest.raises(ValueError):
            coalition_spec(("dropout",), 0, {})

    def test_build_game_with_value_fn(self):
        players = ("vrm", "w_dro", "kl_dro")
        g, specs = build_game(players, self.TUNED, None, value_fn=lambda mask, spec: 1.0 + bin(mask).count("1"))
        assert g.values[0] == 0.0 and g.values[-1] == 3.0 and len(specs) == 8

    def test_build_game_trains(self):
        ds = gen_two_moons(40, seed=0, n_eval=20)
        g, _ = build_game(("vrm",), {"vrm": {"sigma": 0.1}}, ds, seeds=1, settings=TrainSettings(epochs=1, hidden=(4,)))
        assert g.values.shape == (2,) and g.values[0] == 0.0 and np.isfinite(g.values[1])
