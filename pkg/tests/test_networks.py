"""Tests for the four policy-network variants: construction, forward passes,
symmetry properties, goal sampling and checkpointing."""

import numpy as np
import pytest

from symnav.config import Config
from symnav.networks import (BuildError, CheckpointError, GlobalPolicyNetwork,
                             GoalLikelihoodMap, PolicyState, actor_forward,
                             build_network, critic_features, critic_forward,
                             load_checkpoint, resolve_variant, sample_goal,
                             save_checkpoint)
from symnav.layers import P4FeatureMap, transform_p4
from symnav.tensor import ShapeError, Tensor


def small_cfg(g=16, **extra):
    over = {"env.G": g}
    over.update(extra)
    return Config(over)


def rot_state(s: PolicyState, m: int) -> PolicyState:
    return PolicyState(np.ascontiguousarray(np.rot90(s.data, m, axes=(-2, -1))))


def random_state(rng, g=16, binary=True) -> PolicyState:
    if binary:
        return PolicyState((rng.random((8, g, g)) > 0.5).astype(float))
    return PolicyState(rng.random((8, g, g)))


def scale_weights(net: GlobalPolicyNetwork, factor: float) -> None:
    # doubled draws are still uniform random untrained weights; the default
    # bound leaves the value output too small to separate from float noise
    for _, p in net.parameters():
        p.data = p.data * factor


class TestBuildNetwork:
    def test_ans_has_no_p4_or_sgpp(self):
        net = build_network("ans", small_cfg())
        assert all(l.kind == "conv" for l in net.conv_layers)
        assert net.variant.critic_head == "flatten"
        assert net.variant.pooling == "max"

    def test_sans_has_one_sgpp_critic_head(self):
        net = build_network("s-ans", small_cfg())
        assert net.variant.critic_head == "sgpp"
        assert net.conv_layers[0].kind == "lifting"
        assert all(l.kind == "group" for l in net.conv_layers[1:])

    def test_variant_table(self):
        assert resolve_variant("e-ans").pooling == "blur"
        assert resolve_variant("g-ans").critic_head == "gap"
        with pytest.raises(BuildError):
            resolve_variant("x-ans")

    def test_parameter_counts_within_25_percent(self):
        cfg = Config()  # default desk-scale config, G=64
        ans = build_network("ans", cfg)
        sans = build_network("s-ans", cfg)
        ratio = max(ans.param_count, sans.param_count) / min(ans.param_count, sans.param_count)
        assert ratio <= 1.25

    def test_invalid_g_names_field(self):
        with pytest.raises(BuildError, match="env.G"):
            build_network("ans", Config({"env.G": 30}))

    def test_invalid_kernel_names_field(self):
        with pytest.raises(BuildError, match="net.kernel"):
            build_network("ans", small_cfg(16, **{"net.kernel": 4}))

    def test_param_count_stable(self):
        net = build_network("s-ans", small_cfg())
        before = net.param_count
        _ = actor_forward(net, random_state(np.random.default_rng(0)))
        assert net.param_count == before

    def test_drop_in_replacement_shapes(self):
        rng = np.random.default_rng(1)
        s = random_state(rng)
        outs = []
        for tag in ("ans", "e-ans", "g-ans", "s-ans"):
            net = build_network(tag, small_cfg(), seed=3)
            gmap = actor_forward(net, s)
            outs.append(gmap.data.shape)
            assert isinstance(critic_forward(net, s), float)
        assert len(set(outs)) == 1  # identical output lattices across variants


class TestActorForward:
    @pytest.mark.parametrize("tag", ["ans", "e-ans", "g-ans", "s-ans"])
    def test_distribution_valid(self, tag):
        rng = np.random.default_rng(2)
        net = build_network(tag, small_cfg(), seed=5)
        for _ in range(3):
            gmap = actor_forward(net, random_state(rng, binary=False))
            assert gmap.data.min() >= 0
            assert abs(gmap.data.sum() - 1.0) < 1e-6

    def test_sans_shared_block_equivariant(self):
        rng = np.random.default_rng(3)
        net = build_network("s-ans", small_cfg(), seed=7)
        s = random_state(rng)
        base = net.shared_block(Tensor(s.data))
        for m in range(4):
            got = net.shared_block(Tensor(rot_state(s, m).data)).data.data
            want = transform_p4(base, m).data.data
            assert np.abs(got - want).max() <= 1e-9

    def test_ans_block_translation_equivariant_but_not_rotation(self):
        cfg = small_cfg(32)
        net = build_network("ans", cfg, seed=9)
        for layer in net.conv_layers:
            layer.bias.data[:] = 0.0
        content = np.zeros((8, 32, 32))
        rng = np.random.default_rng(4)
        content[:, 10:16, 10:16] = rng.random((8, 6, 6))
        base = net.shared_block(Tensor(content)).data
        shifted = net.shared_block(Tensor(np.roll(content, 4, axis=2))).data
        np.testing.assert_allclose(shifted[:, :, 1:], base[:, :, :-1], atol=1e-12)

        # rotation identity fails on an asymmetric input
        scale_weights(net, 2.0)
        asym = PolicyState(np.clip(content * 0.9 + np.linspace(0, 0.1, 32)[None, None, :], 0, 1))
        out0 = net.shared_block(Tensor(asym.data)).data
        out1 = net.shared_block(Tensor(rot_state(asym, 1).data)).data
        gap = np.abs(out1 - np.rot90(out0, 1, axes=(-2, -1))).max()
        assert gap > 0.01


class TestCriticForward:
    def test_sans_rotation_invariant_random_weights(self):
        rng = np.random.default_rng(5)
        for seed in range(3):
            net = build_network("s-ans", small_cfg(), seed=seed)
            scale_weights(net, 2.0)
            for _ in range(10):
                s = random_state(rng)
                base = critic_forward(net, s)
                for m in range(4):
                    assert abs(critic_forward(net, rot_state(s, m)) - base) <= 1e-5

    def test_ans_not_rotation_invariant(self):
        rng = np.random.default_rng(6)
        hits = 0
        total = 0
        for seed in range(5):
            net = build_network("ans", small_cfg(), seed=seed)
            scale_weights(net, 2.0)
            for _ in range(10):
                s = random_state(rng)
                base = critic_forward(net, s)
                gap = max(abs(critic_forward(net, rot_state(s, m)) - base) for m in (1, 2, 3))
                hits += gap > 1e-3
                total += 1
        assert hits / total >= 0.9

    def test_gans_superfluous_translation_invariance(self):
        # the conv stack's receptive radius is 16 input cells, so on a 64-map
        # content centered with >=16 cells of margin never touches a border
        # and a 4-cell shift permutes the head input exactly
        rng = np.random.default_rng(7)
        net = build_network("g-ans", small_cfg(64), seed=11)
        content = np.zeros((8, 64, 64))
        content[:, 28:36, 28:36] = rng.random((8, 8, 8))
        s = PolicyState(content)
        base = critic_forward(net, s)
        for m in range(4):
            assert abs(critic_forward(net, rot_state(s, m)) - base) <= 1e-9
        shifted = PolicyState(np.roll(content, 4, axis=2))
        assert abs(critic_forward(net, shifted) - base) <= 1e-9

    def test_sans_not_translation_invariant(self):
        # off-center agent disk moved by 4 cells must change the value for at
        # least one weight seed (it does for virtually all of them)
        changed = 0
        for seed in range(20):
            net = build_network("s-ans", small_cfg(), seed=seed)
            state = np.zeros((8, 16, 16))
            state[2, 3:5, 9:11] = 1.0
            state[1, 2:8, 6:14] = 1.0
            a = critic_forward(net, PolicyState(state))
            b = critic_forward(net, PolicyState(np.roll(state, 4, axis=2)))
            changed += abs(a - b) > 0
        assert changed >= 1


class TestCriticFeatures:
    def test_sans_features_rotation_invariant(self):
        rng = np.random.default_rng(8)
        net = build_network("s-ans", small_cfg(), seed=13)
        s = random_state(rng)
        base = critic_features(net, s)
        for m in range(4):
            assert np.abs(critic_features(net, rot_state(s, m)) - base).max() <= 1e-9

    def test_identical_states_cosine_one(self):
        rng = np.random.default_rng(9)
        net = build_network("ans", small_cfg(), seed=15)
        f = critic_features(net, random_state(rng))
        cos = float(f @ f / (np.linalg.norm(f) ** 2))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_feature_dimensions_per_head(self):
        cfg = small_cfg()
        rng = np.random.default_rng(10)
        s = random_state(rng)
        dims = {tag: critic_features(build_network(tag, cfg, seed=1), s).size
                for tag in ("ans", "e-ans", "g-ans", "s-ans")}
        head_hw = 4  # 16 / downscale
        c = 32
        assert dims["ans"] == c * head_hw * head_hw
        assert dims["e-ans"] == c * 4 * head_hw * head_hw
        assert dims["g-ans"] == c
        assert dims["s-ans"] == c * head_hw  # R = head extent

    def test_rotation_similarity_ordering(self):
        # untrained features of any variant are mass-dominated, so absolute
        # similarity is high for all; the ordering S-ANS >= ANS must still hold
        rng = np.random.default_rng(11)
        sims = {"ans": [], "s-ans": []}
        for tag in sims:
            net = build_network(tag, small_cfg(), seed=17)
            for _ in range(5):
                s = random_state(rng)
                f0 = critic_features(net, s)
                for m in (1, 2, 3):
                    fm = critic_features(net, rot_state(s, m))
                    sims[tag].append(f0 @ fm / (np.linalg.norm(f0) * np.linalg.norm(fm)))
        assert min(sims["s-ans"]) >= 1.0 - 1e-9
        assert np.mean(sims["ans"]) < np.mean(sims["s-ans"])


class TestSampleGoal:
    def test_one_hot(self):
        probs = np.zeros((4, 4))
        probs[1, 2] = 1.0
        rng = np.random.default_rng(12)
        goal = sample_goal(GoalLikelihoodMap(probs), rng)
        assert goal == (1 * 4 + 1.5, 2 * 4 + 1.5)

    def test_uniform_frequencies_chi_square(self):
        side = 4
        probs = np.full((side, side), 1.0 / side ** 2)
        rng = np.random.default_rng(13)
        counts = np.zeros(side * side)
        n = 100_000
        for _ in range(n):
            r, c = sample_goal(GoalLikelihoodMap(probs), rng)
            counts[int(r // 4) * side + int(c // 4)] += 1
        expected = n / side ** 2
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        df = side ** 2 - 1
        assert chi2 < df + 3 * np.sqrt(2 * df)

    def test_fixed_seed_reproducible(self):
        rng_a = np.random.default_rng(14)
        rng_b = np.random.default_rng(14)
        probs = np.random.default_rng(0).random((4, 4))
        probs /= probs.sum()
        gmap = GoalLikelihoodMap(probs)
        seq_a = [sample_goal(gmap, rng_a) for _ in range(50)]
        seq_b = [sample_goal(gmap, rng_b) for _ in range(50)]
        assert seq_a == seq_b


class TestPolicyStateType:
    def test_shape_enforced(self):
        with pytest.raises(ShapeError):
            PolicyState(np.zeros((4, 16, 16)))

    def test_range_enforced(self):
        bad = np.zeros((8, 16, 16))
        bad[0, 0, 0] = 1.5
        with pytest.raises(ValueError):
            PolicyState(bad)

    def test_goal_map_must_normalize(self):
        with pytest.raises(ValueError):
            GoalLikelihoodMap(np.full((4, 4), 0.1))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = small_cfg()
        net = build_network("s-ans", cfg, seed=19)
        rng = np.random.default_rng(15)
        s = random_state(rng)
        v = critic_forward(net, s)
        gmap = actor_forward(net, s)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net)
        loaded = load_checkpoint(path, cfg)
        assert loaded.variant.tag == "S-ANS"
        assert critic_forward(loaded, s) == pytest.approx(v, abs=1e-12)
        np.testing.assert_allclose(actor_forward(loaded, s).data, gmap.data, atol=1e-12)

    def test_variant_mismatch_names_both_tags(self, tmp_path):
        cfg = small_cfg()
        net = build_network("ans", cfg, seed=21)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net)
        with pytest.raises(CheckpointError, match="ANS.*S-ANS|S-ANS.*ANS"):
            load_checkpoint(path, cfg, expect_variant="s-ans")

    def test_shape_mismatch_rejected(self, tmp_path):
        net = build_network("ans", small_cfg(), seed=23)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, small_cfg(32))
