"""Actor-critic global policy networks in four symmetry variants.

All variants share one convolutional block (five layers, pooling after the
second and fourth) feeding an actor head that emits a goal likelihood map at
a quarter of the input resolution, and a critic head that differs per
variant: flatten, global average pooling, or polar pooling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import Config
from .layers import (LayerParams, P4FeatureMap, blur_pool, conv2d,
                     fully_connected, group_gconv, init_layer, lifting_gconv,
                     linear_rows, max_pool, orientation_pool)
from .sgpp import global_average_pool, polar_profile_rows, sgpp
from .tensor import ShapeError, Tensor

CHECKPOINT_MAGIC = b"SYMNAVCK"


class BuildError(ValueError):
    """Network construction rejected an invalid configuration."""


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelVariant:
    tag: str
    conv: str          # standard | p4
    pooling: str       # max | blur
    critic_head: str   # flatten | gap | sgpp


VARIANTS = {
    "ans": ModelVariant("ANS", "standard", "max", "flatten"),
    "e-ans": ModelVariant("E-ANS", "p4", "blur", "flatten"),
    "g-ans": ModelVariant("G-ANS", "p4", "blur", "gap"),
    "s-ans": ModelVariant("S-ANS", "p4", "blur", "sgpp"),
}


def resolve_variant(tag) -> ModelVariant:
    if isinstance(tag, ModelVariant):
        return tag
    try:
        return VARIANTS[str(tag).lower()]
    except KeyError:
        raise BuildError(f"unknown variant {tag!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass
class PolicyState:
    """Policy input: local crop stacked on the rescaled global view, [8,G,G].

    Channel layout per view: obstacles, explored, agent position, visited path.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != 8 or self.data.shape[1] != self.data.shape[2]:
            raise ShapeError(f"policy state must be [8,G,G], got {self.data.shape}")
        if self.data.min() < -1e-9 or self.data.max() > 1 + 1e-9:
            raise ValueError("policy state values must lie in [0,1]")

    @property
    def G(self) -> int:
        return self.data.shape[1]


@dataclass
class GoalLikelihoodMap:
    """Probabilities over long-term goal cells on the G/4 lattice."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != self.data.shape[1]:
            raise ShapeError(f"goal map must be square, got {self.data.shape}")
        if self.data.min() < 0 or abs(self.data.sum() - 1.0) > 1e-6:
            raise ValueError("goal map must be a probability distribution")


# downscale between the policy state and the goal lattice: two stride-2 pools
DOWNSCALE = 4


class GlobalPolicyNetwork:
    """Shared conv block plus actor and critic heads for one variant."""

    def __init__(self, variant: ModelVariant, cfg: Config, seed: int = 0):
        self.variant = variant
        g = cfg["env.G"]
        if g % DOWNSCALE != 0:
            raise BuildError(f"env.G must be divisible by {DOWNSCALE}, got env.G={g}")
        widths = cfg.widths()
        k = cfg["net.kernel"]
        if k % 2 != 1:
            raise BuildError(f"net.kernel must be odd for same-size convolution, got net.kernel={k}")
        self.G = g
        self.G_out = g // DOWNSCALE
        self.widths = widths
        self.kernel = k
        self.dtype = np.float32 if cfg["net.dtype"] == "float32" else np.float64
        self.net_hash = cfg.net_hash()

        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
        conv_kind = "standard" if variant.conv == "standard" else "p4"
        self.conv_layers = []
        c_in = 8
        for i, c_out in enumerate(widths):
            if conv_kind == "standard":
                kind = "conv"
            else:
                kind = "lifting" if i == 0 else "group"
            self.conv_layers.append(init_layer(kind, rng, c_out=c_out, c_in=c_in,
                                               k=k, dtype=self.dtype))
            c_in = c_out

        head_c = widths[-1]
        head_hw = self.G_out
        # actor head sees a plain [C,H,W] map (orientation pooled for p4)
        actor_in = head_c * head_hw * head_hw
        self.actor_fc1 = init_layer("fc", rng, d_out=cfg["net.actor_hidden"],
                                    d_in=actor_in, dtype=self.dtype)
        self.actor_fc2 = init_layer("fc", rng, d_out=self.G_out * self.G_out,
                                    d_in=cfg["net.actor_hidden"], dtype=self.dtype)

        r_cfg, a_cfg = cfg["net.sgpp_R"], cfg["net.sgpp_A"]
        self.sgpp_R = r_cfg if r_cfg > 0 else head_hw
        self.sgpp_A = a_cfg if a_cfg > 0 else max(4, -(-head_hw // 4) * 4)
        if self.sgpp_A % 4 != 0:
            raise BuildError(f"net.sgpp_A must be a multiple of 4, got net.sgpp_A={self.sgpp_A}")

        if variant.critic_head == "flatten":
            critic_in = head_c * head_hw * head_hw
            if variant.conv == "p4":
                critic_in *= 4
        elif variant.critic_head == "gap":
            critic_in = head_c
        else:
            critic_in = head_c * self.sgpp_R
        self.critic_fc1 = init_layer("fc", rng, d_out=cfg["net.critic_hidden"],
                                     d_in=critic_in, dtype=self.dtype)
        self.critic_fc2 = init_layer("fc", rng, d_out=1,
                                     d_in=cfg["net.critic_hidden"], dtype=self.dtype)
        self.param_count = sum(p.param_count() for p in self._layers())

    def _layers(self):
        return self.conv_layers + [self.actor_fc1, self.actor_fc2,
                                   self.critic_fc1, self.critic_fc2]

    def parameters(self):
        """Parameter tensors in fixed declaration order (checkpoint order)."""
        out = []
        for i, layer in enumerate(self._layers()):
            out.append((f"layer{i}.weight", layer.weight))
            out.append((f"layer{i}.bias", layer.bias))
        return out

    # ---- forward passes -------------------------------------------------

    def _state_tensor(self, s: PolicyState) -> Tensor:
        if s.data.shape[1] != self.G:
            raise ShapeError(f"state extent {s.data.shape[1]} does not match net G={self.G}")
        return Tensor(s.data.astype(self.dtype))

    def shared_block(self, x: Tensor):
        """Five conv layers with pooling after layers 2 and 4.

        The final conv is linear: both heads apply their own nonlinearity, and
        a pre-activation block output keeps the head input features near zero
        mean instead of relu-rectified.
        """
        pad = self.kernel // 2
        p4 = self.variant.conv == "p4"
        pool = blur_pool if self.variant.pooling == "blur" else max_pool
        last = len(self.conv_layers) - 1
        h = x
        for i, params in enumerate(self.conv_layers):
            if p4:
                fmap = lifting_gconv(h, params, padding=pad) if i == 0 \
                    else group_gconv(h, params, padding=pad)
                h = fmap.data
            else:
                h = conv2d(h, params, padding=pad)
            if i != last:
                h = T.relu(h)
            if i in (1, 3):
                h = pool(h)
        return P4FeatureMap(h) if p4 and len(h.shape) == 4 else h

    def _actor_head(self, feat) -> Tensor:
        if self.variant.conv == "p4":
            feat = orientation_pool(feat, "mean")
        flat = T.reshape(feat, (feat.size,))
        hidden = T.relu(fully_connected(flat, self.actor_fc1))
        return fully_connected(hidden, self.actor_fc2)

    def _critic_feature(self, feat) -> Tensor:
        head = self.variant.critic_head
        if head == "flatten":
            data = feat.data if isinstance(feat, P4FeatureMap) else feat
            return T.reshape(data, (data.size,))
        if head == "gap":
            data = feat.data if isinstance(feat, P4FeatureMap) else feat
            return global_average_pool(data)
        pooled = orientation_pool(feat, "mean") if isinstance(feat, P4FeatureMap) else feat
        profile = sgpp(pooled, self.sgpp_R, self.sgpp_A).data
        return T.reshape(profile, (profile.size,))

    def _critic_head(self, feat) -> Tensor:
        hidden = T.relu(fully_connected(self._critic_feature(feat), self.critic_fc1))
        return T.reshape(fully_connected(hidden, self.critic_fc2), ())

    def actor_logits(self, s: PolicyState) -> Tensor:
        return self._actor_head(self.shared_block(self._state_tensor(s)))

    def critic_value(self, s: PolicyState) -> Tensor:
        return self._critic_head(self.shared_block(self._state_tensor(s)))

    def critic_feature_tensor(self, s: PolicyState) -> Tensor:
        """The critic-head input representation (flatten / GAP / polar profile)."""
        return self._critic_feature(self.shared_block(self._state_tensor(s)))

    def actor_and_value(self, s: PolicyState) -> tuple:
        """Both heads off one shared-block pass (the block is shared by
        construction; evaluating it once also halves the conv cost)."""
        feat = self.shared_block(self._state_tensor(s))
        return self._actor_head(feat), self._critic_head(feat)

    # ---- batched fast path (training) ---------------------------------

    def batched_actor_and_value(self, states) -> tuple:
        """Logits [B, G'*G'] and values [B] for a list of states through one
        shared-block pass; identical math to the per-sample path."""
        stack = np.stack([s.data for s in states]).astype(self.dtype)
        feat = self.shared_block(Tensor(stack))
        b = stack.shape[0]
        p4 = self.variant.conv == "p4"

        head_in = orientation_pool(feat, "mean") if p4 else feat
        flat = T.reshape(head_in, (b, head_in.size // b))
        hidden = T.relu(linear_rows(flat, self.actor_fc1))
        logits = linear_rows(hidden, self.actor_fc2)

        head = self.variant.critic_head
        if head == "flatten":
            cfeat = T.reshape(feat, (b, feat.size // b))
        elif head == "gap":
            c = feat.shape[1]
            cfeat = T.reduce("mean", T.reshape(feat, (b, c, feat.size // (b * c))), axis=2)
        else:
            pooled = orientation_pool(feat, "mean") if p4 else feat
            prof = polar_profile_rows(pooled, self.sgpp_R, self.sgpp_A)
            cfeat = T.reshape(prof, (b, prof.size // b))
        chidden = T.relu(linear_rows(cfeat, self.critic_fc1))
        values = T.reshape(linear_rows(chidden, self.critic_fc2), (b,))
        return logits, values


def build_network(variant, cfg: Config, seed: int = 0) -> GlobalPolicyNetwork:
    return GlobalPolicyNetwork(resolve_variant(variant), cfg, seed=seed)


def actor_forward(net: GlobalPolicyNetwork, s: PolicyState) -> GoalLikelihoodMap:
    probs = T.softmax_flat(net.actor_logits(s))
    side = net.G_out
    return GoalLikelihoodMap(probs.data.reshape(side, side).astype(np.float64))


def critic_forward(net: GlobalPolicyNetwork, s: PolicyState) -> float:
    return float(net.critic_value(s).item())


def critic_features(net: GlobalPolicyNetwork, s: PolicyState) -> np.ndarray:
    return net.critic_feature_tensor(s).data.astype(np.float64).reshape(-1)


def critic_value_and_features(net: GlobalPolicyNetwork, s: PolicyState) -> tuple:
    """Value and head-input features off one shared-block pass."""
    feat = net.shared_block(net._state_tensor(s))
    xi = net._critic_feature(feat)
    hidden = T.relu(fully_connected(xi, net.critic_fc1))
    v = T.reshape(fully_connected(hidden, net.critic_fc2), ())
    return float(v.item()), xi.data.astype(np.float64).reshape(-1)


def sample_goal(goal_map: GoalLikelihoodMap, rng: np.random.Generator) -> tuple:
    """Draw a goal cell and return its centre in policy-state coordinates
    (the goal lattice upscaled by the fixed downscale factor)."""
    probs = goal_map.data.reshape(-1)
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    idx = min(idx, probs.size - 1)
    side = goal_map.data.shape[0]
    r, c = divmod(idx, side)
    half = (DOWNSCALE - 1) / 2.0
    return (r * DOWNSCALE + half, c * DOWNSCALE + half)


# ---- checkpoints ---------------------------------------------------------

def save_checkpoint(path, net: GlobalPolicyNetwork) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        tag = net.variant.tag.encode()
        fh.write(struct.pack("<I", len(tag)))
        fh.write(tag)
        h = net.net_hash.encode()
        fh.write(struct.pack("<I", len(h)))
        fh.write(h)
        params = net.parameters()
        fh.write(struct.pack("<I", len(params)))
        for _, p in params:
            T.save_tensor(fh, p.data)


def load_checkpoint(path, cfg: Config, expect_variant=None) -> GlobalPolicyNetwork:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a policy checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        tag = fh.read(n).decode()
        (n,) = struct.unpack("<I", fh.read(4))
        stored_hash = fh.read(n).decode()
        (count,) = struct.unpack("<I", fh.read(4))
        blocks = [T.load_tensor(fh) for _ in range(count)]

    if expect_variant is not None:
        want = resolve_variant(expect_variant).tag
        if want != tag:
            raise CheckpointError(f"checkpoint variant {tag} does not match requested {want}")
    net = build_network(tag, cfg)
    params = net.parameters()
    if len(params) != len(blocks):
        raise CheckpointError(f"checkpoint has {len(blocks)} tensors, network needs {len(params)} "
                              f"(stored net hash {stored_hash}, current {net.net_hash})")
    for (name, p), block in zip(params, blocks):
        if p.shape != block.shape:
            raise CheckpointError(f"{name}: checkpoint shape {block.shape} != network {p.shape} "
                                  f"(stored net hash {stored_hash}, current {net.net_hash})")
        p.data = block.astype(net.dtype)
    return net
