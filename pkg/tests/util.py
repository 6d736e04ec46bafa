"""Shared helpers for the test suite: tiny synthetic domains and fixed noise."""

import numpy as np

from robusthcn.corpus import ActionSet, ContextFeatures, TurnFeatures, Vocabulary
from robusthcn.models import Model, ModelConfig
from robusthcn.seeding import stream


class ReplayNoise:
    """Duck-typed rng that replays a fixed list of standard-normal draws.

    Makes train-mode VHCN losses deterministic functions of the
    parameters, which finite differences require.
    """

    def __init__(self, arrays):
        self.arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        self.i = 0

    def reset(self):
        self.i = 0
        return self

    def standard_normal(self, size):
        out = self.arrays[self.i]
        assert out.shape == (size,)
        self.i += 1
        return out


def tiny_vocab(n_words=10):
    return Vocabulary(["w%02d" % i for i in range(n_words)])


def tiny_actions(n_actions=4, fallback=0):
    return ActionSet(
        templates=tuple("action %d" % i for i in range(n_actions)),
        fallback_action_id=fallback,
    )


def tiny_turn(vocab, actions, tokens, target, prev=None, ctx_bits=(0, 1), api=0):
    f_turn = np.asarray(tokens, dtype=np.int64)
    prev_action = np.zeros(actions.size, dtype=np.float32)
    if prev is not None:
        prev_action[prev] = 1.0
    return TurnFeatures(
        f_turn=f_turn,
        bow_indices=np.unique(f_turn),
        f_ctx=ContextFeatures(slot_types=("s0", "s1"), slot_provided=tuple(ctx_bits),
                              api_returned=api),
        f_mask=np.ones(actions.size, dtype=np.float32),
        prev_action=prev_action,
        target=int(target),
    )


def two_turn_dialog(vocab, actions):
    return [
        tiny_turn(vocab, actions, [2, 5, 3], target=1, prev=None, ctx_bits=(1, 0)),
        tiny_turn(vocab, actions, [4, 4, 6, 2], target=3, prev=1, ctx_bits=(1, 1), api=1),
    ]


def tiny_model(variant, vocab, actions, dtype=np.float64, seed=0, **overrides):
    params = dict(embedding_size=6, dialog_hidden_size=8, predictor_hidden_size=8)
    if variant == "VHCN":
        params["latent_size"] = 3
    params.update(overrides)
    config = ModelConfig(variant=variant, **params)
    return Model(config, vocab, actions, n_context=3, rng=stream(seed, "tiny", variant),
                 dtype=dtype)
