#!/usr/bin/env python3
"""Controlled OOD augmentation: blocks of foreign requests plus interjections.

Augments the toy test split with p_ood_start = 0.2 and p_ood_cont = 0.4,
prints an augmented dialog with its labels, and checks the block-length
statistics against the geometric law they should follow.
"""

import numpy as np

from robusthcn.augment import (
    AugmentationConfig,
    augment_corpus,
    load_ood_pool,
    load_segment_pool,
    sample_ood_block,
)
from robusthcn.corpus import OodLabel
from robusthcn.seeding import stream
from robusthcn.toy import generate_foreign_dialogs, generate_toy_domain, segment_pool_text


def main():
    domain = generate_toy_domain(seed=7, n_dialogs=40, n_actions=9)
    foreign = generate_foreign_dialogs(seed=8, n_per_domain=30)
    pool = load_ood_pool(foreign)
    segments = load_segment_pool(segment_pool_text())
    print("OOD pool: %d foreign first-utterances, e.g." % len(pool.utterances))
    for utt in pool.utterances[:3]:
        print("   ", " ".join(utt))
    print("segment pool: %d interjections, e.g. %r\n"
          % (len(segments.interjections), " ".join(segments.interjections[0])))

    config = AugmentationConfig(p_ood_start=0.2, p_ood_cont=0.4, seed=13)
    augmented, stats = augment_corpus(domain.test, config, pool, segments)
    for line in stats.to_lines():
        print("  " + line)

    marked = next(d for d in augmented
                  if any(t.ood_label is OodLabel.TURN_OOD for t in d.turns))
    print("\naugmented dialog %d:" % marked.id)
    for turn in marked.turns:
        tag = {OodLabel.IND: "   ", OodLabel.TURN_OOD: "OOD",
               OodLabel.SEGMENT_OOD: "SEG"}[turn.ood_label]
        print("  [%s] usr: %s" % (tag, " ".join(turn.user_tokens)[:64]))
        print("        sys: %s" % turn.system_utterance[:64])

    # block lengths follow 1 + Geometric(1 - p_ood_cont): mean 1/(1 - 0.4)
    rng = stream(13, "demo-blocks")
    lengths = [len(sample_ood_block(rng, config, pool)) for _ in range(20_000)]
    print("\nblock length: empirical mean %.3f vs 1/(1-p_cont) = %.3f"
          % (np.mean(lengths), 1 / (1 - config.p_ood_cont)))
    counts = np.bincount(lengths)[1:6]
    for k, c in enumerate(counts, start=1):
        expected = 0.6 * 0.4 ** (k - 1)
        print("  P(L=%d): observed %.4f  geometric %.4f" % (k, c / len(lengths), expected))


if __name__ == "__main__":
    main()
