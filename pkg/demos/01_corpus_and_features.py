#!/usr/bin/env python3
"""Corpus walkthrough: transcripts, vocabulary, action templates, turn features.

Generates a small synthetic restaurant corpus, prints one dialog in the
transcript format, and shows every feature the models consume.
"""

from robusthcn.corpus import (
    assign_actions,
    build_vocabulary,
    delexicalize,
    extract_action_set,
    featurize_dialog,
    parse_dialogs,
    write_dialogs,
)
from robusthcn.toy import generate_toy_domain


def main():
    domain = generate_toy_domain(seed=7, n_dialogs=40, n_actions=9)
    print("generated %d train / %d dev / %d test dialogs\n"
          % (len(domain.train), len(domain.dev), len(domain.test)))

    text = write_dialogs(domain.train[:1])
    print("one dialog in the transcript format:")
    print(text)
    assert write_dialogs(parse_dialogs(text)) == text
    print("write(parse(write(...))) reproduces the file byte for byte\n")

    vocab = build_vocabulary([domain.train, domain.dev, domain.test])
    print("unified vocabulary: %d tokens (index 0 = %r, index 1 = %r)"
          % (len(vocab), vocab.itos[0], vocab.itos[1]))

    sample = "north star is a nice restaurant in the north of town serving thai food"
    print("\ndelexicalization (longest match wins):")
    print("   ", sample)
    print(" ->", delexicalize(sample, domain.lexicon))

    actions = extract_action_set(domain.train + domain.dev + domain.test, domain.lexicon)
    print("\naction inventory (%d templates, fallback id %d):"
          % (actions.size, actions.fallback_action_id))
    for i, template in enumerate(actions.templates):
        marker = " <- fallback" if i == actions.fallback_action_id else ""
        print("  %2d  %s%s" % (i, template[:70], marker))

    dialog = assign_actions(domain.train[:1], actions, domain.lexicon)[0]
    features = featurize_dialog(dialog, vocab, actions, domain.lexicon)
    print("\nper-turn features of the dialog above:")
    for i, (turn, f) in enumerate(zip(dialog.turns, features)):
        print("  turn %d: user=%r" % (i, " ".join(turn.user_tokens)[:44]))
        print("          f_turn=%s  bow=%d ones  ctx=%s  api=%d  target=%d"
              % (f.f_turn.tolist(), len(f.bow_indices),
                 "".join(str(b) for b in f.f_ctx.slot_provided),
                 f.f_ctx.api_returned, f.target))


if __name__ == "__main__":
    main()
