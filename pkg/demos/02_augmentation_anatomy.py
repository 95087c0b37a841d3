"""
Anatomy of multifold oversampling
=================================

Walks one thread through text normalization, influence scoring, and
contextual substitution, then balances a skewed event with the full
multifold bookkeeping (whole-set rounds plus a remainder round).
"""

import collections

# normalization maps URLs, mentions, and emoji onto placeholder keywords;
# keywords are never substituted during augmentation
from threadforge.preprocess import normalize_tweet

pre = normalize_tweet("BREAKING: the earth is flat http://t.co/x \U0001F602 @nasa")
print("tokens: ", pre.tokens)
print("keyword:", pre.keyword_mask)

# the influence score of a tweet is its token count minus its keyword
# count; zero-influence tweets are never selected by the nonrandom variant
from threadforge.data import BINARY, Label, Thread, Tweet, UserProfile
from threadforge.mos import influence_weights

user = UserProfile(0, 0, 0, 0, False)
tweets = [
    Tweet(1, "@USER HTTPURL", 0.0, None, user),
    Tweet(2, "the earth is flat", 10.0, 1, user),
    Tweet(3, "no way \U0001F602", 20.0, 1, user),
]
thread = Thread.build("demo", "event", Label(BINARY, "rumour"), tweets)
dist = influence_weights(thread)
print("\ninfluence weights:   ", dist.weights.tolist())
print("selection probability:", [round(p, 4) for p in dist.normalized.tolist()])

# an augmented copy substitutes tokens in about 20% of the tweets (at
# least one), keeps ids/timestamps/topology, and records its provenance
from threadforge.mos import AugmentationStrategy, augment_thread, thread_stream

strategy = AugmentationStrategy(kind="nonrandom", seed=42)
copy = augment_thread(thread, strategy, None, thread_stream(42, "demo", 1), fold_index=1)
print(f"\naugmented thread id: {copy.thread_id!r}")
print(f"provenance: kind={copy.provenance.kind}, parent={copy.provenance.parent_thread_id}")
for old, new in zip(thread.tweets, copy.tweets):
    marker = "*" if old.text != new.text else " "
    print(f" {marker} [{new.id}] {new.text}")

# balancing a whole dataset: per event, minority labels receive whole-set
# rounds (fold 1, 2, ...) until counts match the majority, then a partial
# remainder round; labels with zero originals stay at zero
from threadforge.mos import AugmentStats, oversample_dataset
from threadforge.synth import make_imbalanced

skewed = make_imbalanced(n_majority=30, n_minority=6, n_events=2, seed=0)
print("\nbefore:", skewed.label_counts())

stats = AugmentStats()
balanced = oversample_dataset(skewed, strategy, None, seed=42, stats=stats)
print("after: ", balanced.label_counts())
print(f"created {stats.threads_created} threads, "
      f"substituted {stats.tokens_substituted} tokens")

# fold indices record which round produced each augmented thread
folds = collections.Counter(
    t.provenance.fold_index
    for t in balanced.all_threads() if not t.provenance.is_original)
print("fold histogram:", dict(sorted(folds.items())))
