"""Toy corpora and synthetic eye-tracking data for tests, demos and benchmarks."""
from __future__ import annotations

import math

import numpy as np

from .corpus import EyeTrackRecord

_CONS = "bcdfghjklmnprstvwz"
_VOW = "aeiou"

FUNCTION_WORDS = {
    "DET": (("the", 0.7), ("a", 0.3)),
    "ADP": (("of", 0.5), ("in", 0.3), ("to", 0.2)),
    "CONJ": (("and", 1.0),),
    "PRON": (("it", 0.6), ("he", 0.4)),
}


def _pseudo_words(n, rng, min_len, taken):
    """``n`` distinct pronounceable strings whose length grows with rank."""
    out = []
    while len(out) < n:
        r = len(out)
        length = min_len + int(math.log2(r + 1))
        w = "".join(
            (_CONS if k % 2 == 0 else _VOW)[rng.integers(0, 5 if k % 2 else len(_CONS))]
            for k in range(length)
        )
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


class TemplateLanguage:
    """Sentences ``DET [ADJ] NOUN VERB DET [ADJ] NOUN [ADP DET NOUN] [CONJ PRON VERB]``.

    Function words are short, frequent and predictable from their slot;
    content words are drawn from Zipfian lexicons whose rarer members are
    longer, so frequency and length are confounded as in natural text.

    With ``coherence`` > 0 each content word has a few preferred successors
    per tag (selectional preferences: a subject favours some verbs, a verb
    some objects); the next content word in the sentence comes from that
    list with probability ``coherence``. Content words then carry
    information about what follows, as they do in real text.
    """

    def __init__(self, seed=0, n_nouns=200, n_verbs=80, n_adjs=60, zipf=1.1,
                 p_adj=0.4, p_pp=0.5, p_clause=0.3, coherence=0.0, n_preferred=3):
        self.p_adj, self.p_pp, self.p_clause = p_adj, p_pp, p_clause
        self.coherence = coherence
        rng = np.random.default_rng(seed)
        taken = {w for ws in FUNCTION_WORDS.values() for w, _ in ws}
        self.lexicon = {
            "NOUN": _pseudo_words(n_nouns, rng, 3, taken),
            "VERB": _pseudo_words(n_verbs, rng, 3, taken),
            "ADJ": _pseudo_words(n_adjs, rng, 4, taken),
        }
        self.weights = {}
        for tag, words in self.lexicon.items():
            w = 1.0 / np.arange(1, len(words) + 1) ** zipf
            self.weights[tag] = w / w.sum()
        self.preferred = {}
        if coherence > 0:
            for words in self.lexicon.values():
                for word in words:
                    self.preferred[word] = {
                        tag: [self.lexicon[tag][k] for k in rng.choice(
                            len(self.lexicon[tag]), size=n_preferred, p=self.weights[tag])]
                        for tag in self.lexicon
                    }

    def _draw(self, tag, rng, prev=None):
        if tag in FUNCTION_WORDS:
            words, probs = zip(*FUNCTION_WORDS[tag])
            return words[rng.choice(len(words), p=probs)]
        if prev is not None and self.coherence > 0 and rng.random() < self.coherence:
            options = self.preferred[prev][tag]
            return options[rng.integers(len(options))]
        return self.lexicon[tag][rng.choice(len(self.lexicon[tag]), p=self.weights[tag])]

    def sentence(self, rng):
        tags = ["DET"]
        if rng.random() < self.p_adj:
            tags.append("ADJ")
        tags += ["NOUN", "VERB", "DET"]
        if rng.random() < self.p_adj:
            tags.append("ADJ")
        tags.append("NOUN")
        if rng.random() < self.p_pp:
            tags += ["ADP", "DET", "NOUN"]
        if rng.random() < self.p_clause:
            tags += ["CONJ", "PRON", "VERB"]
        out, prev = [], None
        for t in tags:
            w = self._draw(t, rng, prev)
            if t in self.lexicon:
                prev = w
            out.append((w, t))
        return out

    def generate(self, n_tokens, rng):
        """``(words, tags)`` with at least ``n_tokens`` entries, cut to exactly ``n_tokens``."""
        words, tags = [], []
        while len(words) < n_tokens:
            for w, t in self.sentence(rng):
                words.append(w)
                tags.append(t)
        return words[:n_tokens], tags[:n_tokens]


# Predictable function words, informative content words: the setting the
# toy experiments and the demo pipeline use.
TOY_WORLD = {"p_pp": 0.9, "p_clause": 0.1, "coherence": 0.7}


def toy_language(seed=0, **overrides):
    return TemplateLanguage(seed, **{**TOY_WORLD, **overrides})


def uniform_tokens(n_tokens, n_types, rng):
    """I.i.d. uniform symbols: nothing is predictable, so every skip costs information."""
    return [f"s{k}" for k in rng.integers(0, n_types, size=n_tokens)]


def cycle_tokens(n_tokens, period=5):
    return [f"c{k % period}" for k in range(n_tokens)]


def synthetic_eyetrack(docs, rng, vocab=None, n_readers=10, missing_rate=0.02,
                       dependence=-0.8, base_ms=200.0):
    """Readers whose skipping depends on length, frequency and the previous decision.

    ``docs`` is a list of ``(doc_id, words, tags)``. Fixation logits rise
    with word length and fall with log frequency; ``dependence`` is added
    when the reader fixated the previous word (negative values reproduce the
    human pattern that a fixation makes the next fixation less likely).
    First-pass durations follow a linear function of the standard predictors
    plus noise.
    """
    counts = {}
    for _, words, _ in docs:
        for w in words:
            counts[w] = counts.get(w, 0) + 1
    total = sum(counts.values())
    records = []
    for doc_id, words, tags in docs:
        prev = np.zeros(n_readers, dtype=bool)
        sent_pos = 0
        for k, (w, t) in enumerate(zip(words, tags)):
            logf = math.log(counts[w] / total)
            logit = -1.5 + 0.6 * len(w) - 0.25 * (logf + 6.0) + dependence * prev
            fix = rng.random(n_readers) < 1.0 / (1.0 + np.exp(-logit))
            miss = rng.random(n_readers) < missing_rate
            indicators = [None if m else int(f) for f, m in zip(fix, miss)]
            prev = fix
            dur = base_ms + 12.0 * len(w) - 5.0 * logf + rng.normal(0.0, 30.0)
            launch = float(rng.integers(1, 12))
            landing = float(rng.integers(0, len(w) + 1))
            records.append(
                EyeTrackRecord(
                    doc_id=str(doc_id), token_idx=k, word=w, fixations=indicators,
                    first_pass_ms=round(max(dur, 50.0), 1), pos_tag=t,
                    launch_dist=launch, landing_pos=landing, sent_pos=float(sent_pos),
                )
            )
            sent_pos = 0 if t == "VERB" and rng.random() < 0.3 else sent_pos + 1
    return records
