"""Okapi BM25 over an in-memory list of documents."""
import math
import re
from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Optional, Sequence

# Lowercased runs of Unicode letters and digits
TOKEN_RE = re.compile(r'[^\W_]+')


def tokenize(text: str) -> List[str]:
    return TOKEN_RE.findall((text or '').lower())


class BM25Index:
    """
    Document statistics (df, avgdl) always cover the whole corpus, whatever
    subset a search is later restricted to. Immutable once built.
    """

    def __init__(self, documents: Sequence[str], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.term_freqs = [Counter(tokenize(doc)) for doc in documents]
        self.doc_lens = [sum(tf.values()) for tf in self.term_freqs]
        self.n = len(documents)
        self.avgdl = sum(self.doc_lens) / self.n if self.n else 0.0

        self.df: Counter = Counter()
        self.postings: Dict[str, List[int]] = defaultdict(list)
        for position, tf in enumerate(self.term_freqs):
            self.df.update(tf.keys())
            for term in tf:
                self.postings[term].append(position)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1 + (self.n - df + 0.5) / (df + 0.5))

    def score(self, query_tokens: Iterable[str], position: int) -> float:
        tf = self.term_freqs[position]
        dl = self.doc_lens[position]
        total = 0.0
        for term in query_tokens:
            freq = tf.get(term, 0)
            if not freq:
                continue
            denom = freq + self.k1 * (1 - self.b + self.b * dl / self.avgdl)
            total += self.idf(term) * freq * (self.k1 + 1) / denom
        return total

    def search(self, query_tokens: Sequence[str], candidates: Optional[Iterable[int]] = None) -> Dict[int, float]:
        """Scores for every document containing at least one query term."""
        matched = set()
        for term in set(query_tokens):
            matched.update(self.postings.get(term, ()))
        if candidates is not None:
            matched &= set(candidates)
        return {position: self.score(query_tokens, position) for position in matched}
