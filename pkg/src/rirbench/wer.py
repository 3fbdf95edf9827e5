"""Word error rate via minimal edit-distance alignment."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ValidationError

_KEEP = re.compile(r"[^a-z0-9' ]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation except apostrophes, split on whitespace."""
    cleaned = _KEEP.sub(" ", text.lower())
    return cleaned.split()


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_length


def wer(reference, hypothesis) -> WerResult:
    """Align hypothesis against reference with unit edit costs.

    Counts come from one optimal alignment; when several are optimal the
    backtrace prefers substitution over insertion over deletion.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ValidationError("reference must be non-empty")

    R, H = len(ref), len(hyp)
    dp = [[0] * (H + 1) for _ in range(R + 1)]
    for i in range(1, R + 1):
        dp[i][0] = i
    for j in range(1, H + 1):
        dp[0][j] = j
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            if ref[i - 1] == hyp[j - 1]:
                dp[i][j] = dp[i - 1][j - 1]
            else:
                dp[i][j] = 1 + min(dp[i - 1][j - 1], dp[i][j - 1], dp[i - 1][j])

    subs = dels = ins = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i][j] == dp[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerResult(subs, dels, ins, R)
