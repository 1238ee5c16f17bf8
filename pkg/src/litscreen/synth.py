"""Seeded synthetic corpora with controllable class balance and difficulty.

Each rated criterion value plants dedicated marker tokens in the article
text; per-criterion ``signal`` is the probability that the planted markers
reflect the true rating rather than a random other value.  At signal 1.0
the text determines every rating exactly, so a bag-of-words learner can in
principle reach perfect accuracy.  Markers sit at the front of the title
and abstract so they survive front-keeping truncation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .corpus import (
    CRITERIA,
    Article,
    Corpus,
    CorpusError,
    CriteriaSpec,
    CriterionRatings,
    Format,
    Purpose,
    TriState,
    default_positive_spec,
)

__all__ = ["SynthConfig", "generate_synthetic"]

# Rated values per criterion, in code order (code = index into these lists).
_RATED: dict[str, list] = {
    "format": [Format.ORIGINAL, Format.REVIEW, Format.CASE_REPORT,
               Format.GENERAL_MISC, Format.BLANK],
    "hhc": [TriState.TRUE, TriState.FALSE],
    "purpose": [Purpose.TREATMENT, Purpose.DIAGNOSIS, Purpose.PROGNOSIS,
                Purpose.ETIOLOGY, Purpose.COSTS_ECONOMICS, Purpose.PREDICTION,
                Purpose.QUALITATIVE, Purpose.OTHER],
    "rigor": [TriState.TRUE, TriState.FALSE],
}

# Background distribution negatives are drawn from (before rejection).
_BACKGROUND: dict[str, list[float]] = {
    "format": [0.55, 0.18, 0.12, 0.10, 0.05],
    "hhc": [0.80, 0.20],
    "purpose": [0.35, 0.12, 0.10, 0.10, 0.05, 0.08, 0.08, 0.12],
    "rigor": [0.45, 0.55],
}

_UNRATED = -1  # code for "annotation never reached this criterion"
_STOP_FORMAT_CODE = _RATED["format"].index(Format.GENERAL_MISC)

_FILLER = (
    "study patients methods results analysis clinical data group outcomes "
    "effect intervention baseline measured compared hospital care disease "
    "sample period reported significant association risk response months "
    "evaluated observed primary secondary participants population follow "
    "assessment protocol design criteria findings evidence measure record "
    "screening survey total mean change score scale difference adults"
).split()

_PT_TAG_PROB = 0.25


def _marker_tokens(criterion: str, code: int) -> list[str]:
    value = _RATED[criterion][code].value.lower()
    return [f"{criterion}sig{value}", f"{criterion}cue{value}"]


@dataclass(frozen=True)
class SynthConfig:
    """Shape of a generated corpus.

    ``size`` articles total, with ``round(size / (1 + neg_per_pos))``
    positives under ``positive_spec`` and the rest negatives drawn from a
    fixed background distribution (rejecting accidental positives).
    """

    size: int
    neg_per_pos: float = 32.0
    signal: float | Mapping[str, float] = 1.0
    seed: int = 0
    positive_spec: CriteriaSpec | None = None

    def signal_for(self, criterion: str) -> float:
        if isinstance(self.signal, Mapping):
            unknown = set(self.signal) - set(CRITERIA)
            if unknown:
                raise CorpusError(f"unknown criteria in signal map: {sorted(unknown)}")
            value = float(self.signal.get(criterion, 1.0))
        else:
            value = float(self.signal)
        if not 0.0 <= value <= 1.0:
            raise CorpusError(f"signal for {criterion} must lie in [0, 1], got {value}")
        return value

    def __post_init__(self) -> None:
        if self.size < 1:
            raise CorpusError(f"size must be positive, got {self.size}")
        if self.neg_per_pos < 0:
            raise CorpusError(f"neg_per_pos must be >= 0, got {self.neg_per_pos}")
        for criterion in CRITERIA:
            self.signal_for(criterion)


def _accept_codes(spec: CriteriaSpec, criterion: str) -> tuple[np.ndarray, bool]:
    """Accepted rated-value codes plus whether unrated is accepted."""
    accept = spec.accept_set(criterion)
    codes = [i for i, v in enumerate(_RATED[criterion]) if v in accept]
    unrated_ok = any(v.value == "unrated" for v in accept)
    return np.array(codes, dtype=np.int64), unrated_ok


def _spec_mask(spec: CriteriaSpec, codes: dict[str, np.ndarray]) -> np.ndarray:
    """Boolean mask of rows whose code vector satisfies the conjunction."""
    mask = np.ones(len(codes["format"]), dtype=bool)
    for criterion in CRITERIA:
        accepted, unrated_ok = _accept_codes(spec, criterion)
        col = codes[criterion]
        ok = np.isin(col, accepted)
        if unrated_ok:
            ok |= col == _UNRATED
        mask &= ok
    return mask


def _draw_positive_codes(
    spec: CriteriaSpec, n: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    codes: dict[str, np.ndarray] = {}
    downstream_rated_needed = any(
        not _accept_codes(spec, c)[1] for c in CRITERIA[1:]
    )
    fmt_codes, _ = _accept_codes(spec, "format")
    if downstream_rated_needed:
        fmt_codes = fmt_codes[fmt_codes != _STOP_FORMAT_CODE]
    if fmt_codes.size == 0:
        raise CorpusError(
            "infeasible positive spec: no format value admits the required "
            "downstream ratings"
        )
    codes["format"] = fmt_codes[rng.integers(0, fmt_codes.size, size=n)]
    stopped = codes["format"] == _STOP_FORMAT_CODE
    for criterion in CRITERIA[1:]:
        rated, unrated_ok = _accept_codes(spec, criterion)
        if rated.size == 0:
            if not unrated_ok:
                raise CorpusError(f"infeasible positive spec for {criterion}")
            col = np.full(n, _UNRATED, dtype=np.int64)
        else:
            col = rated[rng.integers(0, rated.size, size=n)]
            col[stopped] = _UNRATED
        codes[criterion] = col
    return codes


def _draw_negative_codes(
    spec: CriteriaSpec, n: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    if n == 0:
        return {c: np.zeros(0, dtype=np.int64) for c in CRITERIA}
    kept: list[dict[str, np.ndarray]] = []
    got = 0
    while got < n:
        m = max(int((n - got) * 1.2) + 16, 32)
        batch = {
            c: rng.choice(len(_RATED[c]), size=m, p=_BACKGROUND[c]).astype(np.int64)
            for c in CRITERIA
        }
        stopped = batch["format"] == _STOP_FORMAT_CODE
        for criterion in CRITERIA[1:]:
            batch[criterion][stopped] = _UNRATED
        keep = ~_spec_mask(spec, batch)
        take = min(int(keep.sum()), n - got)
        idx = np.flatnonzero(keep)[:take]
        kept.append({c: batch[c][idx] for c in CRITERIA})
        got += take
    return {c: np.concatenate([chunk[c] for chunk in kept]) for c in CRITERIA}


def _noisy_display_codes(
    true_codes: np.ndarray, criterion: str, signal: float, rng: np.random.Generator
) -> np.ndarray:
    """Marker value per article: the truth with prob ``signal``, else another
    rated value of the same criterion.  Unrated rows stay unrated."""
    shown = true_codes.copy()
    k = len(_RATED[criterion])
    rated = true_codes != _UNRATED
    wrong = rated & (rng.random(true_codes.size) >= signal)
    if wrong.any() and k > 1:
        offsets = rng.integers(1, k, size=int(wrong.sum()))
        shown[wrong] = (true_codes[wrong] + offsets) % k
    return shown


def generate_synthetic(config: SynthConfig) -> Corpus:
    """Build a deterministic corpus from ``config`` (same config, same bytes)."""
    spec = config.positive_spec or default_positive_spec()
    n_pos = int(round(config.size / (1.0 + config.neg_per_pos)))
    n_neg = config.size - n_pos
    if n_pos < 1:
        raise CorpusError(
            f"infeasible config: size {config.size} at ratio {config.neg_per_pos} "
            f"yields zero positives"
        )
    rng = np.random.default_rng(config.seed)

    pos_codes = _draw_positive_codes(spec, n_pos, rng)
    neg_codes = _draw_negative_codes(spec, n_neg, rng)
    codes = {c: np.concatenate([pos_codes[c], neg_codes[c]]) for c in CRITERIA}
    order = rng.permutation(config.size)
    codes = {c: codes[c][order] for c in CRITERIA}

    shown = {
        c: _noisy_display_codes(codes[c], c, config.signal_for(c), rng)
        for c in CRITERIA
    }
    title_fill = rng.integers(0, len(_FILLER), size=(config.size, 3))
    abstract_len = rng.integers(10, 61, size=config.size)
    abstract_fill = rng.integers(0, len(_FILLER), size=(config.size, 60))
    has_tag = rng.random(config.size) < _PT_TAG_PROB

    articles = []
    for i in range(config.size):
        title_tokens = [_FILLER[j] for j in title_fill[i]]
        for criterion in ("format", "hhc"):
            if shown[criterion][i] != _UNRATED:
                title_tokens += _marker_tokens(criterion, shown[criterion][i])
        abstract_tokens = []
        for criterion in ("purpose", "rigor"):
            if shown[criterion][i] != _UNRATED:
                abstract_tokens += _marker_tokens(criterion, shown[criterion][i])
        abstract_tokens += [_FILLER[j] for j in abstract_fill[i, : abstract_len[i]]]
        tags: tuple[str, ...] = ()
        if has_tag[i]:
            if codes["rigor"][i] != _UNRATED:
                value = _RATED["rigor"][codes["rigor"][i]].value.lower()
                tags = (f"synthtype ptrigor{value}",)
            else:
                value = _RATED["format"][codes["format"][i]].value.lower()
                tags = (f"synthtype ptformat{value}",)
        ratings = CriterionRatings(
            format=(Format.UNRATED if codes["format"][i] == _UNRATED
                    else _RATED["format"][codes["format"][i]]),
            hhc=(TriState.UNRATED if codes["hhc"][i] == _UNRATED
                 else _RATED["hhc"][codes["hhc"][i]]),
            purpose=(Purpose.UNRATED if codes["purpose"][i] == _UNRATED
                     else _RATED["purpose"][codes["purpose"][i]]),
            rigor=(TriState.UNRATED if codes["rigor"][i] == _UNRATED
                   else _RATED["rigor"][codes["rigor"][i]]),
        )
        articles.append(
            Article(
                id=f"S{i + 1:07d}",
                title=" ".join(title_tokens),
                abstract=" ".join(abstract_tokens),
                pt_tags=tags,
                ratings=ratings,
            )
        )
    provenance = (
        f"synthetic(size={config.size}, neg_per_pos={config.neg_per_pos}, "
        f"seed={config.seed})"
    )
    return Corpus(articles=tuple(articles), provenance=provenance)
