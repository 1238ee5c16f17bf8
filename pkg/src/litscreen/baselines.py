"""Published reference results that screening runs are compared against.

The packaged table records, for each earlier system, the operating point
it reported on the same annotated collection.  Only the (precision,
recall) pair is authoritative; comparisons recompute F from it, which
rounds to the published F in every case (the table keeps the published
value too, as a consistency check).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .evaluation import error_rate_reduction, f_measure

__all__ = ["Baseline", "load_baselines", "compare_to_baseline"]


@dataclass(frozen=True)
class Baseline:
    name: str
    system: str
    source: str
    dataset: str
    precision: float
    recall: float
    reported_f: float
    note: str = ""

    @property
    def f_measure(self) -> float:
        """F recomputed from the reported precision/recall pair."""
        return f_measure(self.precision, self.recall)


def load_baselines() -> dict[str, Baseline]:
    """The packaged baseline table, keyed by short name."""
    text = resources.files("litscreen").joinpath("data/baselines.json").read_text()
    data = json.loads(text)
    if data.get("format_version") != 1:
        raise ValueError(f"unsupported baselines format {data.get('format_version')!r}")
    table = {}
    for row in data["baselines"]:
        baseline = Baseline(**row)
        if baseline.name in table:
            raise ValueError(f"duplicate baseline name {baseline.name!r}")
        table[baseline.name] = baseline
    return table


def compare_to_baseline(f_new: float, baseline: Baseline) -> dict:
    """Absolute and relative F-measure change versus one published result."""
    f_base = baseline.f_measure
    return {
        "baseline": baseline.name,
        "baseline_f": f_base,
        "f_measure": float(f_new),
        "absolute_gain": float(f_new) - f_base,
        "error_rate_reduction": error_rate_reduction(f_base, float(f_new)),
    }
