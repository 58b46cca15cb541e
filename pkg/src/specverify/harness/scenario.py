"""Synthetic acceptance scenarios with known ground truth."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class OracleScenario:
    """Mixture model for true per-token acceptance probabilities.

    Each draw picks one of ``levels`` with ``weights``; with
    ``granularity="step"`` the level holds for a whole drafted run, with
    ``"position"`` every position draws its own. Observed indicators are
    ``clip(p + noise * N(0, 1), 0, 1)`` independently for S and A; an
    infinite ``noise`` makes them uniform and independent of p.
    """

    levels: tuple = (0.05, 0.95)
    weights: tuple = (0.5, 0.5)
    noise: float = 0.0
    granularity: str = "step"
    draft_len: int = 5
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if levels.size == 0 or levels.shape != w.shape:
            raise ValueError("levels and weights must be non-empty and the same length")
        if np.any((levels < 0) | (levels > 1)):
            raise ValueError("levels must lie in [0, 1]")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        if not self.noise >= 0:
            raise ValueError("noise must be >= 0")
        if self.granularity not in ("step", "position"):
            raise ValueError("granularity must be 'step' or 'position'")
        if self.draft_len < 1:
            raise ValueError("draft_len must be >= 1")
        object.__setattr__(self, "levels", tuple(levels.tolist()))
        object.__setattr__(self, "weights", tuple(w.tolist()))
        object.__setattr__(self, "_cum", np.cumsum(w / w.sum()))

    @classmethod
    def from_dict(cls, d: dict) -> "OracleScenario":
        d = dict(d)
        if isinstance(d.get("noise"), str):
            d["noise"] = float(d["noise"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_cum", None)
        d["levels"], d["weights"] = list(self.levels), list(self.weights)
        if math.isinf(self.noise):
            d["noise"] = "inf"
        return d

    def draw(self, rng: np.random.Generator, draft_len: int | None = None):
        """One drafted run: arrays (true p, observed s, observed a)."""
        k = self.draft_len if draft_len is None else draft_len
        n_types = 1 if self.granularity == "step" else k
        idx = np.searchsorted(self._cum, rng.random(n_types), side="right")
        p = np.asarray(self.levels)[np.minimum(idx, len(self.levels) - 1)]
        if n_types == 1:
            p = np.full(k, p[0])
        if math.isinf(self.noise):
            s, a = rng.random(k), rng.random(k)
        elif self.noise == 0:
            s, a = p.copy(), p.copy()
        else:
            s = np.clip(p + self.noise * rng.standard_normal(k), 0.0, 1.0)
            a = np.clip(p + self.noise * rng.standard_normal(k), 0.0, 1.0)
        return p, s, a


def generate_oracle_scenario(params: dict | OracleScenario, seed: int, n_steps: int | None = None,
                             ) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Deterministic stream of (true p, s, a) runs; endless if ``n_steps`` is None."""
    scenario = params if isinstance(params, OracleScenario) else OracleScenario.from_dict(params)
    rng = np.random.default_rng(seed)
    i = 0
    while n_steps is None or i < n_steps:
        yield scenario.draw(rng)
        i += 1
