"""Marking strategies for the adaptive loop.

All three strategies are reasonable in the sense that the marked set
always contains every element holding the largest estimator value.  Ties
break by element id, so marking is a pure deterministic function of the
estimator field and the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("maximum", "doerfler", "equidistribution")


class MarkingError(Exception):
    pass


@dataclass(frozen=True)
class MarkConfig:
    strategy: str = "doerfler"
    theta: float = 0.5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise MarkingError(
                f"unknown strategy {self.strategy!r}; expected one of "
                f"{', '.join(STRATEGIES)}")
        if not 0.0 < self.theta <= 1.0:
            raise MarkingError(f"theta must lie in (0, 1], got {self.theta}")


@dataclass(frozen=True)
class MarkSet:
    """Marked element ids with the squared-estimator fraction they carry."""
    elements: np.ndarray
    fraction: float
    converged: bool = False


def _field_eta(field):
    return field.eta if hasattr(field, "eta") else np.asarray(field, dtype=float)


def mark(field, cfg: MarkConfig) -> MarkSet:
    """Select elements for refinement.

    maximum marks every element with eta_T >= theta * max eta;
    doerfler takes the shortest descending prefix carrying the fraction
    theta^2 of the total squared estimator; equidistribution marks
    elements above theta times the equidistributed level
    eta_global / sqrt(#elements).  An all-zero field marks nothing and
    reports convergence.
    """
    eta = _field_eta(field)
    if eta.size == 0 or float(eta.max()) == 0.0:
        return MarkSet(np.empty(0, dtype=np.int64), 0.0, converged=True)
    # scale by the largest value: squaring subnormal or huge estimators
    # would otherwise underflow/overflow and scramble the selection
    scaled = eta / eta.max()
    total2 = float(np.sum(scaled * scaled))
    if cfg.strategy == "maximum":
        chosen = np.nonzero(eta >= cfg.theta * eta.max())[0]
    elif cfg.strategy == "doerfler":
        eta2 = scaled * scaled
        order = np.lexsort((np.arange(eta.shape[0]), -eta2))
        csum = np.cumsum(eta2[order])
        take = int(np.searchsorted(csum, cfg.theta ** 2 * total2 * (1 - 1e-14))) + 1
        chosen = np.sort(order[:take])
    else:  # equidistribution
        level = cfg.theta * np.sqrt(total2 / eta.shape[0])
        chosen = np.nonzero(scaled >= level)[0]
    fraction = float(np.sum(scaled[chosen] ** 2) / total2)
    return MarkSet(chosen.astype(np.int64), fraction)


@dataclass(frozen=True)
class MarkingReport:
    """Result of validating a marked set against the estimator field."""
    ok: bool
    worst_ratio: float
    offender: int | None
    max_marked: float


def validate_marking(field, marks: MarkSet) -> MarkingReport:
    """Check the reasonableness condition in its strong form: no unmarked
    element may exceed the largest marked estimator value."""
    eta = _field_eta(field)
    if marks.elements.size == 0:
        ok = bool(np.all(eta == 0.0))
        worst = 0.0 if ok else np.inf
        offender = None if ok else int(np.argmax(eta))
        return MarkingReport(ok, worst, offender, 0.0)
    max_marked = float(eta[marks.elements].max())
    unmarked = np.setdiff1d(np.arange(eta.shape[0]), marks.elements,
                            assume_unique=False)
    if unmarked.size == 0:
        return MarkingReport(True, 0.0, None, max_marked)
    worst_id = unmarked[np.argmax(eta[unmarked])]
    worst = float(eta[worst_id])
    ratio = worst / max_marked if max_marked > 0 else np.inf
    if worst > max_marked:
        return MarkingReport(False, ratio, int(worst_id), max_marked)
    return MarkingReport(True, ratio, None, max_marked)
