"""Budget-constrained binary treatment assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rdrp.errors import AssumptionViolationError, InvalidArgumentError, SizeLimitError

BRUTE_FORCE_LIMIT = 22
# absorbs float rounding in summed costs, e.g. 0.1 + 0.2 against a budget of 0.3
BUDGET_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class AllocationInstance:
    tau_r: np.ndarray
    tau_c: np.ndarray
    budget: float

    def __post_init__(self):
        tau_r = np.asarray(self.tau_r, dtype=np.float64).ravel()
        tau_c = np.asarray(self.tau_c, dtype=np.float64).ravel()
        if tau_r.shape != tau_c.shape:
            raise InvalidArgumentError("tau_r and tau_c must have the same length")
        if not self.budget >= 0:
            raise InvalidArgumentError(f"budget must be non-negative, got {self.budget}")
        object.__setattr__(self, "tau_r", tau_r)
        object.__setattr__(self, "tau_c", tau_c)
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def size(self) -> int:
        return self.tau_r.size

    def check_positive(self) -> None:
        if (self.tau_r <= 0).any() or (self.tau_c <= 0).any():
            raise AssumptionViolationError("every revenue and cost uplift must be positive")


@dataclass(frozen=True, eq=False)
class Allocation:
    z: np.ndarray
    total_revenue: float
    total_cost: float


def _limit(budget: float) -> float:
    return budget + BUDGET_RTOL * max(1.0, budget)


def _allocation(instance: AllocationInstance, z: np.ndarray) -> Allocation:
    z = z.astype(np.int8)
    return Allocation(
        z=z,
        total_revenue=float(instance.tau_r @ z),
        total_cost=float(instance.tau_c @ z),
    )


def greedy_allocate(instance: AllocationInstance, scores=None) -> Allocation:
    """Treat individuals in descending ROI order until the next one overflows the budget.

    ROI is ``tau_r / tau_c`` unless ``scores`` (e.g. predicted ROI) supply the
    ranking. Ties go to the lower index. The selection is always a prefix of
    the ranking: the scan stops at the first individual that does not fit.
    """
    instance.check_positive()
    if scores is None:
        scores = instance.tau_r / instance.tau_c
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != instance.tau_r.shape:
        raise InvalidArgumentError("scores must align with the instance")
    order = np.lexsort((np.arange(scores.size), -scores))
    spent = np.cumsum(instance.tau_c[order])
    n_take = int(np.searchsorted(spent > _limit(instance.budget), True))
    z = np.zeros(instance.size, dtype=np.int8)
    z[order[:n_take]] = 1
    return _allocation(instance, z)


def brute_force_allocate(instance: AllocationInstance) -> Allocation:
    """Exact optimum by enumerating all subsets; ties go to the lexicographically smallest z."""
    instance.check_positive()
    m = instance.size
    if m > BRUTE_FORCE_LIMIT:
        raise SizeLimitError(f"brute force supports at most {BRUTE_FORCE_LIMIT} individuals, got {m}")
    # bit (m - 1 - i) of the mask is z_i, so ascending masks are lexicographic in z
    shifts = np.arange(m - 1, -1, -1, dtype=np.int64)
    best_mask, best_revenue = 0, 0.0
    chunk = 1 << 16
    limit = _limit(instance.budget)
    for start in range(0, 1 << m, chunk):
        masks = np.arange(start, min(start + chunk, 1 << m), dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(np.float64)
        revenue = bits @ instance.tau_r
        feasible = bits @ instance.tau_c <= limit
        revenue = np.where(feasible, revenue, -np.inf)
        i = int(np.argmax(revenue))
        if revenue[i] > best_revenue:
            best_mask, best_revenue = int(masks[i]), float(revenue[i])
    z = np.array([(best_mask >> int(s)) & 1 for s in shifts], dtype=np.int8)
    return _allocation(instance, z)
