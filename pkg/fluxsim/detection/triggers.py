import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from fluxsim.detection.conditions import (
    metric_above,
    metric_at_least,
    metric_at_most,
    metric_below,
    metric_equals,
)

logger = logging.getLogger(__name__)

# Comparison operators usable in scenario assertions
default_conditions = {
    "below": metric_below,
    "above": metric_above,
    "at_most": metric_at_most,
    "at_least": metric_at_least,
    "equals": metric_equals,
}


@dataclass(frozen=True)
class AssertionOutcome:
    metric: str
    op: str
    expected: float
    actual: Optional[Any]
    passed: bool


def evaluate_conditions(summary: Dict[str, Any], conditions, condition_funcs=default_conditions) -> List[AssertionOutcome]:
    """
    Check each (metric, op, value) condition against the run summary.
    Returns one outcome per condition, in declaration order.
    """
    outcomes = []

    if not conditions:
        logger.debug("No assertions to evaluate")
        return outcomes

    for cond in conditions:
        func = condition_funcs.get(cond.op)
        if func is None:
            logger.warning(f"⚠️ Unknown assertion operator: {cond.op}")
            outcomes.append(AssertionOutcome(cond.metric, cond.op, cond.value, None, False))
            continue

        actual = summary.get(cond.metric)
        if actual is None:
            logger.warning(f"⚠️ Assertion on unknown or undefined metric: {cond.metric}")
            outcomes.append(AssertionOutcome(cond.metric, cond.op, cond.value, None, False))
            continue

        passed = bool(func(actual, cond.value))
        if passed:
            logger.debug(f"✅ {cond.metric}={actual} {cond.op} {cond.value}")
        else:
            logger.warning(f"❌ Assertion failed: {cond.metric}={actual} is not {cond.op} {cond.value}")
        outcomes.append(AssertionOutcome(cond.metric, cond.op, cond.value, actual, passed))

    return outcomes
