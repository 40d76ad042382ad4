import math


def regularity_flag(score, threshold):
    """Near-constant gaps between contacts look like a beacon."""
    return score is not None and score < threshold


def persistence_flag(score, threshold):
    return score > threshold


def nxdomain_flag(rate, threshold):
    return rate > threshold


def metric_below(value, threshold):
    try:
        return float(value) < threshold
    except (TypeError, ValueError):
        return False


def metric_above(value, threshold):
    try:
        return float(value) > threshold
    except (TypeError, ValueError):
        return False


def metric_at_most(value, threshold):
    try:
        return float(value) <= threshold
    except (TypeError, ValueError):
        return False


def metric_at_least(value, threshold):
    try:
        return float(value) >= threshold
    except (TypeError, ValueError):
        return False


def metric_equals(value, threshold):
    try:
        return math.isclose(float(value), threshold, rel_tol=1e-9, abs_tol=1e-9)
    except (TypeError, ValueError):
        return False
