"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES = []


def record(num: int, ok, detail: str) -> bool:
    """``ok=None`` marks a skipped criterion."""
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"{status} criterion {num:>2}: {detail}"
    LINES.append(line)
    print(line)
    return ok
