"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, str] = {}


def record(number: int, ok: bool, title: str, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    RESULTS[number] = line
    print(line)
    return ok
