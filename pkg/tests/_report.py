"""Collects one line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number, passed, text):
    LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {text}"
    print(LINES[number])
    return passed
