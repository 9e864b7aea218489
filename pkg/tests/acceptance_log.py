"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def report(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    LINES.append(line)
    print(line, flush=True)
