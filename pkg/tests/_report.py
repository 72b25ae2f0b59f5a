"""Registry for acceptance-criterion result lines.

test_acceptance.py appends one line per criterion; conftest.py prints the
block in the terminal summary so the verdicts survive output capturing.
"""

LINES: list[str] = []


def record(num: int, status: str, name: str, detail: str) -> str:
    line = f"criterion {num:2d} {status:4s} {name}: {detail}"
    LINES.append(line)
    print(line, flush=True)
    return line
