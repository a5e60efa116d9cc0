"""Shared store for per-criterion verdicts, printed at the end of the session."""

RESULTS: dict[str, tuple[bool, str]] = {}


def record(key: str, ok: bool, line: str) -> bool:
    RESULTS[key] = (bool(ok), line)
    print(f"[{'PASS' if ok else 'FAIL'}] {key} {line}")
    return bool(ok)
