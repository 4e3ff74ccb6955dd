"""Shared registry for the acceptance suite's one-line-per-criterion summary."""

import collections

ACCEPTANCE = collections.OrderedDict()


def record_clause(criterion: str, clause: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((clause, bool(ok), detail))
    print(f"{criterion} [{clause}] {'PASS' if ok else 'FAIL'}: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        clauses = ACCEPTANCE[criterion]
        ok = all(c[1] for c in clauses)
        failed = [f"{name}: {detail}" for name, good, detail in clauses if not good]
        note = "; ".join(failed) if failed else f"{len(clauses)} clause(s) satisfied"
        terminalreporter.write_line(f"{criterion} {'PASS' if ok else 'FAIL'}  {note}")
