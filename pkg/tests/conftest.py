import pytest

CRITERIA = {
    1: "swap regret matches swap enumeration",
    2: "MWU external regret bound",
    3: "multi-scale deterministic bound",
    4: "hard-sequence expected length",
    5: "two-coin game statistics",
    6: "uncoupled dynamics reach a CE",
    7: "payoff query accounting",
    8: "communication protocol",
    9: "CE sparsification",
    10: "EFG partition and sampling",
    11: "EFG uncoupled dynamics reach an NFCE",
    12: "hard-sequence report determinism",
}
RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        RESULTS[number] = (bool(ok), detail)
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d} {CRITERIA[number]}: {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in CRITERIA.items():
        if number in RESULTS:
            ok, detail = RESULTS[number]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number:2d} {name}: {detail}")
        else:
            terminalreporter.write_line(f"---- {number:2d} {name}: not run")
