import pytest

_VERDICTS = []


class Verdicts:
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(self, criterion: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        _VERDICTS.append(line)
        print(line)


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def liouville_literal():
    """The Liouville-style constant (a_{k+1} = q_k^k) written out to 300 decimal digits."""
    from decimal import Decimal, localcontext

    from ubiquity.systems import convergents_from_terms, parse_irrational

    ps, qs = convergents_from_terms(parse_irrational("liouville").terms(8))
    with localcontext() as ctx:
        ctx.prec = 320
        text = str(Decimal(ps[-1]) / Decimal(qs[-1]))
    return {"literal": text[:302]}
