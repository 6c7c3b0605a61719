from pathlib import Path

import pytest

from pfairdp.data import load_adult

ROOT = Path(__file__).resolve().parents[1]
ADULT_DIR = ROOT / "data" / "adult"


@pytest.fixture(scope="session")
def adult_dir() -> Path:
    if not (ADULT_DIR / "adult.data").exists():
        pytest.skip("Adult data not present under data/adult")
    return ADULT_DIR


@pytest.fixture(scope="session")
def adult_raw(adult_dir):
    return load_adult(adult_dir)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request, capsys):
    """Print one criterion line immediately and keep it for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
