import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from elfbuild import ElfSpec, Sec, Sym, build, words  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

# foo@0x1000 = {BX lr}; bar@0x1004 = {BL foo; BX lr};
# main@0x100C = {BL foo; BL bar; BX lr}
THREE_FN_WORDS = (0xE12FFF1E, 0xEBFFFFFD, 0xE12FFF1E, 0xEBFFFFFB, 0xEBFFFFFB, 0xE12FFF1E)
FOO, BAR, MAIN = 0x1000, 0x1004, 0x100C


def three_function_elf(symbols=True, **kw) -> bytes:
    syms = [Sym("foo", FOO), Sym("bar", BAR), Sym("main", MAIN)] if symbols else []
    return build(ElfSpec([Sec(".text", 0x1000, words(*THREE_FN_WORDS))], entry=MAIN, symbols=syms, **kw))


@pytest.fixture
def three_fn_bytes():
    return three_function_elf()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# acceptance results, printed once at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
