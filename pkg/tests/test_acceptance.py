"""Exit criteria at their stated scale; one PASS/FAIL line per criterion.

Run alone with ``pytest -m acceptance -s tests/test_acceptance.py``.
"""

import pytest

from maxent_market import cli
from maxent_market.verify import TITLES, Verifier, VerifyConfig

pytestmark = pytest.mark.acceptance

DETERMINISM_PATHS = 20_000


@pytest.fixture(scope="module")
def verifier():
    return Verifier(VerifyConfig())


def _record(lines, number, passed, title, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}{detail}"
    lines[number] = line
    print(line)


@pytest.mark.parametrize("number", sorted(TITLES))
def test_criterion(verifier, acceptance_lines, number):
    result = verifier.run(number)
    acceptance_lines[number] = result.line()
    print(result.line())
    for rep in result.reports:
        print(f"    {rep.name}: estimate={rep.estimate!r} ci={rep.ci} passed={rep.passed} ({rep.criterion})")
    assert result.error is None, result.error
    assert result.passed, [r.name for r in result.reports if not r.passed]


def test_criterion_14_determinism(tmp_path, acceptance_lines):
    roots = []
    for name in ("first", "second"):
        root = tmp_path / name
        code = cli.main(["--scenario", "full-verify", "--seed", "0", "--paths", str(DETERMINISM_PATHS), "--out", str(root)])
        assert code in (0, 2)
        roots.append(root)
    files = sorted(p.name for p in roots[0].iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json")
    other = sorted(p.name for p in roots[1].iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json")
    differing = [f for f in files if (roots[0] / f).read_bytes() != (roots[1] / f).read_bytes()]
    passed = files == other and bool(files) and not differing
    _record(acceptance_lines, 14, passed, "determinism of full-verify outputs", f" ({len(files)} data files compared)")
    assert files == other
    assert not differing, differing
