import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from echoforge.config import Config, update

SRC = Path(__file__).resolve().parents[1] / "src" / "echoforge"


def source_digest(*names: str) -> str:
    h = hashlib.sha1()
    for name in names:
        for p in sorted((SRC / name).rglob("*.py")) if (SRC / name).is_dir() else [SRC / name]:
            h.update(p.read_bytes())
    return h.hexdigest()[:12]


@pytest.fixture
def fast_cfg() -> Config:
    """Config with a capped ray budget for quick renders."""
    return update(Config(), {"rir": {"max_rays": 4000}, "render": {"duration_s": 3.0}})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cached_dir(request, key: str, build) -> Path:
    """Directory in the pytest cache, rebuilt when ``key`` changes."""
    root = Path(request.config.cache.mkdir("echoforge"))
    d = root / key
    stamp = d / ".complete"
    if not stamp.exists():
        import shutil

        shutil.rmtree(d, ignore_errors=True)
        d.mkdir(parents=True)
        build(d)
        stamp.write_text(json.dumps({"key": key}))
    return d


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as checks:`` records one PASS/FAIL line per criterion.

    Fill ``checks[name] = (ok, detail)``; the block asserts that every check holds.
    """
    import contextlib
    import time

    @contextlib.contextmanager
    def run(n: int, title: str):
        checks: dict[str, tuple[bool, str]] = {}
        t0 = time.perf_counter()
        try:
            yield checks
        except Exception as exc:
            line = f"criterion {n}: FAIL  {title}: error {type(exc).__name__}: {exc}"
            request.config.stash[ACCEPTANCE].append(line)
            print(line)
            raise
        ok = all(bool(v[0]) for v in checks.values())
        detail = "; ".join(f"{k} {'ok' if v[0] else 'FAILED'} ({v[1]})" for k, v in checks.items())
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title} [{time.perf_counter() - t0:.0f} s]: {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        failed = [k for k, v in checks.items() if not v[0]]
        assert not failed, f"criterion {n} failed checks: {failed}"

    return run
