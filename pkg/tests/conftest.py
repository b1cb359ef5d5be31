from __future__ import annotations

import pytest

from rollout_cards import synth

# criterion number -> (passed, detail); filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def named():
    cache: dict[str, synth.NamedFixture] = {}

    def get(name: str) -> synth.NamedFixture:
        if name not in cache:
            cache[name] = synth.gen_named(name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def full_card():
    """Small, fully populated card with no failure buckets."""
    return synth.gen_card(synth.FixtureProfile(seed=7, runs=8, steps_per_run=(2, 5), worker_count=(1, 3)))


@pytest.fixture(scope="session")
def mixed_card():
    """Card whose runs land in every failure bucket."""
    mix = {"failed": 0.1, "errored": 0.2, "missing": 0.2, "unparseable": 0.1}
    return synth.gen_card(synth.FixtureProfile(seed=5, runs=20, steps_per_run=(1, 3), failure_mix=mix))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
