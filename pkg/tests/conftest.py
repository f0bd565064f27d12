import random
from datetime import datetime, timedelta, timezone

import pytest

from dsrauth.credentials import IssuerKey, issue_bundle

NOW = datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc)
VALIDITY = (NOW - timedelta(days=30), NOW + timedelta(days=365))

PERSON = {
    "pid.given_name": "Erika",
    "pid.family_name": "MUSTERMANN",
    "pid.birth_date": "12.08.1991",
    "pid.unique_id": "DE-T22000129",
    "pid.address": "Heidestrasse 17, 51147 Köln",
    "pid.email": "erika@example.org",
    "pid.phone": "+49 170 1234567",
}


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def issuer_key():
    return IssuerKey.from_seed("issuer-test", bytes(range(32)))


@pytest.fixture
def bundle(issuer_key, rng):
    return issue_bundle(PERSON, PERSON.keys(), VALIDITY, issuer_key, rng.randbytes)


@pytest.fixture
def nonce(rng):
    return rng.randbytes(16)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.lines():
            terminalreporter.write_line(line)
