import pytest

from fluxsim.core.errors import ValidationError
from fluxsim.core.registrar import Registrar, RegistrationResult


def test_register_and_resolve():
    reg = Registrar()
    assert reg.register("abcdefgh.com", "10.0.0.2", 0) is RegistrationResult.OK
    assert reg.resolve("abcdefgh.com", "bot-001", 5) == "10.0.0.2"
    assert reg.nx_log == []


def test_second_registration_keeps_first_owner():
    reg = Registrar()
    reg.register("abcdefgh.com", "10.0.0.2", 0)
    assert reg.register("abcdefgh.com", "10.0.0.3", 1) is RegistrationResult.ALREADY_REGISTERED
    assert reg.resolve("abcdefgh.com", "bot-001", 2) == "10.0.0.2"


def test_unregistered_domain_logs_nxdomain():
    reg = Registrar()
    assert reg.resolve("nothere.net", "bot-007", 42) is None
    assert len(reg.nx_log) == 1
    record = reg.nx_log[0]
    assert (record.time, record.querier, record.domain) == (42, "bot-007", "nothere.net")


def test_blacklist_beats_registration():
    reg = Registrar()
    reg.register("abcdefgh.com", "10.0.0.2", 0)
    assert reg.blacklist("abcdefgh.com") == 1
    assert reg.blacklist("abcdefgh.com") == 0
    assert reg.resolve("abcdefgh.com", "bot-001", 1) is None
    assert reg.domains_for("10.0.0.2") == []


def test_blacklisting_unknown_domain_removes_nothing():
    assert Registrar().blacklist("ghost.org") == 0


def test_takedown_removes_every_domain_of_a_server():
    reg = Registrar()
    reg.register("aaaaaaaa.com", "10.0.0.2", 0)
    reg.register("bbbbbbbb.com", "10.0.0.2", 0)
    reg.register("cccccccc.com", "10.0.0.3", 0)
    assert reg.takedown("10.0.0.2") == 2
    assert reg.resolve("aaaaaaaa.com", "bot-001", 1) is None
    assert reg.domains_for("10.0.0.3") == ["cccccccc.com"]


def test_nx_counts_per_querier():
    reg = Registrar()
    for _ in range(3):
        reg.resolve("missing.com", "bot-001", 0)
    reg.resolve("missing.com", "bot-002", 0)
    assert reg.nx_counts() == {"bot-001": 3, "bot-002": 1}


@pytest.mark.parametrize("domain", ["UPPER.com", "nodot", "a.com", "sp ace.com"])
def test_invalid_domains_are_rejected(domain):
    with pytest.raises(ValidationError):
        Registrar().register(domain, "10.0.0.2", 0)
