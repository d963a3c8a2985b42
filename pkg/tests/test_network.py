import pytest

from qrsim.errors import ValidationError
from qrsim.machine import MASTER_CLOCK, Port, make_buffer
from qrsim.network import (
    Collection, completion, compose, composable, composition_violations, forbidden, free,
    is_closed, is_suitable, make_config, ports_of, scheduler_of,
)
from qrsim.protocols import ports, table_machine

P = Port.parse


def noop(s, i):
    return None


def machine(name, *texts):
    return table_machine(name, texts, ["f"], ["f"], noop)


def two_party():
    return Collection([machine("A", "in?", "net!"), machine("B", "net?", "out!")])


def texts(ps):
    return {p.text for p in ps}


def test_ports_of_examples():
    assert texts(ports_of(two_party())) == {"in?", "net!", "net?", "out!"}
    assert ports_of(Collection()) == set()
    assert texts(ports_of([make_buffer("p")])) == {"p~?", "p~!", "p<?"}


def test_free_ports_of_two_party_protocol():
    assert texts(free(completion(two_party()))) == {"in~?", "out~!", "in<?", "out<?", "net<?"}
    assert free(Collection()) == set()


def test_completion_adds_missing_buffers_only():
    c = completion(two_party())
    assert sorted(m.name for m in c if m.kind == "buffer") == ["in~", "net~", "out~"]
    again = completion(c)
    assert again.names() == c.names()
    master = machine("X", "clk<?")
    assert completion([master]).names() == ["X"]


def test_collection_rejects_duplicates():
    with pytest.raises(ValidationError, match="pairwise different"):
        Collection([machine("A", "x!"), machine("A", "y!")])
    with pytest.raises(ValidationError, match="disjoint"):
        Collection([machine("A", "x!"), machine("B", "x!")])


def test_closedness():
    assert not is_closed(two_party())
    assert not is_closed(Collection())
    h = machine("H", "clk<?", "in!", "in<!", "out?")
    adv = machine("Adv", "net<!", "out<!")
    assert is_closed(two_party().union([h, adv]))


def test_scheduler_of():
    sender = machine("S", "net!", "net<!")
    adv = machine("Adv", "net<!")
    assert scheduler_of("net", [sender, machine("R", "net?")]).name == "S"
    assert scheduler_of("net", [machine("S", "net!"), adv]).name == "Adv"
    assert scheduler_of("net", [machine("S", "net!")]) is None


# -- structures ---------------------------------------------------------------


def protocol(service=("in~?", "in<?", "out~!")):
    return compose_one(two_party(), service)


def compose_one(machines, service):
    from qrsim.network import Structure
    return Structure(machines, frozenset(P(t) for t in service))


def test_service_must_be_free():
    with pytest.raises(ValidationError, match="not free"):
        protocol(("in~?", "net~?"))


def test_structures_hold_simple_machines_only():
    with pytest.raises(ValidationError, match="simple"):
        compose_one([machine("X", "clk<?")], ())


def test_forbidden_ports():
    s = protocol()
    forb = forbidden(s)
    assert P("net<!") in forb
    assert P("out<!") in forb
    assert ports_of(s.machines) <= forb
    assert not (s.service & forb)
    everything = protocol(("in~?", "in<?", "out~!", "out<?", "net<?"))
    assert forbidden(everything) == ports_of(everything.machines)


def user(*extra):
    return machine("H", "clk<?", "in!", "in<!", "out?", *extra)


def test_valid_configuration():
    cfg = make_config(protocol(), user(), machine("Adv", "net<!", "out<!"))
    assert set(cfg.collection().names()) == {"A", "B", "H", "Adv"}


def test_user_with_forbidden_port_is_rejected():
    with pytest.raises(ValidationError, match="forbidden ports net<!"):
        make_config(protocol(), machine("H", "clk<?", "in!", "in<!", "out?", "net<!", "out<!"),
                    machine("Adv", "x!"))


def test_unclosed_configuration_is_rejected():
    with pytest.raises(ValidationError, match="not closed") as info:
        make_config(protocol(), user(), machine("Adv", "z!"))
    assert "net<?" in str(info.value)


def test_missing_master_is_rejected():
    with pytest.raises(ValidationError, match="exactly one master"):
        make_config(protocol(), machine("H", "in!", "in<!", "out?"),
                    machine("Adv", "net<!", "out<!"))


def test_suitability():
    s1 = protocol(("in~?", "in<?", "out~!", "out<?"))
    cfg = make_config(s1, machine("H", "clk<?", "in!", "in<!", "out?", "out<!"),
                      machine("Adv", "net<!"))
    assert is_suitable(cfg, s1)
    # the same protocol with an internal machine scheduling the output
    s2 = compose_one([machine("A", "in?", "net!"), machine("B", "net?", "out!"),
                      machine("R", "out<!")], ("in~?", "in<?", "out~!"))
    assert not is_suitable(cfg, s2)
    plain = make_config(protocol(), user(), machine("Adv", "net<!", "out<!"))
    assert is_suitable(plain, s2)


# -- composition -------------------------------------------------------------------


def inner():
    return compose_one([machine("K", "key?", "kout!")], ("key~?", "key<?", "kout~!", "kout<?"))


def outer():
    return compose_one([machine("U", "in?", "key!", "key<!", "kout?", "res!")],
                       ("in~?", "in<?", "res~!", "key~!", "kout~?", "kout<?"))


def test_compose_consumes_connected_service_ports():
    s = compose([outer(), inner()])
    assert composable([outer(), inner()])
    assert texts(s.service) == {"in~?", "in<?", "res~!", "kout<?"}
    assert set(s.machines.names()) == {"U", "K"}


def test_compose_disjoint_structures_unions_services():
    a = compose_one([machine("A", "x?")], ("x~?", "x<?"))
    b = compose_one([machine("B", "y!")], ("y~!", "y<?"))
    assert compose([a, b]).service == a.service | b.service


def test_overlapping_internal_ports_are_not_composable():
    a = compose_one([machine("A", "x?")], ("x~?", "x<?"))
    b = compose_one([machine("B", "x?")], ("x~?", "x<?"))
    assert not composable([a, b])
    with pytest.raises(ValidationError):
        compose([a, b])


def test_touching_a_forbidden_port_is_reported():
    a = protocol()
    b = compose_one([machine("E", "net<!")], ())
    problems = composition_violations([a, b])
    assert any("net<!" in p for p in problems)
