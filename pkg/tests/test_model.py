import pytest
from hypothesis import assume, given

from helpers import filters, probe_intersect, publications
from sdps.model import (
    Filter,
    MessageId,
    NodeId,
    ParseError,
    Predicate,
    eval_predicate,
    filter_satisfiable,
    filters_intersect,
    format_filter,
    format_number,
    format_publication,
    match_filter,
    parse_filter,
    parse_publication,
)


def test_parse_filter_counts_predicates():
    assert len(parse_filter("[topic,=,'stock'],[price,<,50]")) == 2
    f = parse_filter("[price,present]")
    assert len(f) == 1 and f.predicates[0].op == "present"


def test_ordering_operator_rejects_text():
    with pytest.raises(ParseError):
        parse_filter("[price,<,'high']")


def test_parse_publication():
    p = parse_publication("[topic,'stock'],[price,35]")
    assert dict(p) == {"topic": "stock", "price": 35}


@pytest.mark.parametrize("text", ["[x,1],[x,2]", ""])
def test_bad_publications(text):
    with pytest.raises(ParseError):
        parse_publication(text)


def test_canonical_form_sorts_and_trims_numbers():
    f = Filter((Predicate("topic", "=", "stock"), Predicate("price", "<", 50.0)))
    assert format_filter(f) == "[price,<,50],[topic,=,'stock']"
    assert format_number(50.0) == "50"


def test_eval_predicate():
    lt = Predicate("price", "<", 50)
    assert eval_predicate(lt, 35)
    assert not eval_predicate(lt, "high")
    assert not eval_predicate(Predicate("topic", "present"))


def test_match_filter_examples():
    assert match_filter(parse_filter("[topic,=,'stock'],[price,<,50]"),
                        parse_publication("[topic,'stock'],[price,35]"))
    assert match_filter(Filter(), parse_publication("[anything,1]"))
    assert not match_filter(parse_filter("[topic,=,'stock']"), parse_publication("[topic,'bond']"))


def test_filters_intersect_examples():
    assert filters_intersect(parse_filter("[price,<,50]"), parse_filter("[price,>,10]"))
    assert not filters_intersect(parse_filter("[price,<,10]"), parse_filter("[price,>,50]"))


def test_boundary_intersection():
    assert filters_intersect(parse_filter("[p,<=,5]"), parse_filter("[p,>=,5]"))
    assert not filters_intersect(parse_filter("[p,<=,5]"), parse_filter("[p,>,5]"))
    assert not filters_intersect(parse_filter("[p,<=,5],[p,>=,5]"), parse_filter("[p,!=,5]"))


def test_text_escaping_round_trip():
    p = parse_publication(r"[msg,'it\'s, [odd]']")
    assert p["msg"] == "it's, [odd]"
    assert parse_publication(format_publication(p)) == p


def test_node_and_message_ids():
    assert str(NodeId("producer", 7)) == "p7"
    assert NodeId.parse("i3") == NodeId("interest-manager", 3)
    assert MessageId.parse("p7:3") == MessageId(NodeId("producer", 7), 3)
    with pytest.raises(ValueError):
        NodeId.parse("q1")


@given(filters())
def test_filter_text_round_trip(f):
    assume(len(f) > 0)
    assert parse_filter(format_filter(f)) == f


@given(publications())
def test_publication_text_round_trip(p):
    assert parse_publication(format_publication(p)) == p


@given(filters(), filters())
def test_intersection_agrees_with_probe_grid(a, b):
    assert filters_intersect(a, b) == probe_intersect(a, b)


@given(filters(), filters())
def test_intersection_is_symmetric(a, b):
    assert filters_intersect(a, b) == filters_intersect(b, a)


@given(filters(), publications())
def test_a_match_witnesses_intersection(f, p):
    from sdps.model import exact_filter
    if match_filter(f, p):
        assert filters_intersect(f, exact_filter(p))


@given(filters())
def test_satisfiable_means_self_intersecting(f):
    assert filter_satisfiable(f) == filters_intersect(f, Filter())
