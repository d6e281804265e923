import pytest
from hypothesis import given, settings, strategies as st

from sdps.matching import SUB, Entry
from sdps.model import MessageId, NodeId, Publication, parse_filter, parse_publication, parse_template
from sdps.policy import (
    Insert,
    Metadata,
    PolicyError,
    PolicyStore,
    Retract,
    apply_publication_policies,
    evaluate_policy,
    execute_actions,
    instantiate_template,
    parse_policies,
    parse_policy,
)

IM = NodeId("interest-manager", 9)


def consumer(n):
    return NodeId("consumer", n)


def md(client, text, version=1):
    return Metadata(client, parse_publication(text), version, client.role)


LOCATION = parse_policy("POLICY id=1 owner=i9 target=consumer WHEN [meta.country,present] "
                        "DO insert_sub [topic,=,$meta.country]")


def test_policy_text_round_trip():
    for text in [
        LOCATION.text(),
        "POLICY id=2 target=producer WHEN * STATE has_ad([price,present]) DO insert_ad [price,<,10]",
        "POLICY id=3 target=consumer WHEN [meta.rank,>,5] DO modify [price,present] WITH =[price,<,$old.price+5] -region",
        "PUBPOLICY id=4 WHEN [meta.country,present] ON [topic,present] DO set [topic,$meta.country]",
    ]:
        assert parse_policy(parse_policy(text).text()) == parse_policy(text)


def test_policy_file_comments_and_hash_in_text():
    pols = parse_policies("# header\n\nPOLICY id=1 target=consumer WHEN * DO insert_sub [tag,=,'#1']\n")
    assert len(pols) == 1
    assert pols[0].actions[0].template.predicates[0].value == "#1"


def test_install_fires_once_per_matching_target():
    s = PolicyStore()
    s.update_metadata(md(consumer(1), "[meta.country,'Norway']"))
    assert len(s.install_policy(LOCATION)) == 1


def test_install_without_metadata_waits():
    s = PolicyStore()
    assert s.install_policy(LOCATION) == []
    firings = s.update_metadata(md(consumer(1), "[meta.country,'Norway']"))
    assert [f.fire for f in firings] == [True]


def test_install_over_five_targets_three_matching():
    s = PolicyStore()
    for i in range(5):
        text = "[meta.country,'Norway']" if i < 3 else "[meta.rank,1]"
        s.update_metadata(md(consumer(i + 1), text))
    assert sum(f.fire for f in s.install_policy(LOCATION)) == 3


def test_duplicate_policy_id():
    s = PolicyStore()
    s.install_policy(LOCATION)
    assert s.install_policy(LOCATION) == []
    with pytest.raises(PolicyError):
        s.install_policy(parse_policy("POLICY id=1 owner=i9 target=consumer WHEN * DO insert_sub [a,=,1]"))


def test_metadata_versions_are_monotone():
    s = PolicyStore()
    c = consumer(1)
    s.update_metadata(md(c, "[meta.country,'A']", 1))
    s.update_metadata(md(c, "[meta.country,'B']", 2))
    assert s.metadata[c].attrs["meta.country"] == "B"
    assert s.update_metadata(md(c, "[meta.country,'C']", 1)) == []
    assert s.metadata[c].attrs["meta.country"] == "B"


def test_evaluate_policy():
    assert evaluate_policy(LOCATION, parse_publication("[meta.country,'Norway']"))
    pol = parse_policy("POLICY id=5 target=consumer WHEN * STATE has_sub([price,present]) DO insert_sub [a,=,1]")
    assert not evaluate_policy(pol, parse_publication("[meta.x,1]"), [])


def test_instantiate_template():
    t = parse_template("[topic,=,'$meta.country']")
    assert instantiate_template(t, parse_publication("[meta.country,'Norway']")) == parse_filter("[topic,=,'Norway']")
    assert instantiate_template(t, parse_publication("[country,'Norway']")) == parse_filter("[topic,=,'Norway']")
    plain = parse_template("[b,=,1],[a,=,2]")
    assert instantiate_template(plain, None) == parse_filter("[a,=,2],[b,=,1]")
    old = parse_template("[price,<,$old.price]")
    assert instantiate_template(old, None, parse_filter("[price,<,50]")) == parse_filter("[price,<,50]")


def entry(client, n, kind, text, origin=None):
    return Entry(MessageId(client, n), client, kind, parse_filter(text), origin)


def test_replacement_retracts_previous_generation():
    c = consumer(1)
    gen = entry(c, 1, SUB, "[topic,=,'A']", (1, c))
    own = entry(c, 2, SUB, "[price,<,5]")
    ops = execute_actions(1, LOCATION.actions, c, parse_publication("[meta.country,'B']"), [gen, own])
    assert ops == [Retract(gen.id), Insert(SUB, parse_filter("[topic,=,'B']"))]


def test_retract_matching_without_match_is_noop():
    pol = parse_policy("POLICY id=2 target=consumer WHEN * DO insert_unsub [price,>,100]")
    c = consumer(1)
    assert execute_actions(2, pol.actions, c, {}, [entry(c, 1, SUB, "[price,<,5]")]) == []


def test_modify_transforms_matching_entries_only():
    pol = parse_policy("POLICY id=3 target=consumer WHEN * DO modify [price,<,20] WITH =[price,<,$old.price+5]")
    c = consumer(1)
    store = [entry(c, 1, SUB, "[price,<,10]"), entry(c, 2, SUB, "[price,>,50]"),
             entry(c, 3, SUB, "[price,<,15],[topic,=,'x']")]
    ops = execute_actions(3, pol.actions, c, {}, store)
    assert ops == [
        Retract(store[0].id), Insert(SUB, parse_filter("[price,<,15]")),
        Retract(store[2].id), Insert(SUB, parse_filter("[price,<,20],[topic,=,'x']")),
    ]


def test_unresolved_variable_skips_only_that_instruction():
    pol = parse_policy("POLICY id=6 target=consumer WHEN * DO insert_sub [a,=,$meta.nope]; insert_sub [a,=,1]")
    diag = []
    ops = execute_actions(6, pol.actions, consumer(1), parse_publication("[meta.x,1]"), [], diag)
    assert ops == [Insert(SUB, parse_filter("[a,=,1]"))]
    assert len(diag) == 1


def test_publication_policies():
    p = parse_publication("[price,5]")
    country = parse_publication("[meta.country,'Norway']")
    assert apply_publication_policies([], p, country) == p
    a = parse_policy("PUBPOLICY id=1 WHEN [meta.country,present] DO set [topic,$meta.country]")
    assert apply_publication_policies([a], p, country)["topic"] == "Norway"
    b = parse_policy("PUBPOLICY id=2 WHEN * DO set [topic,'other']")
    assert apply_publication_policies([b, a], p, country)["topic"] == "other"


def test_remove_policy_retracts_every_firing():
    s = PolicyStore()
    for i in range(3):
        s.update_metadata(md(consumer(i + 1), "[meta.country,'N']"))
    s.install_policy(LOCATION)
    out = s.remove_policy(1)
    assert len(out) == 3 and not any(f.fire for f in out)
    assert s.remove_policy(42) == []


# -- properties ------------------------------------------------------------------

COUNTRIES = ("A", "B", "C")


def replay(history):
    """Apply a metadata history and return the live generated filters per target."""
    s = PolicyStore()
    s.install_policy(LOCATION)
    live: dict = {}
    versions: dict = {}
    for n, country in history:
        c = consumer(n)
        versions[c] = versions.get(c, 0) + 1
        attrs = Publication({"meta.country": country}) if country else Publication({"meta.rank": 1.0})
        for f in s.update_metadata(Metadata(c, attrs, versions[c], c.role)):
            ents = live.get(c, [])
            ops = execute_actions(1, f.policy.actions if f.fire else (), c, f.metadata.attrs, ents)
            for op in ops:
                if isinstance(op, Retract):
                    ents = [e for e in ents if e.id != op.entry_id]
                else:
                    ents = ents + [Entry(MessageId(c, len(ents) + 100 * versions[c]), c, SUB, op.filter, (1, c))]
            live[c] = ents
    return {c: sorted(str(e.filter) for e in ents) for c, ents in live.items() if ents}


@given(st.lists(st.tuples(st.integers(1, 3), st.sampled_from(COUNTRIES + ("",))), max_size=20))
def test_generated_state_depends_only_on_latest_metadata(history):
    final = {}
    for n, country in history:
        final[consumer(n)] = country
    expected = {c: [f"[topic,=,'{k}']"] for c, k in final.items() if k}
    assert replay(history) == expected


@settings(max_examples=50)
@given(st.randoms(use_true_random=False))
def test_exactly_once_per_version(rng):
    s = PolicyStore()
    keys = []
    for _ in range(30):
        c = consumer(rng.randint(1, 4))
        v = rng.randint(1, 6)
        if rng.random() < 0.2:
            s.install_policy(parse_policy(f"POLICY id={rng.randint(1, 3)} target=consumer WHEN * DO insert_sub [a,=,1]"))
        keys += [f.key for f in s.update_metadata(md(c, f"[meta.v,{v}]", v)) if f.fire]
    assert len(keys) == len(set(keys))
    assert all(n == 1 for n in s.firing_counts.values())
