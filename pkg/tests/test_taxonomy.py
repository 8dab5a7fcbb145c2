from __future__ import annotations

import json

import pytest

from radpretrain.taxonomy import TaxonomyError, load_taxonomy


def _write(tmp_path, rows):
    p = tmp_path / "tax.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return p


def test_bundled_taxonomy_loads(tax):
    assert 100 <= len(tax) <= 200


def test_dangling_parent_is_rejected(tmp_path):
    path = _write(tmp_path, [{"id": "A", "label": "a", "class": "symptom", "parents": ["MISSING"]}])
    with pytest.raises(TaxonomyError, match="MISSING"):
        load_taxonomy(path)


def test_cycle_is_rejected(tmp_path):
    rows = [
        {"id": "A", "label": "a", "class": "symptom", "parents": ["B"]},
        {"id": "B", "label": "b", "class": "symptom", "parents": ["A"]},
    ]
    with pytest.raises(TaxonomyError):
        load_taxonomy(_write(tmp_path, rows))


def test_empty_file_gives_empty_taxonomy(tmp_path):
    tax = load_taxonomy(_write(tmp_path, []))
    assert len(tax) == 0
    assert tax.lookup("pneumonia") is None


def test_lookup_classes(tax):
    assert [c.radlex_class for c in tax.lookup("pneumonia")] == ["clinical finding"]
    assert [c.radlex_class for c in tax.lookup("lungs")] == ["anatomical entity"]
    assert tax.lookup("zzzz") is None
    assert tax.lookup("  PNEUMONIA ") == tax.lookup("pneumonia")


def test_class_of(tax):
    (pneu,) = tax.lookup("pneumonia")
    (left,) = tax.lookup("left")
    assert tax.class_of(pneu) == "clinical finding"
    assert tax.class_of(left) == "location descriptor"
    with pytest.raises(LookupError):
        tax.class_of("NOPE")


def test_pneumonia_site_is_lungs(tax):
    (pneu,) = tax.lookup("pneumonia")
    (lungs,) = tax.lookup("lungs")
    assert tax.anatomical_sites(pneu) == {lungs.id}


def test_site_free_concept_has_empty_sites(tax):
    (mild,) = tax.lookup("mild")
    assert tax.anatomical_sites(mild) == frozenset()


def _nearest_declared_sites(tax, cid):
    # oracle: breadth-first walk, first level that declares any site
    level, seen = [cid], {cid}
    while level:
        found = {s for x in level for s in tax.get(x).anatomical_site}
        if found:
            return found
        nxt = []
        for x in level:
            for p in tax.get(x).parents:
                if p not in seen:
                    seen.add(p)
                    nxt.append(p)
        level = nxt
    return set()


def test_site_inheritance_matches_ancestor_walk(tax):
    (lobar,) = tax.lookup("lobar pneumonia")
    (lungs,) = tax.lookup("lungs")
    assert not lobar.anatomical_site
    assert tax.anatomical_sites(lobar) == {lungs.id}
    for cid in tax.concepts:
        assert tax.anatomical_sites(cid) == _nearest_declared_sites(tax, cid)


def test_same_body_system(tax):
    (a,) = tax.lookup("pneumonia")
    (b,) = tax.lookup("atelectasis")
    (bone,) = tax.lookup("fracture")
    assert tax.same_body_system(a, b)
    assert not tax.same_body_system(a, bone)
    assert tax.same_body_system(bone, bone)


def test_same_body_system_matches_oracle(tax):
    systems = {c.id for c in tax.concepts.values()
               if any(tax.get(p).preferred_label == "body-system-specific disorder" for p in c.parents)}

    def under(cid):
        return systems & (tax.ancestors(cid) | {cid})

    ids = sorted(tax.concepts)
    for a in ids:
        for b in ids:
            assert tax.same_body_system(a, b) == bool(under(a) & under(b))
