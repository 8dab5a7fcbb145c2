"""Regenerate the bundled taxonomy and base-vocabulary fixtures.

Run from the repository root::

    python scripts/build_fixtures.py

The outputs are committed under ``src/radpretrain/data``; this script only
exists so the fixtures can be audited and rebuilt.
"""

from __future__ import annotations

import json
import string
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "radpretrain" / "data"

# (label, class, parents, synonyms, anatomical_site)
ROOTS = [
    ("anatomical entity", "anatomical entity", [], [], []),
    ("clinical finding", "clinical finding", [], [], []),
    ("procedure", "procedure", [], [], []),
    ("imaging observation", "imaging observation", [], [], []),
    ("radlex descriptor", "RadLex descriptor", [], [], []),
    ("symptom", "symptom", [], [], []),
    ("body-system-specific disorder", "body-system-specific disorder", [], [], []),
    ("report component", "report component", [], [], []),
]

DESCRIPTOR_CLASSES = [
    "location descriptor",
    "anatomically-related descriptor",
    "anatomical descriptors",
    "size descriptor",
    "normality descriptor",
    "turbidity descriptor",
    "stage of healing descriptor",
    "composition descriptor",
    "severity descriptor",
]

SYSTEMS = [
    "respiratory system disorder",
    "cardiovascular system disorder",
    "nervous system disorder",
    "musculoskeletal system disorder",
    "digestive system disorder",
    "urinary system disorder",
    "endocrine system disorder",
]

ANATOMY = [
    ("thorax", "anatomical entity", ["chest"]),
    ("lung", "thorax", ["lungs"]),
    ("lung base", "lung", ["lung bases"]),
    ("upper lobe", "lung", ["upper lobes"]),
    ("lower lobe", "lung", ["lower lobes"]),
    ("hilum", "lung", ["hila"]),
    ("pleura", "thorax", ["pleural space"]),
    ("heart", "thorax", ["cardiac silhouette"]),
    ("mediastinum", "thorax", []),
    ("diaphragm", "thorax", ["hemidiaphragm"]),
    ("aorta", "thorax", []),
    ("rib", "thorax", ["ribs"]),
    ("head", "anatomical entity", []),
    ("brain", "head", []),
    ("thalamus", "brain", []),
    ("ventricle", "brain", ["ventricles"]),
    ("neck", "anatomical entity", []),
    ("thyroid", "neck", ["thyroid gland"]),
    ("spine", "anatomical entity", []),
    ("cervical spine", "spine", []),
    ("thoracic spine", "spine", []),
    ("lumbar spine", "spine", []),
    ("vertebra", "spine", ["vertebrae", "vertebral body"]),
    ("abdomen", "anatomical entity", []),
    ("liver", "abdomen", []),
    ("gallbladder", "abdomen", []),
    ("spleen", "abdomen", []),
    ("pancreas", "abdomen", []),
    ("kidney", "abdomen", ["kidneys"]),
    ("bowel", "abdomen", []),
    ("knee", "anatomical entity", []),
    ("hip", "anatomical entity", []),
]

# (label, extra parents, synonyms, sites, system)
FINDINGS = [
    ("pneumonia", [], [], ["lung"], "respiratory"),
    ("lobar pneumonia", ["pneumonia"], [], [], None),
    ("atelectasis", [], [], ["lung"], "respiratory"),
    ("basilar atelectasis", ["atelectasis"], [], ["lung base"], None),
    ("edema", [], [], [], None),
    ("pulmonary edema", ["edema"], [], ["lung"], "respiratory"),
    ("consolidation", [], [], ["lung"], "respiratory"),
    ("pleural effusion", [], ["pleural effusions"], ["pleura"], "respiratory"),
    ("pneumothorax", [], [], ["pleura"], "respiratory"),
    ("emphysema", [], [], ["lung"], "respiratory"),
    ("cardiomegaly", [], [], ["heart"], "cardiovascular"),
    ("pericardial effusion", [], [], ["heart"], "cardiovascular"),
    ("heart failure", [], [], ["heart"], "cardiovascular"),
    ("infarct", [], ["infarction"], ["brain"], "nervous"),
    ("thalamic infarct", ["infarct"], [], ["thalamus"], None),
    ("intracranial hemorrhage", [], [], ["brain"], "nervous"),
    ("hydrocephalus", [], [], ["ventricle"], "nervous"),
    ("fracture", [], ["fractures"], [], "musculoskeletal"),
    ("compression fracture", ["fracture"], [], ["vertebra"], None),
    ("scoliosis", [], [], ["spine"], "musculoskeletal"),
    ("osteoarthritis", [], [], ["knee", "hip"], "musculoskeletal"),
    ("disc herniation", [], [], ["spine"], "musculoskeletal"),
    ("hepatomegaly", [], [], ["liver"], "digestive"),
    ("cholelithiasis", [], ["gallstones"], ["gallbladder"], "digestive"),
    ("splenomegaly", [], [], ["spleen"], "digestive"),
    ("bowel obstruction", [], [], ["bowel"], "digestive"),
    ("nephrolithiasis", [], ["kidney stones"], ["kidney"], "urinary"),
    ("hydronephrosis", [], [], ["kidney"], "urinary"),
    ("goiter", [], [], ["thyroid"], "endocrine"),
]

IMAGING = [
    ("opacity", ["opacities"]),
    ("density", ["densities"]),
    ("nodule", ["nodules"]),
    ("mass", []),
    ("calcification", ["calcifications"]),
    ("lesion", ["lesions"]),
    ("ground glass opacity", []),
    ("thickening", []),
    ("pleural thickening", []),
    ("effusion", ["effusions"]),
]

PROCEDURES = [
    ("radiograph", ["radiography"]),
    ("ct", ["computed tomography"]),
    ("mri", []),
    ("ultrasound", []),
    ("biopsy", []),
    ("cholecystectomy", []),
]

DESCRIPTORS = {
    "location descriptor": ["left", "right", "bilateral"],
    "anatomically-related descriptor": ["basilar", "apical", "perihilar", "retrocardiac"],
    "anatomical descriptors": ["anterior", "posterior", "medial", "lateral"],
    "size descriptor": ["small", "large", "enlarged"],
    "normality descriptor": ["normal", "abnormal", "unremarkable"],
    "turbidity descriptor": ["clear", "hazy"],
    "stage of healing descriptor": ["acute", "chronic", "healed"],
    "composition descriptor": ["focal", "diffuse", "patchy", "calcified"],
    "severity descriptor": ["mild", "moderate"],
}

SYMPTOMS = [
    ("cough", []),
    ("fever", []),
    ("pain", []),
    ("headache", []),
    ("dyspnea", ["shortness of breath"]),
    ("nausea", []),
    ("vomiting", []),
    ("dizziness", []),
    ("weakness", []),
    ("numbness", []),
]

REPORT_COMPONENTS = ["findings", "impression", "technique"]


def build_taxonomy():
    rows = []  # (label, class, parents, synonyms, sites)
    rows.extend(ROOTS)
    for cls in DESCRIPTOR_CLASSES:
        rows.append((cls, cls, ["radlex descriptor"], [], []))
    for system in SYSTEMS:
        rows.append((system, "body-system-specific disorder", ["body-system-specific disorder"], [], []))
    for label, parent, syns in ANATOMY:
        rows.append((label, "anatomical entity", [parent], syns, []))
    for label, extra, syns, sites, system in FINDINGS:
        parents = list(extra) or ["clinical finding"]
        if system:
            parents.append(f"{system} system disorder")
        rows.append((label, "clinical finding", parents, syns, sites))
    for label, syns in IMAGING:
        rows.append((label, "imaging observation", ["imaging observation"], syns, []))
    for label, syns in PROCEDURES:
        rows.append((label, "procedure", ["procedure"], syns, []))
    for cls, labels in DESCRIPTORS.items():
        for label in labels:
            rows.append((label, cls, [cls], [], []))
    for label, syns in SYMPTOMS:
        rows.append((label, "symptom", ["symptom"], syns, []))
    for label in REPORT_COMPONENTS:
        rows.append((label, "report component", ["report component"], [], []))

    ids = {label: f"RID{1000 + i}" for i, (label, *_rest) in enumerate(rows)}
    assert len(ids) == len(rows), "duplicate preferred label"
    out = []
    for label, cls, parents, syns, sites in rows:
        out.append(
            {
                "id": ids[label],
                "label": label,
                "synonyms": list(syns),
                "class": cls,
                "parents": [ids[p] for p in parents],
                "anatomical_site": [ids[s] for s in sites],
            }
        )
    return out


# General-English fixture vocabulary. Radiology terms that should be learned
# from the corpus (thalamus, atelectasis, pneumonia, ...) are deliberately absent.
BASE_WORDS = """
the of and to a in is was for on that with as by at from it be this are or an
which not have has had were been but there their its no all any can may one two
three four five six seven eight nine ten first second last new old other more most
some such only also than then these those each both few many much very well same
we you he she they them his her our your who what when where how why if so up down
out over under into onto about after before between without within during through
again further once here now per vs via near along across above below behind around
size seen see show shows shown noted note notes evidence likely suggest suggests
might could would should will must is are am being make made take taken give given
patient patients history study studies exam examination comparison compared prior
none view views image images imaging obtained performed reviewed available report
technique impression findings finding result results follow up evaluate evaluation
rule change changes stable unchanged improved worse increased decreased new interval
lung lungs heart chest brain neck spine liver kidney bone bones blood breath breathing
pain fever cough left right normal acute small large clear mild moderate severe mass
base upper lower side sides both single portable frontal lateral contrast without
definite possible probable suspected known status post present absent process disease
level area areas region part parts body head face arm arms leg legs hand foot back
day days week weeks month months year years time times date hour hours minute
doctor dr mr mrs ms hospital clinic center room floor bed line lines tube tubes
air water fluid gas fat tissue wall walls space spaces shape form type types
long short high low deep wide narrow full empty open closed free fixed soft hard
good bad better best poor fine great little big old young early late recent past
work works worked working use used using call called place placed set put keep kept
find found look looks looked appear appears appeared remain remains remained
show help helps need needs want like just even still yet already always never often
because while though although since until unless whether either neither nor
true false real clear clearly only mainly mostly partly slightly fairly quite
one another something nothing anything everything someone nobody people person
man woman child children family friend group number numbers system systems
point points end ends start starts top bottom front center middle edge
light dark color red blue green white black gray grey
house home city state country world school water food car road
play game music story book page word words name names question answer
power energy force heat cold warm hot dry wet clean dirty
make makes making go goes going went come comes coming came get gets got
say says said tell told ask asked think thought know knew feel felt
seem seems seemed become became turn turned move moved run ran
again against among beside besides beyond toward towards upon
""".split()

PIECES = """
##s ##es ##ed ##ing ##ly ##er ##ers ##est ##al ##ic ##ical ##ity ##ion ##ions
##tion ##ation ##ment ##ous ##us ##lam ##ia ##is ##osis ##itis ##oma ##ec ##ta
##sis ##le ##ar ##ate ##ive ##ine ##ism ##ist ##ure ##ary ##ory ##ance ##ence
##ant ##ent ##able ##ible ##ful ##less ##ness ##ize ##ise ##an ##en ##on ##in
##um ##a ##o ##y ##ie ##th ##ph ##ch ##sh ##st ##nt ##nd ##rt ##ll ##ss ##tt
##ro ##ra ##ri ##re ##li ##lo ##la ##ma ##mo ##mi ##na ##ne ##ni ##no ##to ##ti
##te ##di ##de ##do ##ca ##co ##ci ##ce ##pa ##po ##pe ##pi ##ga ##go ##gi ##ge
##ho ##ha ##he ##hi ##va ##ve ##vi ##vo ##ba ##be ##bi ##bo ##fa ##fe ##fi ##fo
##ula ##ular ##ure ##ula ##emia ##algia ##ectomy ##ostomy ##scopy ##graph ##gram
##pathy ##plasty ##megaly ##rrhage ##thorax ##cardi ##pulmon ##neph ##hep
##ax ##ex ##ix ##ox ##ux ##ac ##ic ##oc ##uc ##ad ##id ##od ##ud ##ag ##ig ##og
##ug ##ak ##ik ##ok ##uk ##ap ##ip ##op ##up ##at ##it ##ot ##ut ##av ##iv ##ov
tha pneu cardi pulm neur oste hem hep nephr gastr chol lymph thyr spl
pre pro re de dis un in im con com sub super inter intra trans peri para
""".split()

CONTROL = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]


def build_base_vocab():
    seen = set()
    tokens = []

    def add(tok):
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    for tok in CONTROL:
        add(tok)
    for ch in string.punctuation:
        add(ch)
    for ch in string.digits + string.ascii_lowercase:
        add(ch)
        add("##" + ch)
    for tok in PIECES:
        add(tok)
    for tok in BASE_WORDS:
        add(tok)
    # pad with two-letter word-initial pieces so the fixture sits near 1K tokens
    for a in "bcdfghlmnprstvw":
        for b in "aeiou":
            add(a + b)
    for a in "bcdfglmnprst":
        for b in "aeiou":
            for c in "lmnrst":
                if len(tokens) < 1000:
                    add(a + b + c)
    forbidden = {"thal", "thalamus", "pneumonia", "atelectasis", "basilar"}
    assert not forbidden & seen
    return tokens


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    concepts = build_taxonomy()
    with open(DATA / "taxonomy.jsonl", "w", encoding="utf-8") as fh:
        for row in concepts:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    vocab = build_base_vocab()
    (DATA / "base_vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    print(f"{len(concepts)} concepts, {len(vocab)} base tokens")


if __name__ == "__main__":
    main()
