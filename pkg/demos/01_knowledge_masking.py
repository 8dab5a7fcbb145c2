"""
Knowledge-aware masking on one report
=====================================

Generate a synthetic report, clean and section it, then watch the masking
scheduler pick an option and mask entity tokens. Run with
``python demos/01_knowledge_masking.py``.
"""

from radpretrain import corpus, pipeline, syngen
from radpretrain.annotator import annotate
from radpretrain.masking import kg_example, option_counts, quota
from radpretrain.taxonomy import load_taxonomy
from radpretrain.tokenizer import load_base_vocab

tax = load_taxonomy()
generated = syngen.generate(40, tax, seed=7)
print(generated[0].raw.text)

# %%
# Cleaning undoes the injected OCR noise; headers split the text into sections.
reports, dropped = pipeline.preprocess_corpus([g.raw for g in generated], corpus.load_rules(), corpus.load_headers())
for kind, sent in reports[0].sentences():
    print(f"{kind.value:>13}  {sent.text}")

# %%
# Extend the base vocabulary with taxonomy-backed corpus tokens.
base = load_base_vocab()
vocab, _ = pipeline.build_vocab(base, reports, tax, target_size=4000)
print(len(base), "->", len(vocab), "tokens")

# %%
# Pick a Findings chunk, list its entity spans and what each option would mask.
chunks, _ = corpus.chunk_corpus(reports, vocab)
chunk = next(c for c in chunks if c.section is corpus.SectionKind.FINDINGS)
spans = annotate(chunk, vocab, tax)
for s in spans:
    print(f"{s.surface:<20} {s.category.value:<12} tokens {s.start}:{s.end}")
ex = kg_example(chunk, spans, vocab, run_seed=0)
print("quota", quota(len(ex)), "counts", {o.value: n for o, n in option_counts(spans).items()})
print("chosen", ex.option.value if ex.option else None, "qualified", ex.qualified)

# %%
# Masked view of the chunk.
print(" ".join("[MASK]" if i in ex.masks else vocab.tokens[t] for i, t in enumerate(ex.original())))
