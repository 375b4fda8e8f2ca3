"""Text generation from annotated graphs and graph recovery from text.

Single-shot paragraph generation with a concept-coverage gate, the bounded
extract-diagnose-revise refinement loop, concept extraction for real texts,
and model-based causal discovery whose output matrix is allowed to be
cyclic (projection happens downstream).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .assignment import ConceptAssignment, normalize_concept
from .errors import CoverageViolation, ExtractionFailed, MalformedOutput, ShapeMismatch
from .gateway import load_template, render_prompt
from .graphs import Dag
from .metrics import shd

log = logging.getLogger(__name__)


@dataclass
class Paragraph:
    text: str
    source_concepts: ConceptAssignment

    def to_json(self) -> dict:
        return {"text": self.text, "source_concepts": self.source_concepts.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "Paragraph":
        return cls(text=obj["text"], source_concepts=ConceptAssignment.from_json(obj["source_concepts"]))


@dataclass
class GenIdConfig:
    k_gen: int = 3

    def __post_init__(self):
        if self.k_gen < 0:
            raise ValueError("k_gen must be >= 0")


def concept_in_text(concept: str, text: str) -> bool:
    """Containment after normalization, allowing a plural s/es suffix."""
    norm_text = normalize_concept(text)
    norm = normalize_concept(concept)
    for variant in (norm, norm + "s", norm + "es"):
        if variant in norm_text:
            return True
    # the text may pluralize the concept's final word
    if norm.endswith("es") and norm[:-2] in norm_text:
        return True
    if norm.endswith("s") and norm[:-1] in norm_text:
        return True
    return False


def missing_concepts(concepts, text: str) -> list:
    return [c for c in concepts if not concept_in_text(c, text)]


COVERAGE_REASK = (
    "\n\nYour previous paragraph did not mention the following concepts: {missing}. "
    "Rewrite the paragraph so that every concept appears explicitly, and reply in "
    "the same JSON format."
)

DESCRIPTION_KEY = "Natural language description"


def generate_text(dag: Dag, assignment: ConceptAssignment, gateway, profile, sample_id=None) -> Paragraph:
    """One-shot verbalization of the annotated graph, with a single re-ask
    if the paragraph fails to mention every concept."""
    if dag.n < 2:
        raise ValueError("generation requires at least 2 nodes")
    if len(assignment.concepts) != dag.n:
        raise ShapeMismatch(f"{len(assignment.concepts)} concepts for {dag.n} nodes")
    template = load_template("phase3")
    prompt = render_prompt(template, {"Concepts": assignment.concepts, "Adjacency Matrix": dag.edges})
    reply = gateway.complete_json(
        profile, prompt, expected_keys=[DESCRIPTION_KEY], template="phase3", sample_id=sample_id
    )
    text = str(reply[DESCRIPTION_KEY])
    gaps = missing_concepts(assignment.concepts, text)
    if gaps:
        reply = gateway.complete_json(
            profile,
            prompt + COVERAGE_REASK.format(missing=", ".join(repr(c) for c in gaps)),
            expected_keys=[DESCRIPTION_KEY],
            template="phase3",
            sample_id=sample_id,
        )
        text = str(reply[DESCRIPTION_KEY])
        gaps = missing_concepts(assignment.concepts, text)
        if gaps:
            raise CoverageViolation(f"paragraph still missing concepts: {gaps}")
    return Paragraph(text=text, source_concepts=assignment)


def llm_causal_discovery(text: str, concepts, gateway, profile, sample_id=None) -> np.ndarray:
    """Infer a directed adjacency matrix over the given concepts from text.

    The result may contain cycles; nonzero diagonal entries are clamped to
    zero with a warning.
    """
    template = load_template("discovery")
    prompt = render_prompt(template, {"Text": text, "Important concepts": concepts})
    reply = gateway.complete_json(
        profile, prompt, expected_keys=["adjacency matrix"], template="discovery", sample_id=sample_id
    )
    raw = reply["adjacency matrix"]
    n = len(concepts)
    try:
        adj = np.asarray(raw, dtype=int)
    except (TypeError, ValueError):
        raise MalformedOutput("adjacency matrix is not a numeric array", raw_text=str(raw))
    if adj.shape != (n, n):
        raise ShapeMismatch(f"expected {n}x{n} adjacency, got {adj.shape}")
    if not np.isin(adj, (0, 1)).all():
        raise ShapeMismatch("adjacency entries must be 0/1")
    if np.diagonal(adj).any():
        log.warning("discovery output has nonzero diagonal entries; clamping to zero")
        np.fill_diagonal(adj, 0)
    return adj.astype(np.int8)


REVISION_REQUEST = (
    "\n\nA previous paragraph for this task was:\n{paragraph}\n\n"
    "A reader inferred an incorrect causal structure from it. "
    "Relationships that should be conveyed but were not picked up: {missed}. "
    "Relationships that were wrongly read as direct causes: {spurious}. "
    "Minimally revise the paragraph to fix these problems without introducing "
    "any new concepts, and reply in the same JSON format."
)


def gen_id_refine(
    dag: Dag,
    assignment: ConceptAssignment,
    paragraph: Paragraph,
    gateway,
    profile,
    discovery_profile,
    config: GenIdConfig | None = None,
    sample_id=None,
):
    """Extract-diagnose-revise loop bounded by k_gen revision iterations.

    Mismatch is the Hamming distance between the extracted matrix and the
    target.  Stops at mismatch zero, on non-decrease, or when the budget
    runs out; returns the lowest-mismatch paragraph seen.
    Returns (paragraph, revisions_performed, trace).
    """
    config = config or GenIdConfig()
    if config.k_gen == 0:
        return paragraph, 0, []
    template = load_template("phase3")
    base_prompt = render_prompt(template, {"Concepts": assignment.concepts, "Adjacency Matrix": dag.edges})

    def extract(p: Paragraph):
        adj = llm_causal_discovery(p.text, assignment.concepts, gateway, discovery_profile, sample_id=sample_id)
        return shd(dag.edges, adj), adj

    trace = []
    current = paragraph
    mismatch, adj = extract(current)
    trace.append({"mismatch": mismatch, "adjacency": adj.tolist()})
    best, best_mismatch = current, mismatch
    revisions = 0
    while mismatch > 0 and revisions < config.k_gen:
        missed = [
            f"{assignment.concepts[i]} -> {assignment.concepts[j]}"
            for i, j in zip(*np.nonzero((dag.edges == 1) & (adj == 0)))
        ]
        spurious = [
            f"{assignment.concepts[i]} -> {assignment.concepts[j]}"
            for i, j in zip(*np.nonzero((dag.edges == 0) & (adj == 1)))
        ]
        reply = gateway.complete_json(
            profile,
            base_prompt
            + REVISION_REQUEST.format(
                paragraph=current.text,
                missed=", ".join(missed) or "(none)",
                spurious=", ".join(spurious) or "(none)",
            ),
            expected_keys=[DESCRIPTION_KEY],
            template="phase3",
            sample_id=sample_id,
        )
        candidate = Paragraph(text=str(reply[DESCRIPTION_KEY]), source_concepts=assignment)
        revisions += 1
        new_mismatch, new_adj = extract(candidate)
        trace.append({"mismatch": new_mismatch, "adjacency": new_adj.tolist()})
        if new_mismatch < best_mismatch:
            best, best_mismatch = candidate, new_mismatch
        if new_mismatch >= mismatch:
            break
        current, mismatch, adj = candidate, new_mismatch, new_adj
    return best, revisions, trace


EXTRACTION_REASK = (
    "\n\nYour previous concept list did not satisfy the requirements "
    "({reason}). Reply again with between 3 and 10 distinct concepts, each of "
    "which appears in the text, in the same JSON format."
)


def extract_concepts(text: str, gateway, profile, sample_id=None) -> list:
    """Pull 3..10 distinct concepts out of a real text.

    Deterministic post-processing: normalize-dedupe, drop concepts absent
    from the text, and re-ask once if the size constraint fails.
    """
    if not text.strip():
        raise ValueError("empty text")
    template = load_template("extraction")
    prompt = render_prompt(template, {"Text": text})

    def clean(raw) -> list:
        seen, out = set(), []
        for c in raw:
            c = str(c).strip()
            key = normalize_concept(c)
            if not key or key in seen:
                continue
            if not concept_in_text(c, text):
                continue
            seen.add(key)
            out.append(c)
        return out

    reply = gateway.complete_json(
        profile, prompt, expected_keys=["concepts"], template="extraction", sample_id=sample_id
    )
    concepts = clean(reply["concepts"])
    if not 3 <= len(concepts) <= 10:
        reason = f"{len(concepts)} usable concepts after filtering"
        reply = gateway.complete_json(
            profile, prompt + EXTRACTION_REASK.format(reason=reason),
            expected_keys=["concepts"], template="extraction", sample_id=sample_id,
        )
        concepts = clean(reply["concepts"])
        if not 3 <= len(concepts) <= 10:
            raise ExtractionFailed(f"still {len(concepts)} usable concepts after re-ask")
    return concepts
