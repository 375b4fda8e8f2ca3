"""Concept assignment for a target DAG: propose, verify, refine.

The inverse problem: pick real-world concepts for the graph nodes so that
an independent verifier, asked about every ordered pair, supports exactly
the edges the matrix requires.  Verifier judgments are aggregated by
self-consistency voting; disagreement is summarized by the normalized
mismatch L_b and thresholded into a fallacy set that drives refinement.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedOutput, SchemaViolation, VerificationError
from .gateway import load_template, make_cache_key, render_prompt
from .graphs import Dag

DETERMINERS = ("a", "an", "the")


def normalize_concept(s: str) -> str:
    """Lowercase, strip punctuation, drop leading determiners."""
    s = re.sub(r"[^\w\s]", " ", s.lower())
    tokens = s.split()
    while tokens and tokens[0] in DETERMINERS:
        tokens.pop(0)
    return " ".join(tokens)


@dataclass
class ConceptAssignment:
    concepts: list
    domain: str

    def validate(self, n: int | None = None) -> None:
        if n is not None and len(self.concepts) != n:
            raise SchemaViolation(f"expected {n} concepts, got {len(self.concepts)}")
        self.overlapping()  # raises on duplicates

    def overlapping(self) -> list:
        """Indices of concepts that collide after normalization; raises if any."""
        seen: dict = {}
        clashes = []
        for idx, c in enumerate(self.concepts):
            key = normalize_concept(c)
            if key in seen:
                clashes.extend([seen[key], idx])
            else:
                seen[key] = idx
        if clashes:
            raise SchemaViolation(
                "overlapping concepts after normalization: "
                + ", ".join(repr(self.concepts[i]) for i in sorted(set(clashes)))
            )
        return clashes

    def to_json(self) -> dict:
        return {"concepts": list(self.concepts), "domain": self.domain}

    @classmethod
    def from_json(cls, obj: dict) -> "ConceptAssignment":
        return cls(concepts=list(obj["concepts"]), domain=obj["domain"])


@dataclass
class RelationSets:
    e_plus: list  # ordered pairs with a required direct edge
    e_minus: list  # ordered pairs that must not be direct causes


def analyze_causal_structure(dag: Dag) -> RelationSets:
    """Partition ordered non-diagonal pairs into required edges and non-edges."""
    e_plus, e_minus = [], []
    for i in range(dag.n):
        for j in range(dag.n):
            if i == j:
                continue
            (e_plus if dag.edges[i, j] else e_minus).append((i, j))
    return RelationSets(e_plus=e_plus, e_minus=e_minus)


@dataclass
class VoteTable:
    s: dict  # (i, j) -> vote proportion
    m: int
    votes: dict = field(default_factory=dict)  # (i, j) -> raw 0/1 votes

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "s": {f"{i},{j}": v for (i, j), v in self.s.items()},
            "votes": {f"{i},{j}": v for (i, j), v in self.votes.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VoteTable":
        def key(k):
            i, j = k.split(",")
            return (int(i), int(j))

        return cls(
            m=int(obj["m"]),
            s={key(k): float(v) for k, v in obj["s"].items()},
            votes={key(k): list(v) for k, v in obj.get("votes", {}).items()},
        )


@dataclass
class FallacySet:
    missed: list
    spurious: list
    tau: float

    def empty(self) -> bool:
        return not self.missed and not self.spurious

    def to_json(self) -> dict:
        return {
            "missed": [list(p) for p in self.missed],
            "spurious": [list(p) for p in self.spurious],
            "tau": self.tau,
        }


@dataclass
class MismatchReport:
    l_b: float
    l_b_miss: float
    l_b_spur: float
    alpha: float

    def to_json(self) -> dict:
        return {"l_b": self.l_b, "l_b_miss": self.l_b_miss, "l_b_spur": self.l_b_spur, "alpha": self.alpha}


def _parse_node_entries(entries, n: int) -> list:
    """Turn ["Node 0: X", ...] into an index-ordered concept list."""
    found = {}
    for entry in entries:
        m = re.match(r"\s*Node\s+(\d+)\s*:\s*(.+?)\s*$", str(entry))
        if not m:
            raise MalformedOutput(f"cannot parse concept entry {entry!r}", raw_text=str(entries))
        found[int(m.group(1))] = m.group(2)
    if sorted(found) != list(range(n)):
        raise MalformedOutput(
            f"expected concepts for nodes 0..{n - 1}, got {sorted(found)}", raw_text=str(entries)
        )
    return [found[i] for i in range(n)]


ASSIGNMENT_KEY = "Real concepts assigned to variables"

REVISION_NOTE = (
    "\n\nThe following concepts in your previous assignment were duplicates or "
    "near-duplicates after normalization: {offenders}. Replace ONLY those concepts "
    "with semantically distinct alternatives from the same domain, keeping every "
    "other concept exactly as it was, and reply in the same JSON format."
)


def _request_assignment(gateway, profile, prompt, template_name, domain, n, sample_id):
    reply = gateway.complete_json(
        profile, prompt, expected_keys=[ASSIGNMENT_KEY], template=template_name, sample_id=sample_id
    )
    concepts = _parse_node_entries(reply[ASSIGNMENT_KEY], n)
    return ConceptAssignment(concepts=concepts, domain=domain)


def _with_schema_revision(gateway, profile, prompt, template_name, domain, n, sample_id):
    """One minimal-revision re-ask on overlap; still overlapping -> error."""
    ca = _request_assignment(gateway, profile, prompt, template_name, domain, n, sample_id)
    try:
        ca.validate(n)
        return ca
    except SchemaViolation as exc:
        revised = _request_assignment(
            gateway, profile, prompt + REVISION_NOTE.format(offenders=str(exc)),
            template_name, domain, n, sample_id,
        )
        revised.validate(n)
        return revised


def initial_assignment(dag: Dag, domain: str, gateway, profile, sample_id=None) -> ConceptAssignment:
    template = load_template("phase2")
    prompt = render_prompt(
        template,
        {"Matrix": dag.edges, "N": dag.n, "domain/series of events": domain},
    )
    return _with_schema_revision(gateway, profile, prompt, "phase2", domain, dag.n, sample_id)


def counterfactual_verification(
    assignment: ConceptAssignment,
    relations: RelationSets,
    dag: Dag,
    gateway,
    profile,
    m: int = 5,
    sample_id=None,
) -> VoteTable:
    """Vote proportions s_ij from m independent verifier completions per pair.

    The whole table is cached under (assignment, adjacency, verifier model,
    template), so re-verifying an unchanged assignment costs zero calls.
    A completion that stays unparseable after the re-ask budget abstains;
    at least min(3, m) parsed completions are required per pair.
    """
    key = make_cache_key(assignment.concepts, dag.edges, profile.model_id, "verify")

    def compute():
        template = load_template("verify")
        required = min(3, m)
        s, votes = {}, {}
        for (i, j) in relations.e_plus + relations.e_minus:
            prompt = render_prompt(
                template,
                {"Concepts": assignment.concepts, "Cause": assignment.concepts[i], "Effect": assignment.concepts[j]},
            )
            pair_votes = []
            for _ in range(m):
                try:
                    reply = gateway.complete_json(
                        profile, prompt, expected_keys=["direct cause"], template="verify", sample_id=sample_id
                    )
                except MalformedOutput:
                    continue  # abstention
                verdict = str(reply["direct cause"]).strip().lower()
                if verdict in ("yes", "no"):
                    pair_votes.append(1 if verdict == "yes" else 0)
            if len(pair_votes) < required:
                raise VerificationError(
                    f"pair ({i},{j}): only {len(pair_votes)} of {m} completions parsed"
                )
            s[(i, j)] = sum(pair_votes) / len(pair_votes)
            votes[(i, j)] = pair_votes
        return VoteTable(s=s, m=m, votes=votes).to_json()

    return VoteTable.from_json(gateway.cached(key, compute))


def quantify_mismatch(votes: VoteTable, relations: RelationSets, alpha: float = 1.0) -> MismatchReport:
    """L_b = mean(1 - s) over required edges + alpha * mean(s) over non-edges.

    An empty relation class contributes 0 by convention.
    """
    miss = (
        float(np.mean([1.0 - votes.s[p] for p in relations.e_plus])) if relations.e_plus else 0.0
    )
    spur = (
        alpha * float(np.mean([votes.s[p] for p in relations.e_minus])) if relations.e_minus else 0.0
    )
    return MismatchReport(l_b=miss + spur, l_b_miss=miss, l_b_spur=spur, alpha=alpha)


def fallacy_analysis(votes: VoteTable, relations: RelationSets, tau: float = 0.6) -> FallacySet:
    """Threshold votes into hard fallacies; s equal to tau counts as supported."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau!r}")
    missed = [p for p in relations.e_plus if votes.s[p] < tau]
    spurious = [p for p in relations.e_minus if votes.s[p] >= tau]
    return FallacySet(missed=missed, spurious=spurious, tau=tau)


def refine_assignment(
    assignment: ConceptAssignment,
    fallacies: FallacySet,
    dag: Dag,
    gateway,
    profile,
    sample_id=None,
) -> ConceptAssignment:
    if fallacies.empty():
        raise ValueError("refine_assignment requires a nonempty fallacy set")
    template = load_template("refine")

    def pairs(ps):
        if not ps:
            return "(none)"
        return "\n".join(
            f"{assignment.concepts[i]} -> {assignment.concepts[j]} (Node {i} -> Node {j})" for i, j in ps
        )

    prompt = render_prompt(
        template,
        {
            "Assignment": [f"Node {i}: {c}" for i, c in enumerate(assignment.concepts)],
            "Matrix": dag.edges,
            "Missed": pairs(fallacies.missed),
            "Spurious": pairs(fallacies.spurious),
        },
    )
    return _with_schema_revision(gateway, profile, prompt, "refine", assignment.domain, dag.n, sample_id)


@dataclass
class LoopConfig:
    m: int = 5
    tau: float = 0.6
    alpha: float = 1.0
    k_max: int = 10


@dataclass
class LoopResult:
    status: str  # "Success" | "Fail"
    assignment: ConceptAssignment
    iterations: int
    best_l_b: float
    trace: list  # per-iteration {"votes", "fallacies", "mismatch"}
    tokens: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "assignment": self.assignment.to_json(),
            "iterations": self.iterations,
            "best_l_b": self.best_l_b,
            "trace": [
                {
                    "votes": t["votes"].to_json(),
                    "fallacies": t["fallacies"].to_json(),
                    "mismatch": t["mismatch"].to_json(),
                }
                for t in self.trace
            ],
            "tokens": self.tokens,
        }


def run_loop(
    dag: Dag,
    domain: str,
    gateway,
    proposer_profile,
    verifier_profile,
    config: LoopConfig | None = None,
    sample_id=None,
) -> LoopResult:
    """Verify, score, and refine up to k_max iterations.

    Returns immediately with Success when a verification pass yields an
    empty fallacy set; otherwise returns the best-so-far assignment (the
    earliest iterate attaining the minimum L_b, since updates use a strict
    improvement test).
    """
    config = config or LoopConfig()
    tokens_before = gateway.ledger.totals()["total"]
    relations = analyze_causal_structure(dag)
    current = initial_assignment(dag, domain, gateway, proposer_profile, sample_id=sample_id)
    best_l_b = float("inf")
    best = current
    trace = []
    for t in range(1, config.k_max + 1):
        votes = counterfactual_verification(
            current, relations, dag, gateway, verifier_profile, m=config.m, sample_id=sample_id
        )
        mismatch = quantify_mismatch(votes, relations, alpha=config.alpha)
        fallacies = fallacy_analysis(votes, relations, tau=config.tau)
        trace.append({"votes": votes, "fallacies": fallacies, "mismatch": mismatch, "assignment": current})
        if mismatch.l_b < best_l_b:
            best_l_b = mismatch.l_b
            best = current
        if fallacies.empty():
            tokens = gateway.ledger.totals()["total"] - tokens_before
            return LoopResult(
                status="Success", assignment=current, iterations=t,
                best_l_b=best_l_b, trace=trace, tokens={"total": tokens},
            )
        if t < config.k_max:
            current = refine_assignment(
                current, fallacies, dag, gateway, proposer_profile, sample_id=sample_id
            )
    tokens = gateway.ledger.totals()["total"] - tokens_before
    return LoopResult(
        status="Fail", assignment=best, iterations=config.k_max,
        best_l_b=best_l_b, trace=trace, tokens={"total": tokens},
    )
