"""Finding prioritization: prompt construction, ranking parse, gating, summary.

A ranker client turns a prompt into a completion. The deterministic stub
scores findings by token overlap with the problem statement so the whole
pipeline stays a pure function offline; a replay client serves recorded
completions for golden tests. Parsing is deliberately forgiving: names are
matched fuzzily (models mistype), every finding always comes back exactly
once, and a completely unusable completion degrades to type-precedence
ordering rather than failing the diagnosis.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

from .actions import ActionRequest
from .config import DEFAULT_CONFIG, RuntimeConfig
from .executor import Finding
from .model import ActionKind, TSG_TYPE_PRECEDENCE, TsgType

RANK_MARKER = "## TASK: RANK FINDINGS"
SUMMARY_MARKER = "## TASK: SUMMARIZE"

NO_PROBLEM_STATEMENT = "(no problem statement provided)"

SUMMARY_HEADINGS = ("Problem Description", "Findings", "Automatic Actions", "Suggested Actions")


class RankingUnavailable(RuntimeError):
    """No usable ranking line in the completion."""


@dataclass(frozen=True)
class ProductProfile:
    """Per-product ranking policy: the architecture narrative plus thresholds.

    Threshold fields left as None fall back to the runtime configuration.
    """

    description: str
    display_threshold: Optional[float] = None
    propose_threshold: Optional[float] = None
    execute_threshold: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError("product description must be non-empty")


@dataclass
class RankedFinding:
    finding: Finding
    probability: float
    explanation: str
    display: bool = True
    actions_gate: str = "Skip"  # Execute | Propose | Skip

    def to_dict(self) -> dict:
        return {
            "tsg_id": self.finding.tsg_id,
            "probability": self.probability,
            "explanation": self.explanation,
            "display": self.display,
            "actions_gate": self.actions_gate,
        }


@dataclass
class SummaryDoc:
    problem_statement: str
    findings_narrative: str
    automatic_actions: List[str] = field(default_factory=list)
    suggested_actions: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "problem_statement": self.problem_statement,
            "findings": self.findings_narrative,
            "automatic_actions": list(self.automatic_actions),
            "suggested_actions": list(self.suggested_actions),
        }


class RankerClient(Protocol):
    def complete(self, prompt: str) -> str:  # pragma: no cover - protocol
        ...


# ---------------------------------------------------------------------------
# Prompt construction

_RULES_BLOCK = """RULES:
- You can ONLY use the given findings.
- ALL findings need to be returned.
- Answer ONLY as a list in CSV format.
- One row per finding.
- Each row has:
 - (a) the name of the finding.
 - (c) a probability estimate that it applies.
 - (d) a one-line explanation of why it applies.
"""

_ONE_SHOT_EXAMPLE = """EXAMPLE:

Product: "MageDB is an analytical database system that stores data in memory \
on multiple nodes. Nodes are provisioned for a specific database and billed to \
the customer. Nodes are deployed on Kubernetes and managed by a central control \
service (CCS). Customers write queries, send them to a frontend endpoint on a \
single node using a tabular data connection. An interpreter compiles and runs \
queries by sending generated scala code to each backend node. The product is \
updated once a week. An Upgrade causes downtime. The data is backed up in \
remote storage, and when a new node is provisioned for a database, the \
in-memory data is hydrated from it."

Problem Statement: "The customer is complaining that they receive an error \
'the interpreter cannot be instantiated'. This is new and did not occur last \
week when submitting the same queries."

Auto-TSG Findings:

- **Name:** QueryFailures
Category: Availability
Explanation: Query <cd39> failed with error 'connection lost' after running \
for 2:38 minutes. All nodes returned data but the frontend (node 541) failed \
to merge and sort the results.
Query <sd31> failed to compile after 0.1 seconds.
- **Name:** ProcessCrash
Category: Availability
Explanation: The frontend process on node 541 crashes with an out-of-memory \
error trying to allocate space during a data merge operation.
- **Name:** ConnectivityFailure
Category: Availability
Explanation: we detected 2352 failed login attempts. All login attempts \
failed with 'Frontend not found.'
- **Name:** LongTransaction
Category: Performance
Explanation: session <26cd> is running a long transaction filling up \
in-memory log space. The transaction has been running for 4.53 hours, execute \
26 queries and moved 10.5 GB of data.

Output:

LongTransaction, 90%, transaction taking memory
ProcessCrash, 50%, lack of memory caused frontend crash
ConnevityFailure, 20%, crash caused login failures
QueryFailure, 20%, crash causes query failures
"""


def serialize_finding(finding: Finding, *, budget: int = 1200) -> str:
    """Name / Category / Explanation block, truncated to the budget."""
    parts = []
    if finding.headline:
        parts.append(finding.headline.strip())
    for text in finding.explanation_texts():
        if text and text.strip() and text.strip() not in parts:
            parts.append(text.strip())
    explanation = " ".join(" ".join(parts).split()) or "(no explanation rendered)"
    if len(explanation) > budget:
        explanation = explanation[: max(0, budget - 14)].rstrip() + " …(truncated)"
    return (
        f"- **Name:** {finding.tsg_id}\n"
        f"Category: {finding.tsg_type}\n"
        f"Explanation: {explanation}"
    )


def build_ranking_prompt(
    profile: ProductProfile,
    problem_statement: str,
    findings: Sequence[Finding],
    *,
    budget: int = 1200,
) -> str:
    statement = problem_statement.strip() or NO_PROBLEM_STATEMENT
    blocks = [
        RANK_MARKER,
        "",
        "You are given:",
        "1. A description of a product.",
        "2. A statement about a specific problem.",
        "3. A list of findings about the impacted resource.",
        "",
        "TASK:",
        "To return a sorted list of findings given in (3) that applies to the "
        "problem in (2) based on the product (in (1)). Think of how findings "
        "relate to one another.",
        "",
        _RULES_BLOCK,
        _ONE_SHOT_EXAMPLE,
        f'Product: "{profile.description}"',
        "",
        f'Problem Statement: "{statement}"',
        "",
        "Auto-TSG Findings:",
        "",
    ]
    for finding in findings:
        blocks.append(serialize_finding(finding, budget=budget))
    blocks.append("")
    blocks.append("Output:")
    return "\n".join(blocks) + "\n"


def build_summary_prompt(
    ranked: Sequence[RankedFinding],
    executed: Sequence[str],
    proposed: Sequence[str],
    problem_statement: str,
) -> str:
    statement = problem_statement.strip() or NO_PROBLEM_STATEMENT
    lines = [
        SUMMARY_MARKER,
        "",
        "Summarize a diagnostic session for a site reliability engineer.",
        "Write four sections with exactly these headings: "
        + ", ".join(SUMMARY_HEADINGS) + ".",
        "Restate the problem, explain how the findings relate (most likely "
        "cause first), then list automatic actions taken and suggested "
        "follow-ups as bullet points.",
        "",
        f'Problem Statement: "{statement}"',
        "",
        "Ranked Findings:",
    ]
    for item in ranked:
        lines.append(
            f"- {item.finding.tsg_id} ({item.probability:.0%}): {item.explanation}"
        )
    lines.append("")
    lines.append("Actions taken automatically:")
    lines.extend([f"- {a}" for a in executed] or ["- (none)"])
    lines.append("")
    lines.append("Actions proposed:")
    lines.extend([f"- {a}" for a in proposed] or ["- (none)"])
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing

def _levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def _match_name(raw: str, names: Sequence[str]) -> Optional[str]:
    """Exact case-insensitive match first, then nearest within a typo bound."""
    lowered = raw.lower()
    for name in names:
        if name.lower() == lowered:
            return name
    bound = max(2, round(0.2 * len(raw)))
    best: Optional[str] = None
    best_distance = bound + 1
    for name in names:
        distance = _levenshtein(lowered, name.lower())
        if distance < best_distance:
            best_distance = distance
            best = name
    return best if best_distance <= bound else None


def _parse_percent(raw: str) -> Optional[float]:
    text = raw.strip().rstrip("%").strip()
    try:
        value = float(text)
    except ValueError:
        return None
    if raw.strip().endswith("%") or value > 1:
        value /= 100.0
    return min(max(value, 0.0), 1.0)


def parse_ranking_output(completion: str, findings: Sequence[Finding]) -> List[RankedFinding]:
    """Parse `Name, NN%, explanation` lines; every finding is returned once."""
    by_id = {f.tsg_id: f for f in findings}
    names = list(by_id)
    ranked: List[RankedFinding] = []
    claimed: Dict[str, RankedFinding] = {}

    for line in completion.splitlines():
        line = line.strip().lstrip("-").strip()
        if not line or "," not in line:
            continue
        pieces = line.split(",", 2)
        if len(pieces) < 2:
            continue
        name = _match_name(pieces[0].strip(), names)
        if name is None or name in claimed:
            continue
        probability = _parse_percent(pieces[1])
        if probability is None:
            continue
        explanation = pieces[2].strip() if len(pieces) > 2 else ""
        item = RankedFinding(by_id[name], probability, explanation)
        claimed[name] = item
        ranked.append(item)

    if not ranked:
        raise RankingUnavailable("no parseable ranking line in completion")
    for name in names:
        if name not in claimed:
            ranked.append(RankedFinding(by_id[name], 0.0, "(not ranked)"))
    return ranked


def fallback_ranking(findings: Sequence[Finding]) -> List[RankedFinding]:
    """Type-precedence ordering used when no ranking is available.

    Confidence is capped below the execute threshold: without a ranking the
    system proposes at most, it never auto-executes.
    """
    type_probability = {
        TsgType.CRITICAL.value: 0.5,
        TsgType.WARNING.value: 0.3,
        TsgType.INFORMATIONAL.value: 0.1,
    }
    return [
        RankedFinding(
            f,
            type_probability.get(f.tsg_type, 0.1),
            "(ranking unavailable; ordered by guide type)",
        )
        for f in findings
    ]


def sort_for_display(ranked: List[RankedFinding]) -> List[RankedFinding]:
    return sorted(
        ranked,
        key=lambda r: (
            -r.probability,
            TSG_TYPE_PRECEDENCE.get(TsgType(r.finding.tsg_type), 3),
            r.finding.tsg_id,
        ),
    )


# ---------------------------------------------------------------------------
# Gating

@dataclass
class PlannedAction:
    request: ActionRequest
    tsg_id: str
    probability: float
    decision: str  # execute | propose | skip | suppressed
    suppressed_by: Optional[str] = None

    def to_dict(self) -> dict:
        out = {
            "action": self.request.to_dict(),
            "probability": self.probability,
            "decision": self.decision,
        }
        if self.suppressed_by:
            out["suppressed_by"] = self.suppressed_by
        return out


def _threshold(profile: Optional[ProductProfile], field_name: str, fallback: float) -> float:
    if profile is not None:
        value = getattr(profile, field_name)
        if value is not None:
            return value
    return fallback


def _conflicts(a: ActionRequest, b: ActionRequest, config: RuntimeConfig) -> bool:
    if a.scoping_key() != b.scoping_key() or not len(a.scoping):
        return False
    if a.kind == b.kind and a.kind is not ActionKind.CALL_AUTO_TSG:
        return True
    return b.kind in config.supersedes.get(a.kind, frozenset()) or a.kind in config.supersedes.get(
        b.kind, frozenset()
    )


def gate(
    ranked: List[RankedFinding],
    config: RuntimeConfig = DEFAULT_CONFIG,
    profile: Optional[ProductProfile] = None,
) -> Tuple[List[RankedFinding], List[PlannedAction]]:
    """Set display flags and action gates, then prune conflicting actions.

    Thresholds are inclusive and come from the product profile when it sets
    them. When two findings' actions conflict (same scoping values, related
    kinds), only the higher-probability finding's action survives.
    """
    display_at = _threshold(profile, "display_threshold", config.display_threshold)
    propose_at = _threshold(profile, "propose_threshold", config.propose_threshold)
    execute_at = _threshold(profile, "execute_threshold", config.execute_threshold)
    for item in ranked:
        item.display = item.probability >= display_at
        if item.probability >= execute_at:
            item.actions_gate = "Execute"
        elif item.probability >= propose_at:
            item.actions_gate = "Propose"
        else:
            item.actions_gate = "Skip"

    plan: List[PlannedAction] = []
    kept: List[PlannedAction] = []
    for item in sort_for_display(list(ranked)):
        for request in item.finding.actions:
            planned = PlannedAction(
                request,
                item.finding.tsg_id,
                item.probability,
                item.actions_gate.lower(),
            )
            winner = next(
                (
                    p
                    for p in kept
                    if p.decision != "skip" and _conflicts(p.request, request, config)
                ),
                None,
            )
            if winner is not None:
                planned.decision = "suppressed"
                planned.suppressed_by = f"{winner.tsg_id}/{winner.request.step}"
            else:
                kept.append(planned)
            plan.append(planned)
    return ranked, plan


# ---------------------------------------------------------------------------
# Summaries

def parse_summary(completion: str) -> Optional[SummaryDoc]:
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for line in completion.splitlines():
        stripped = line.strip().lstrip("#").strip()
        if stripped in SUMMARY_HEADINGS:
            current = stripped
            sections[current] = []
            continue
        if current is not None:
            sections[current].append(line.rstrip())
    if set(sections) != set(SUMMARY_HEADINGS):
        return None

    def text_of(heading: str) -> str:
        return "\n".join(sections[heading]).strip()

    def bullets_of(heading: str) -> List[str]:
        items = []
        for line in sections[heading]:
            stripped = line.strip()
            if stripped.startswith("- "):
                items.append(stripped[2:].strip())
            elif stripped.startswith("-"):
                items.append(stripped[1:].strip())
        return [i for i in items if i]

    return SummaryDoc(
        problem_statement=text_of("Problem Description"),
        findings_narrative=text_of("Findings"),
        automatic_actions=bullets_of("Automatic Actions"),
        suggested_actions=bullets_of("Suggested Actions"),
    )


def mechanical_summary(
    ranked: Sequence[RankedFinding],
    executed: Sequence[str],
    proposed: Sequence[str],
    problem_statement: str,
) -> SummaryDoc:
    """Template-generated fallback so a summary always exists."""
    if not ranked:
        narrative = "No findings matched the current context."
    else:
        lines = []
        for item in sort_for_display(list(ranked)):
            if not item.display:
                continue
            lines.append(
                f"- {item.finding.tsg_id} ({item.finding.tsg_type}, "
                f"{item.probability:.0%}): {item.explanation or item.finding.headline or ''}".rstrip()
            )
        narrative = "\n".join(lines) or "No findings cleared the display threshold."
    return SummaryDoc(
        problem_statement=problem_statement.strip() or NO_PROBLEM_STATEMENT,
        findings_narrative=narrative,
        automatic_actions=list(executed),
        suggested_actions=list(proposed),
    )


def summarize(
    ranked: Sequence[RankedFinding],
    executed: Sequence[str],
    proposed: Sequence[str],
    problem_statement: str,
    client: Optional[RankerClient],
) -> SummaryDoc:
    """LLM summary with a guaranteed mechanical fallback."""
    if client is not None and ranked:
        prompt = build_summary_prompt(ranked, executed, proposed, problem_statement)
        try:
            parsed = parse_summary(client.complete(prompt))
        except Exception:
            parsed = None
        if parsed is not None:
            return parsed
    return mechanical_summary(ranked, executed, proposed, problem_statement)


# ---------------------------------------------------------------------------
# Clients

_WORD_RE = re.compile(r"[a-z0-9]+")


def _words(text: str) -> set:
    return set(_WORD_RE.findall(text.lower()))


def stub_rank(
    problem_statement: str,
    findings: Sequence[Finding],
) -> str:
    """Deterministic CSV ranking from token overlap with the problem statement.

    The best-overlapping finding gets 90% and the rest scale linearly; when
    nothing overlaps every finding gets a neutral 50%. Ties order by guide
    type precedence, then id.
    """
    problem_words = _words(problem_statement)
    scored: List[Tuple[float, int, str, Finding, int]] = []
    for finding in findings:
        text = " ".join(
            [finding.tsg_id, " ".join(finding.topics), finding.headline or ""]
            + finding.explanation_texts()
        )
        finding_words = _words(text)
        union = problem_words | finding_words
        overlap = len(problem_words & finding_words) / len(union) if union else 0.0
        shared = len(problem_words & finding_words)
        scored.append(
            (
                overlap,
                TSG_TYPE_PRECEDENCE.get(TsgType(finding.tsg_type), 3),
                finding.tsg_id,
                finding,
                shared,
            )
        )
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    max_overlap = max((t[0] for t in scored), default=0.0)
    lines = []
    for overlap, _, _, finding, shared in scored:
        percent = round(90 * overlap / max_overlap) if max_overlap > 0 else 50
        lines.append(
            f"{finding.tsg_id}, {percent}%, "
            f"shares {shared} term(s) with the problem statement"
        )
    return "\n".join(lines) + "\n"


class StubRankerClient:
    """Pure offline client: ranks by token overlap, never summarizes."""

    def complete(self, prompt: str) -> str:
        if prompt.startswith(RANK_MARKER):
            problem, findings = _parse_rank_prompt(prompt)
            return stub_rank(problem, findings)
        # Summary prompts fall through to the mechanical fallback.
        return ""


def _parse_rank_prompt(prompt: str) -> Tuple[str, List[Finding]]:
    """Recover the real problem statement and finding blocks from a prompt."""
    tail = prompt
    marker = "Output:\n"
    first_output = prompt.find(marker)
    if first_output >= 0:
        tail = prompt[first_output + len(marker):]

    problem = ""
    m = re.search(r'Problem Statement: "(.*?)"\n', tail, flags=re.DOTALL)
    if m:
        problem = m.group(1)

    findings: List[Finding] = []
    for block in re.finditer(
        r"- \*\*Name:\*\* (?P<name>.+?)\nCategory: (?P<cat>.+?)\nExplanation: (?P<expl>.*?)(?=\n- \*\*Name:|\n\nOutput:|\Z)",
        tail,
        flags=re.DOTALL,
    ):
        from .executor import StepOutcome

        findings.append(
            Finding(
                tsg_id=block.group("name").strip(),
                version=1,
                tsg_type=block.group("cat").strip()
                if block.group("cat").strip() in [t.value for t in TsgType]
                else TsgType.INFORMATIONAL.value,
                topics=(),
                activated=True,
                outcomes=[
                    StepOutcome(
                        step="prompt",
                        kind="explanation",
                        status="Fired",
                        explanation_md=block.group("expl").strip(),
                    )
                ],
                actions=[],
                headline=None,
            )
        )
    return problem, findings


class ReplayClient:
    """Serves recorded completions.

    File format: blocks introduced by ``--- prompt-sha256: <hex or *>`` and
    closed by ``--- end``. A hex hash matches that exact prompt; ``*``
    blocks are consumed in order for any prompt without a hash match.
    """

    def __init__(self, path: Path):
        self.by_hash: Dict[str, str] = {}
        self.wildcards: List[str] = []
        self._load(Path(path).read_text(encoding="utf-8"))

    def _load(self, text: str) -> None:
        key: Optional[str] = None
        buffer: List[str] = []
        for line in text.splitlines():
            if line.startswith("--- prompt-sha256:"):
                key = line.split(":", 1)[1].strip()
                buffer = []
            elif line.strip() == "--- end":
                body = "\n".join(buffer)
                if key == "*":
                    self.wildcards.append(body)
                elif key:
                    self.by_hash[key] = body
                key = None
            elif key is not None:
                buffer.append(line)

    def complete(self, prompt: str) -> str:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        if digest in self.by_hash:
            return self.by_hash[digest]
        if self.wildcards:
            return self.wildcards.pop(0)
        raise KeyError(f"no replayed completion for prompt sha256 {digest}")


def rank_findings(
    profile: ProductProfile,
    problem_statement: str,
    findings: Sequence[Finding],
    client: Optional[RankerClient],
    *,
    budget: int = 1200,
) -> Tuple[List[RankedFinding], bool]:
    """Rank activated findings; returns (ranked, used_fallback)."""
    activated = [f for f in findings if f.activated]
    if not activated:
        return [], False
    if client is None:
        return fallback_ranking(activated), True
    prompt = build_ranking_prompt(profile, problem_statement, activated, budget=budget)
    try:
        completion = client.complete(prompt)
        return parse_ranking_output(completion, activated), False
    except RankingUnavailable:
        return fallback_ranking(activated), True
