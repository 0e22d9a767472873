"""Document registry with version tracking and feedback-driven disabling.

Uploading a document bumps its version and starts a fresh rating slate.
Approval is a pure fold over the feedback log per (id, version); when it
drops below the disable threshold with enough votes, the document is
disabled and a work item is recorded for its owner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .config import DEFAULT_CONFIG, RuntimeConfig
from .model import AutoTsgDoc, parse_document
from .validate import ValidationReport, validate_document
from .values import render_datetime


@dataclass
class FeedbackRecord:
    tsg_id: str
    version: int
    verdict: str  # up | down
    text: Optional[str] = None
    timestamp: Optional[datetime] = None

    def to_dict(self) -> dict:
        out = {"tsg_id": self.tsg_id, "version": self.version, "verdict": self.verdict}
        if self.text:
            out["text"] = self.text
        if self.timestamp is not None:
            out["timestamp"] = render_datetime(self.timestamp)
        return out


@dataclass
class ApprovalSummary:
    tsg_id: str
    version: int
    up: int
    down: int
    disabled: bool
    work_item: Optional[str] = None

    @property
    def rate(self) -> Optional[float]:
        total = self.up + self.down
        return self.up / total if total else None

    def to_dict(self) -> dict:
        return {
            "tsg_id": self.tsg_id,
            "version": self.version,
            "up": self.up,
            "down": self.down,
            "approval_rate": self.rate,
            "disabled": self.disabled,
            "work_item": self.work_item,
        }


class UnknownTsgError(KeyError):
    pass


class TsgRegistry:
    def __init__(self, config: RuntimeConfig = DEFAULT_CONFIG, journal_path: Optional[Path] = None):
        self.config = config
        self._docs: Dict[str, AutoTsgDoc] = {}
        self.feedback: List[FeedbackRecord] = []
        self.work_items: List[dict] = []
        self.journal_path = Path(journal_path) if journal_path else None

    # -- documents ------------------------------------------------------
    def add(self, doc: AutoTsgDoc) -> AutoTsgDoc:
        self._docs[doc.id] = doc
        return doc

    def upload(self, doc_id: str, text: str) -> Tuple[AutoTsgDoc, ValidationReport]:
        """Parse + validate; on success store with a bumped version."""
        doc = parse_document(text, doc_id=doc_id)
        doc = AutoTsgDoc(
            id=doc_id,
            metadata=doc.metadata,
            triggers=doc.triggers,
            checks=doc.checks,
            explanations=doc.explanations,
            actions=doc.actions,
        )
        report = validate_document(doc)
        if not report.ok:
            return doc, report
        previous = self._docs.get(doc_id)
        version = previous.version + 1 if previous else 1
        stored = doc.with_version(version, enabled=True)
        self._docs[doc_id] = stored
        return stored, report

    def get(self, doc_id: str) -> AutoTsgDoc:
        if doc_id not in self._docs:
            raise UnknownTsgError(doc_id)
        return self._docs[doc_id]

    def get_enabled(self, doc_id: str) -> Optional[AutoTsgDoc]:
        doc = self._docs.get(doc_id)
        return doc if doc is not None and doc.enabled else None

    def enabled_docs(self) -> List[AutoTsgDoc]:
        return [d for d in self._docs.values() if d.enabled]

    def all_docs(self) -> List[AutoTsgDoc]:
        return list(self._docs.values())

    def set_enabled(self, doc_id: str, enabled: bool) -> AutoTsgDoc:
        doc = self.get(doc_id)
        updated = doc.with_version(doc.version, enabled=enabled)
        self._docs[doc_id] = updated
        return updated

    # -- feedback -------------------------------------------------------
    def submit_feedback(self, record: FeedbackRecord) -> ApprovalSummary:
        doc = self.get(record.tsg_id)
        if record.verdict not in ("up", "down"):
            raise ValueError(f"verdict must be 'up' or 'down', got {record.verdict!r}")
        self.feedback.append(record)
        if self.journal_path is not None:
            with self.journal_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        return self.approval(record.tsg_id, record.version, doc)

    def approval(
        self, tsg_id: str, version: Optional[int] = None, doc: Optional[AutoTsgDoc] = None
    ) -> ApprovalSummary:
        doc = doc or self.get(tsg_id)
        version = doc.version if version is None else version
        up = sum(
            1
            for r in self.feedback
            if r.tsg_id == tsg_id and r.version == version and r.verdict == "up"
        )
        down = sum(
            1
            for r in self.feedback
            if r.tsg_id == tsg_id and r.version == version and r.verdict == "down"
        )
        total = up + down
        disabled = not doc.enabled
        work_item = None
        if (
            doc.enabled
            and version == doc.version
            and total >= self.config.min_feedback_votes
            and up / total < self.config.disable_threshold
        ):
            self.set_enabled(tsg_id, False)
            disabled = True
            work_item = (
                f"Review {tsg_id} v{version}: approval {up}/{total} fell below "
                f"{self.config.disable_threshold:.0%}; assigned to {doc.metadata.owner or 'owner'}"
            )
            self.work_items.append(
                {"tsg_id": tsg_id, "version": version, "owner": doc.metadata.owner, "note": work_item}
            )
        return ApprovalSummary(tsg_id, version, up, down, disabled, work_item)
