"""Runtime configuration with documented defaults.

Everything here is deployment policy rather than document content:
confidence thresholds, incident quotas, throttling windows, and the
conflict relation between action kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import timedelta
from typing import FrozenSet, Mapping, Tuple

from .model import ActionKind


@dataclass(frozen=True)
class RuntimeConfig:
    # Confidence gates (inclusive thresholds)
    display_threshold: float = 0.10
    propose_threshold: float = 0.30
    execute_threshold: float = 0.70

    # Feedback-driven auto-disable
    disable_threshold: float = 0.30
    min_feedback_votes: int = 10

    # Incident creation
    incident_quota: int = 50
    quota_window: timedelta = timedelta(hours=24)
    default_incident_ttl: timedelta = timedelta(hours=4)

    # Operation queue
    impact_cooldown: timedelta = timedelta(minutes=30)
    impactful_kinds: FrozenSet[ActionKind] = frozenset(
        {ActionKind.CANCEL_MANAGEMENT_OPERATION}
    )
    # kind -> kinds it absorbs when pending on the same scoping values
    supersedes: Mapping[ActionKind, FrozenSet[ActionKind]] = field(
        default_factory=lambda: {}
    )

    # Ticket severity scale, highest first
    severity_scale: Tuple[str, ...] = ("A", "B", "C")

    # Graph execution
    call_depth_limit: int = 3
    context_key_cap: int = 256

    # Scoping keys used for actions that act on production resources
    resource_keys: Tuple[str, ...] = ("ServerName", "DatabaseName")

    # Prompt budget per serialized finding, in characters
    finding_budget: int = 1200

    # Default time window when an incident carries no impact window
    default_lookback: timedelta = timedelta(hours=24)

    def severity_rank(self, severity: str) -> int:
        try:
            return self.severity_scale.index(severity)
        except ValueError:
            return len(self.severity_scale)


DEFAULT_CONFIG = RuntimeConfig()
