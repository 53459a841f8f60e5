"""Runtime session state.

A session is created after a successful single-sign-on and carries the
workflow instances the monitor tracks, the upstream cookie jar, and the
presence timestamps.  Sessions are mutable records owned by the session
store; everything here must stay deep-copyable and JSON-serializable
(the no-mutation-on-deny property is checked on serialized bytes).
"""

from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field

from .monitor import WorkflowInstance


@dataclass
class Session:
    id: str
    user_id: str
    federated_name: str
    methods: frozenset[str]
    assertion_issued_at: int
    created_at: float
    last_activity_at: float
    last_beacon_at: float
    token_present: bool = True
    token_absent_since: float | None = None
    instances: list[WorkflowInstance] = field(default_factory=list)
    upstream_cookies: dict[str, str] = field(default_factory=dict)
    terminated: bool = False
    end_reason: str | None = None


def new_session(
    user_id: str,
    federated_name: str,
    methods: frozenset[str],
    assertion_issued_at: int,
    now: float,
) -> Session:
    return Session(
        id=secrets.token_hex(16),
        user_id=user_id,
        federated_name=federated_name,
        methods=frozenset(methods),
        assertion_issued_at=assertion_issued_at,
        created_at=now,
        last_activity_at=now,
        last_beacon_at=now,
    )


def touched_workflows(session: Session) -> frozenset[str]:
    """Workflows ever instantiated in this session, active or not."""
    return frozenset(inst.workflow_id for inst in session.instances)


def active_instances(session: Session) -> list[WorkflowInstance]:
    return [inst for inst in session.instances if inst.active]


def session_fingerprint(session: Session) -> bytes:
    """Canonical byte serialization; equal bytes iff equal session state."""
    doc = {
        "id": session.id,
        "user_id": session.user_id,
        "federated_name": session.federated_name,
        "methods": sorted(session.methods),
        "assertion_issued_at": session.assertion_issued_at,
        "created_at": session.created_at,
        "last_activity_at": session.last_activity_at,
        "last_beacon_at": session.last_beacon_at,
        "token_present": session.token_present,
        "token_absent_since": session.token_absent_since,
        "instances": [
            {
                "workflow_id": inst.workflow_id,
                "current": sorted(inst.current),
                "active": inst.active,
                "started_at": inst.started_at,
            }
            for inst in session.instances
        ],
        "upstream_cookies": dict(sorted(session.upstream_cookies.items())),
        "terminated": session.terminated,
        "end_reason": session.end_reason,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
