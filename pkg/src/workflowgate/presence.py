"""Session presence supervision.

The injected client script posts periodic beacons carrying two booleans:
did the user do anything since the last beacon, and is the hardware token
still attached.  From those and an injectable clock the gateway derives a
green/red status and a sweeper terminates sessions that went quiet, lost
their token, or stopped reporting altogether.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import UnknownSession
from .store import AUDIT_TERMINATED, AuditLog, SessionStore

if TYPE_CHECKING:
    from .session import Session

STATUS_GREEN = "green"
STATUS_RED = "red"
STATUS_EXPIRED = "expired"

END_INACTIVITY = "inactivity"
END_TOKEN_ABSENT = "token_absent"
END_BEACON_LOST = "beacon_lost"
END_ADMIN_ACTION = "admin_action"
END_LOGOUT = "logout"
END_REAUTH_REQUIRED = "reauth_required"


@dataclass(frozen=True)
class PresenceConfig:
    beacon_period: float = 10.0
    activity_window: float = 30.0
    inactivity_timeout: float = 300.0
    token_grace: float = 30.0
    beacon_timeout: float = 35.0
    sweep_period: float = 5.0


@dataclass(frozen=True)
class PresenceState:
    session_id: str
    last_beacon_at: float
    last_activity_at: float
    token_present: bool
    status: str


def status_of(session: "Session", now: float, config: PresenceConfig) -> str:
    """Green iff token present and recent activity; expired once beacons stop."""
    if now - session.last_beacon_at > config.beacon_timeout:
        return STATUS_EXPIRED
    if session.token_present and now - session.last_activity_at <= config.activity_window:
        return STATUS_GREEN
    return STATUS_RED


def presence_of(session: "Session", now: float, config: PresenceConfig) -> PresenceState:
    return PresenceState(
        session_id=session.id,
        last_beacon_at=session.last_beacon_at,
        last_activity_at=session.last_activity_at,
        token_present=session.token_present,
        status=status_of(session, now, config),
    )


def heartbeat(
    sessions: SessionStore,
    session_id: str,
    user_active: bool,
    token_present: bool,
    now: float,
    config: PresenceConfig,
) -> PresenceState:
    """Apply one beacon to the session and return the derived status."""
    with sessions.lease(session_id) as lease:
        session = lease.session
        if session.terminated:
            raise UnknownSession(session_id)
        session.last_beacon_at = now
        if user_active:
            session.last_activity_at = now
        if token_present:
            session.token_present = True
            session.token_absent_since = None
        else:
            if session.token_present:
                session.token_absent_since = now
            session.token_present = False
        state = presence_of(session, now, config)
        lease.commit()
    return state


def terminate_session(
    sessions: SessionStore,
    audit: AuditLog,
    session_id: str,
    reason: str,
    now: float,
    decision: str = AUDIT_TERMINATED,
) -> bool:
    """Mark a session dead and audit it; False if it was already dead/absent."""
    try:
        lease = sessions.lease(session_id)
    except UnknownSession:
        return False
    with lease:
        session = lease.session
        if session.terminated:
            return False
        session.terminated = True
        session.end_reason = reason
        user_id = session.user_id
        lease.commit()
    audit.append(
        at=now,
        decision=decision,
        user_id=user_id,
        session_id=session_id,
        page="-",
        reason=reason,
    )
    return True


def sweep(
    sessions: SessionStore,
    audit: AuditLog,
    now: float,
    config: PresenceConfig,
) -> list[str]:
    """Terminate every session that outlived one of the three deadlines.

    Reason precedence: a silent client is reported as beacon loss before
    anything its stale flags might suggest; a reporting client loses its
    session to token absence before plain inactivity.
    """
    ended: list[str] = []
    for session_id in sessions.ids():
        session = sessions.get(session_id)
        if session is None or session.terminated:
            continue
        reason = None
        if now - session.last_beacon_at > config.beacon_timeout:
            reason = END_BEACON_LOST
        elif (
            not session.token_present
            and session.token_absent_since is not None
            and now - session.token_absent_since > config.token_grace
        ):
            reason = END_TOKEN_ABSENT
        elif now - session.last_activity_at > config.inactivity_timeout:
            reason = END_INACTIVITY
        if reason is not None and terminate_session(
            sessions, audit, session_id, reason, now
        ):
            ended.append(session_id)
    return ended
