"""State kept by the gateway: policy registry, sessions, audit log, oracle.

Two databases are deliberately separated behind facades: the access-control
side (ACDB: policy plus user→role bindings) and the identity side (IDB:
credentials).  The gateway process only ever reads through AcdbFacade and
therefore cannot observe password material; the IDP reads through IdbFacade.

The audit log is append-only with a monotonically increasing sequence
number and an optional on-disk journal; session records are handed out
under exclusive leases with commit/rollback so a denied request can never
leave a trace in session state.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import (
    LeaseTimeout,
    OracleUnavailable,
    PolicyValidationError,
    UnknownSession,
)
from .model import (
    Policy,
    TokenBinding,
    UpstreamCredentials,
    User,
    PasswordHash,
    validate_policy,
)
from .session import Session

# --- audit ------------------------------------------------------------------

AUDIT_ALLOW = "allow"
AUDIT_DENY = "deny"
AUDIT_LOGIN = "login"
AUDIT_LOGOUT = "logout"
AUDIT_TERMINATED = "terminated"
AUDIT_SSO_ISSUED = "sso_issued"
AUDIT_SSO_REJECTED = "sso_rejected"
AUDIT_TRAINING = "training"

JOURNAL_MAGIC = b"GATEJRNL1"

_EMPTY_DIGEST = hashlib.sha256(b"[]").hexdigest()


def params_digest(params: Mapping[str, Sequence[str]] | None) -> str:
    """Privacy-preserving digest of request parameters for the audit trail."""
    if not params:
        return _EMPTY_DIGEST
    pairs = sorted((name, value) for name, values in params.items() for value in values)
    blob = json.dumps(pairs, separators=(",", ":"), ensure_ascii=False).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    at: float
    user_id: str
    session_prefix: str
    page: str
    decision: str
    reason: str
    params_digest: str

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "at": self.at,
            "user_id": self.user_id,
            "session_prefix": self.session_prefix,
            "page": self.page,
            "decision": self.decision,
            "reason": self.reason,
            "params_digest": self.params_digest,
        }


class AuditLog:
    """Append-only decision trail, optionally journaled to disk.

    Journal format: magic header, then one frame per record — 4-byte
    big-endian payload length followed by the record as compact JSON.
    Truncated trailing frames (torn writes) are dropped on load.
    """

    def __init__(self, journal_path: Path | str | None = None):
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        self._next_seq = 1
        self._fh = None
        if journal_path is not None:
            self._open_journal(Path(journal_path))

    def _open_journal(self, path: Path) -> None:
        if path.exists():
            clean_end = self._replay(path)
            self._fh = path.open("r+b")
            # drop any torn trailing frame so new appends start on a boundary
            self._fh.seek(clean_end)
            self._fh.truncate()
        else:
            self._fh = path.open("wb")
            self._fh.write(JOURNAL_MAGIC)
            self._fh.flush()

    def _replay(self, path: Path) -> int:
        data = path.read_bytes()
        if data[: len(JOURNAL_MAGIC)] != JOURNAL_MAGIC:
            raise ValueError(f"{path}: not an audit journal")
        offset = len(JOURNAL_MAGIC)
        while offset + 4 <= len(data):
            (length,) = struct.unpack(">I", data[offset : offset + 4])
            if offset + 4 + length > len(data):
                break
            payload = data[offset + 4 : offset + 4 + length]
            doc = json.loads(payload)
            self._records.append(AuditRecord(**doc))
            offset += 4 + length
        if self._records:
            self._next_seq = self._records[-1].seq + 1
        return offset

    def append(
        self,
        *,
        at: float,
        decision: str,
        user_id: str = "-",
        session_id: str | None = None,
        page: str = "-",
        reason: str = "",
        params: Mapping[str, Sequence[str]] | None = None,
    ) -> AuditRecord:
        with self._lock:
            record = AuditRecord(
                seq=self._next_seq,
                at=at,
                user_id=user_id,
                session_prefix=session_id[:8] if session_id else "-",
                page=page,
                decision=decision,
                reason=reason,
                params_digest=params_digest(params),
            )
            self._next_seq += 1
            self._records.append(record)
            if self._fh is not None:
                payload = json.dumps(record.to_json(), separators=(",", ":")).encode()
                self._fh.write(struct.pack(">I", len(payload)) + payload)
                self._fh.flush()
            return record

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def query(
        self,
        user_id: str | None = None,
        start: float | None = None,
        end: float | None = None,
        decision: str | None = None,
    ) -> list[AuditRecord]:
        """Records filtered by user, decision, and half-open time range [start, end)."""
        out = []
        for rec in self.records():
            if user_id is not None and rec.user_id != user_id:
                continue
            if decision is not None and rec.decision != decision:
                continue
            if start is not None and rec.at < start:
                continue
            if end is not None and rec.at >= end:
                continue
            out.append(rec)
        return out

    def idle_report(
        self,
        user_id: str,
        start: float | None = None,
        end: float | None = None,
    ) -> list[tuple[str, float]]:
        """Per session of one user: the longest gap between consecutive Allows.

        Supports offline review of leave/idle behaviour without storing any
        parameter payloads; a single-Allow session reports a gap of zero.
        """
        allows = self.query(user_id=user_id, start=start, end=end, decision=AUDIT_ALLOW)
        by_session: dict[str, list[float]] = {}
        for rec in allows:
            by_session.setdefault(rec.session_prefix, []).append(rec.at)
        out = []
        for prefix in sorted(by_session):
            stamps = by_session[prefix]
            gap = max(
                (later - earlier for earlier, later in zip(stamps, stamps[1:])),
                default=0.0,
            )
            out.append((prefix, gap))
        return out

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


# --- sessions ------------------------------------------------------------------

class SessionLease:
    """Exclusive working copy of one session; discarded unless committed."""

    def __init__(self, store: "SessionStore", session_id: str, working: Session):
        self._store = store
        self._id = session_id
        self._working = working
        self._closed = False

    @property
    def session(self) -> Session:
        return self._working

    def commit(self) -> None:
        if self._closed:
            return
        self._store._publish(self._id, self._working)
        self._release()

    def rollback(self) -> None:
        if self._closed:
            return
        self._release()

    def _release(self) -> None:
        self._closed = True
        self._store._unlock(self._id)

    def __enter__(self) -> "SessionLease":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.rollback()


class SessionStore:
    """In-memory session table with per-session exclusive leases."""

    def __init__(self):
        self._mutex = threading.Lock()
        self._table: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}

    def create(self, session: Session) -> None:
        with self._mutex:
            self._table[session.id] = copy.deepcopy(session)
            self._locks[session.id] = threading.Lock()

    def get(self, session_id: str) -> Session | None:
        """Point-in-time snapshot; mutations to it never reach the store."""
        with self._mutex:
            session = self._table.get(session_id)
            return copy.deepcopy(session) if session is not None else None

    def ids(self) -> list[str]:
        with self._mutex:
            return sorted(self._table)

    def lease(self, session_id: str, timeout: float = 5.0) -> SessionLease:
        with self._mutex:
            lock = self._locks.get(session_id)
            if lock is None:
                raise UnknownSession(session_id)
        if not lock.acquire(timeout=timeout):
            raise LeaseTimeout(session_id)
        with self._mutex:
            stored = self._table.get(session_id)
        if stored is None:
            lock.release()
            raise UnknownSession(session_id)
        return SessionLease(self, session_id, copy.deepcopy(stored))

    def _publish(self, session_id: str, working: Session) -> None:
        with self._mutex:
            self._table[session_id] = copy.deepcopy(working)

    def _unlock(self, session_id: str) -> None:
        with self._mutex:
            lock = self._locks.get(session_id)
        if lock is not None and lock.locked():
            lock.release()


# --- host-state oracle ------------------------------------------------------------

class MemoryHostOracle:
    """Table-backed oracle for set queries; rows are dicts of column → value.

    Fixtures load from TSV (first line: column names).  The `available`
    flag simulates an unreachable host database so fail-closed behaviour
    can be exercised.
    """

    def __init__(self, tables: Mapping[str, Sequence[Mapping[str, str]]] | None = None):
        self.tables: dict[str, list[dict[str, str]]] = {
            name: [dict(row) for row in rows] for name, rows in (tables or {}).items()
        }
        self.available = True

    def select(
        self, table: str, column: str, filters: Sequence[tuple[str, str]]
    ) -> list[str]:
        if not self.available:
            raise OracleUnavailable(table)
        out = []
        for row in self.tables.get(table, []):
            if column not in row:
                continue
            if all(row.get(col) == value for col, value in filters):
                out.append(row[column])
        return out

    @classmethod
    def from_fixture_file(cls, path: Path | str, table: str | None = None) -> "MemoryHostOracle":
        path = Path(path)
        oracle = cls()
        oracle.load_table(table or path.stem, path)
        return oracle

    @classmethod
    def from_fixture_dir(cls, directory: Path | str) -> "MemoryHostOracle":
        oracle = cls()
        for path in sorted(Path(directory).glob("*.tsv")):
            oracle.load_table(path.stem, path)
        return oracle

    def load_table(self, table: str, path: Path) -> None:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines:
            self.tables[table] = []
            return
        columns = lines[0].split("\t")
        rows = []
        for line in lines[1:]:
            values = line.split("\t")
            rows.append(dict(zip(columns, values)))
        self.tables[table] = rows


# --- policy registry and facades ------------------------------------------------

@dataclass(frozen=True)
class UserBinding:
    """Access-control view of a user: roles and upstream account, no credentials."""

    user_id: str
    federated_name: str
    role_ids: frozenset[str]
    idp_id: str
    upstream_credentials: UpstreamCredentials | None


@dataclass(frozen=True)
class IdpCredential:
    """Identity view of a user: what the IDP needs to authenticate them."""

    user_id: str
    federated_name: str
    idp_id: str
    password: PasswordHash
    token_binding: TokenBinding | None


def _copy_policy(policy: Policy) -> Policy:
    return Policy(
        workflows=dict(policy.workflows),
        roles=dict(policy.roles),
        exclusions=dict(policy.exclusions),
    )


class Registry:
    """Validated, atomically swapped policy + user table.

    `update` hands a deep-enough copy to the mutator; the result replaces
    the live tables only if validate_policy returns no violations, so a
    rejected mutation leaves everything untouched.
    """

    def __init__(
        self,
        policy: Policy | None = None,
        users: Mapping[str, User] | None = None,
        on_commit: Callable[[Policy, dict[str, User]], None] | None = None,
    ):
        self._lock = threading.Lock()
        self._policy = policy if policy is not None else Policy()
        self._users: dict[str, User] = dict(users or {})
        self._on_commit = on_commit
        violations = validate_policy(self._policy, self._users)
        if violations:
            raise PolicyValidationError(violations)

    def policy(self) -> Policy:
        with self._lock:
            return self._policy

    def users(self) -> dict[str, User]:
        with self._lock:
            return dict(self._users)

    def update(self, mutate: Callable[[Policy, dict[str, User]], None]) -> None:
        with self._lock:
            draft_policy = _copy_policy(self._policy)
            draft_users = dict(self._users)
            mutate(draft_policy, draft_users)
            violations = validate_policy(draft_policy, draft_users)
            if violations:
                raise PolicyValidationError(violations)
            self._policy = draft_policy
            self._users = draft_users
            if self._on_commit is not None:
                self._on_commit(draft_policy, dict(draft_users))

    def replace(self, policy: Policy, users: Mapping[str, User]) -> None:
        def swap(draft_policy: Policy, draft_users: dict[str, User]) -> None:
            draft_policy.workflows = dict(policy.workflows)
            draft_policy.roles = dict(policy.roles)
            draft_policy.exclusions = dict(policy.exclusions)
            draft_users.clear()
            draft_users.update(users)

        self.update(swap)


class AcdbFacade:
    """What the gateway may know about principals: bindings, never secrets."""

    def __init__(self, registry: Registry):
        self._registry = registry

    def policy(self) -> Policy:
        return self._registry.policy()

    def binding(self, federated_name: str) -> UserBinding | None:
        for user in self._registry.users().values():
            if user.federated_name == federated_name:
                return self._as_binding(user)
        return None

    def binding_by_id(self, user_id: str) -> UserBinding | None:
        user = self._registry.users().get(user_id)
        return self._as_binding(user) if user is not None else None

    @staticmethod
    def _as_binding(user: User) -> UserBinding:
        return UserBinding(
            user_id=user.id,
            federated_name=user.federated_name,
            role_ids=user.role_ids,
            idp_id=user.idp_id,
            upstream_credentials=user.upstream_credentials,
        )


class IdbFacade:
    """What the IDP may know about principals: credentials, never policy."""

    def __init__(self, registry: Registry):
        self._registry = registry

    def credential(self, federated_name: str) -> IdpCredential | None:
        for user in self._registry.users().values():
            if user.federated_name == federated_name:
                return IdpCredential(
                    user_id=user.id,
                    federated_name=user.federated_name,
                    idp_id=user.idp_id,
                    password=user.password,
                    token_binding=user.token_binding,
                )
        return None


# --- disk layout -------------------------------------------------------------------

POLICY_FILENAME = "policy.xml"
JOURNAL_FILENAME = "audit.jrnl"


def open_stores(data_dir: Path | str | None) -> tuple[Registry, AuditLog]:
    """Registry + audit log bound to a data directory (or fully in-memory)."""
    if data_dir is None:
        return Registry(), AuditLog()
    from .training import export_xml, import_xml

    directory = Path(data_dir)
    directory.mkdir(parents=True, exist_ok=True)
    policy_path = directory / POLICY_FILENAME
    if policy_path.exists():
        policy, users = import_xml(policy_path.read_bytes())
    else:
        policy, users = Policy(), {}

    def save(policy: Policy, users: dict[str, User]) -> None:
        tmp = policy_path.with_suffix(".tmp")
        tmp.write_bytes(export_xml(policy, users))
        tmp.replace(policy_path)

    registry = Registry(policy, users, on_commit=save)
    return registry, AuditLog(directory / JOURNAL_FILENAME)
