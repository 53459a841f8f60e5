"""The reference monitor.

Tracks, per session, which workflows are live and which FSM states each
one may currently be in (a set, NFA-style), and decides for every request
whether some recorded workflow explains it.  Anything unexplained is
denied; a denial never changes session state so the user can retry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from .errors import NoWorkflowAvailable, OracleUnavailable
from .model import (
    HostStateOracle,
    PageId,
    Policy,
    Transition,
    Workflow,
    allowed_workflows,
    eval_param_rule,
)

if TYPE_CHECKING:
    from .session import Session
    from .store import UserBinding

ALLOW = "allow"
DENY = "deny"

REASON_NO_SUCCESSOR = "no_successor"
REASON_NOT_AUTHORISED = "not_authorised"
REASON_EXCLUSION_VIOLATED = "exclusion_violated"
REASON_ORACLE_ERROR = "oracle_error"


@dataclass
class WorkflowInstance:
    """One live (or burnt-out) run of a workflow inside a session."""

    workflow_id: str
    current: frozenset[str]
    active: bool = True
    started_at: float = 0.0


@dataclass(frozen=True)
class MonitorRequest:
    page: PageId
    params: Mapping[str, Sequence[str]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "params", {name: tuple(vals) for name, vals in self.params.items()}
        )


@dataclass(frozen=True)
class Decision:
    verdict: str
    advanced: tuple[tuple[str, frozenset[str]], ...] = ()
    spawned: tuple[str, ...] = ()
    deactivated: tuple[str, ...] = ()
    reason: str | None = None
    fallback: PageId | None = None

    @property
    def is_allow(self) -> bool:
        return self.verdict == ALLOW


def params_match(
    transition: Transition, request: MonitorRequest, oracle: HostStateOracle | None
) -> bool:
    """Strict match: same parameter name set, every value passes its rule.

    Surplus request parameters fail the match (deny-by-default), as does a
    missing declared parameter, even under an `any` rule.  Multi-valued
    parameters must satisfy the rule for every value.
    """
    rules = transition.params
    if set(request.params) != set(rules):
        return False
    for name, rule in rules.items():
        values = request.params[name]
        if not values:
            return False
        for value in values:
            if not eval_param_rule(rule, value, request.params, oracle):
                return False
    return True


def successor_set(
    workflow: Workflow,
    current: frozenset[str],
    request: MonitorRequest,
    oracle: HostStateOracle | None,
) -> frozenset[str]:
    """States reachable from `current` by one transition matching the request."""
    out: set[str] = set()
    for t in workflow.transitions:
        if t.from_state in current and t.page == request.page and params_match(t, request, oracle):
            out.add(t.to_state)
    return frozenset(out)


def apply_exclusion(session: "Session", candidate_workflow: str, policy: Policy) -> bool:
    """True iff starting candidate_workflow would breach a conflict wall.

    Blocked when some exclusion set contains the candidate together with any
    workflow this session has ever instantiated (deactivated ones count; the
    wall is monotone).  Re-spawning the same workflow is never self-blocking.
    """
    touched = {inst.workflow_id for inst in session.instances}
    touched.discard(candidate_workflow)
    if not touched:
        return False
    for exclusion in policy.exclusions.values():
        if candidate_workflow in exclusion.workflow_ids and touched & exclusion.workflow_ids:
            return True
    return False


def fallback_page(
    user: "UserBinding", policy: Policy, base_page: PageId | None = None
) -> PageId:
    """Where to send the user after a denial: base page or lowest workflow start."""
    if base_page is not None:
        return base_page
    for wf_id in sorted(allowed_workflows(user, policy)):
        wf = policy.workflows.get(wf_id)
        if wf is not None:
            return wf.start_page
    raise NoWorkflowAvailable(user.user_id)


def _safe_fallback(user, policy, base_page):
    try:
        return fallback_page(user, policy, base_page)
    except NoWorkflowAvailable:
        return None


def evaluate(
    session: "Session",
    request: MonitorRequest,
    policy: Policy,
    oracle: HostStateOracle | None,
    user: "UserBinding",
    base_page: PageId | None = None,
    now: float = 0.0,
) -> Decision:
    """Decide one request against one session; mutate the session only on Allow.

    The caller holds an exclusive lease on the session and is responsible
    for committing (Allow) or discarding (Deny) the mutation.
    """
    allowed = allowed_workflows(user, policy)
    try:
        advancing: list[tuple[WorkflowInstance, frozenset[str]]] = []
        diverging: list[WorkflowInstance] = []
        for inst in session.instances:
            if not inst.active:
                continue
            wf = policy.workflows.get(inst.workflow_id)
            succ = successor_set(wf, inst.current, request, oracle) if wf else frozenset()
            if succ:
                advancing.append((inst, succ))
            else:
                diverging.append(inst)

        active_ids = {inst.workflow_id for inst in session.instances if inst.active}
        spawning: list[tuple[str, frozenset[str]]] = []
        excluded_candidates: list[Workflow] = []
        for wf_id in sorted(allowed):
            wf = policy.workflows.get(wf_id)
            if wf is None or wf_id in active_ids:
                continue
            if apply_exclusion(session, wf_id, policy):
                excluded_candidates.append(wf)
                continue
            start_succ = successor_set(wf, frozenset({wf.start_state}), request, oracle)
            if start_succ:
                spawning.append((wf_id, start_succ))
    except OracleUnavailable:
        return Decision(
            DENY,
            reason=REASON_ORACLE_ERROR,
            fallback=_safe_fallback(user, policy, base_page),
        )

    if advancing or spawning:
        for inst, succ in advancing:
            inst.current = succ
        for inst in diverging:
            inst.active = False
        for wf_id, succ in spawning:
            session.instances.append(WorkflowInstance(wf_id, succ, True, now))
        return Decision(
            ALLOW,
            advanced=tuple((inst.workflow_id, succ) for inst, succ in advancing),
            spawned=tuple(wf_id for wf_id, _ in spawning),
            deactivated=tuple(inst.workflow_id for inst in diverging),
        )

    return Decision(
        DENY,
        reason=_deny_reason(session, request, policy, oracle, allowed, excluded_candidates),
        fallback=_safe_fallback(user, policy, base_page),
    )


def _deny_reason(session, request, policy, oracle, allowed, excluded_candidates) -> str:
    """Refine a denial for the audit trail; diagnosis only, never widens access."""
    for wf in excluded_candidates:
        if _would_match(wf, request, oracle):
            return REASON_EXCLUSION_VIOLATED
    for wf_id in sorted(policy.workflows):
        if wf_id in allowed:
            continue
        if _would_match(policy.workflows[wf_id], request, oracle):
            return REASON_NOT_AUTHORISED
    return REASON_NO_SUCCESSOR


def _would_match(workflow: Workflow, request: MonitorRequest, oracle) -> bool:
    try:
        return bool(
            successor_set(workflow, frozenset({workflow.start_state}), request, oracle)
        )
    except OracleUnavailable:
        return False
