"""Workflow gateway: record-then-enforce access control for web applications.

A reverse proxy wraps an unmodified host application and only lets
through request sequences that follow administrator-recorded workflows;
everything else is denied, audited, and answered with a fallback page.
Single sign-on, presence supervision, and an admin API round it out.
"""

__version__ = "0.1.0"

from .clock import Clock, ManualClock, SystemClock
from .errors import GateError
from .model import (
    ExclusionSet,
    PageId,
    ParamRule,
    Policy,
    Role,
    Transition,
    User,
    Workflow,
)
from .monitor import Decision, MonitorRequest, WorkflowInstance, evaluate
from .proxy import Gateway, GatewayConfig, build_gateway_app
from .session import Session

__all__ = [
    "Clock",
    "Decision",
    "ExclusionSet",
    "GateError",
    "Gateway",
    "GatewayConfig",
    "ManualClock",
    "MonitorRequest",
    "PageId",
    "ParamRule",
    "Policy",
    "Role",
    "Session",
    "SystemClock",
    "Transition",
    "User",
    "Workflow",
    "WorkflowInstance",
    "build_gateway_app",
    "evaluate",
    "__version__",
]
