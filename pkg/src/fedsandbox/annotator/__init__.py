"""Annotator tool contract, built-in tools and the contract checker."""

from .client import ProtocolViolation, ToolClient, ToolError, ToolTimeout, parse_response
from .contract import PROBE_NOTES, ContractReport, tool_contract_check
from .rules import annotate_contact, annotate_date, annotate_id, annotate_location, annotate_person_name
from .service import create_tool_app
from .tools import Annotator, GoldEchoAnnotator, ReferenceAnnotator, ToolMetadata

__all__ = [
    "Annotator",
    "ContractReport",
    "GoldEchoAnnotator",
    "PROBE_NOTES",
    "ProtocolViolation",
    "ReferenceAnnotator",
    "ToolClient",
    "ToolError",
    "ToolMetadata",
    "ToolTimeout",
    "annotate_contact",
    "annotate_date",
    "annotate_id",
    "annotate_location",
    "annotate_person_name",
    "create_tool_app",
    "parse_response",
    "tool_contract_check",
]
