"""AC optimal power flow: case parsing, polar/rectangular formulations,
and element sweep schedules."""

from importlib import resources

from .case import CaseFormatError, NetworkCase, parse_case, parse_case_file
from .coloring import opf_coloring
from .polar import OpfLayout, PolarOpf, build_polar_opf
from .rect import RectOpf, build_rect_opf, rect_from_polar

__all__ = [
    "CaseFormatError",
    "NetworkCase",
    "OpfLayout",
    "PolarOpf",
    "RectOpf",
    "build_polar_opf",
    "build_rect_opf",
    "bundled_case",
    "opf_coloring",
    "parse_case",
    "parse_case_file",
    "rect_from_polar",
]


def bundled_case(name: str) -> NetworkCase:
    """Load one of the shipped fixtures ('case9', 'case2')."""
    text = resources.files("trapopf.data").joinpath(f"{name}.m").read_text()
    return parse_case(text, name=name)
