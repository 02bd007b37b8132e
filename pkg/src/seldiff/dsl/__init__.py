"""Front-end for ``.sel`` sources: parse, pretty-print and compile to programs."""

from .compiler import CompileArtifact, Symbol, compile_module, compile_source, guards_total, load, source_hash
from .parser import parse, parse_with_diagnostics
from .syntax import Diagnostic, DslError, Module, pretty

__all__ = [
    "CompileArtifact",
    "Diagnostic",
    "DslError",
    "Module",
    "Symbol",
    "compile_module",
    "compile_source",
    "guards_total",
    "load",
    "parse",
    "parse_with_diagnostics",
    "pretty",
    "source_hash",
]
