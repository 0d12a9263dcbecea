"""Thin shim over the Cython extension; importing this module fails cleanly
when the extension was not built, which triggers the NumPy fallback."""

from ewtls._kernels._core import (  # noqa: F401
    objective_parts,
    objective_value,
    row_terms,
)
