"""Grammar-constrained tree editing with a learned neural editor."""
__version__ = "0.1.0"
