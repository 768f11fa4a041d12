"""Score zoning codes for form-based-code similarity and relate them to urban form."""

__version__ = "0.1.0"
