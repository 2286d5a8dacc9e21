"""MIO toolkit for interpretable, fair, robust and prescriptive models."""

__version__ = "0.1.0"
