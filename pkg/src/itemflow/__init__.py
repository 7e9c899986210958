"""Event-sourced, description-driven workflow and product-data kernel."""

__version__ = "0.1.0"
