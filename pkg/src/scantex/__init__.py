"""Print/scan texture transfer and handcrafted-feature morphing attack detection."""

__version__ = "0.1.0"
