"""Speaker de-identification by zero-shot voice conversion to pseudo speakers."""

__version__ = "0.1.0"
