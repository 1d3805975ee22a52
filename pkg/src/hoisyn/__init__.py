"""hoisyn: text-driven synthesis of human motion with multiple manipulated objects."""

__version__ = "0.1.0"
