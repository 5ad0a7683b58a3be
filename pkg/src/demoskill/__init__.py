"""demoskill: learn manipulation skills from demonstration traces and run them."""

__version__ = "0.1.0"
