from fgp_book.cli import main

__all__ = ["main"]
