"""
Marks 'threatgeo' as a package.

Submodules are not imported here so that `python -m threatgeo.cli` and the
individual module entry points stay cheap to start.
"""

__version__ = "0.3.0"
