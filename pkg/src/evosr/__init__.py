"""Evolutionary symbolic regression over pretrained equation transformers.

Submodules are imported explicitly (``from evosr import expressions``); the
package root stays import-light so partial installs and tooling stay fast.
"""

__version__ = "0.1.0"
