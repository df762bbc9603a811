"""Energy, structure and path tools for close-packed crystals under localized potentials."""
from .configuration import Configuration, read_xyz, write_xyz
from .errors import CrystalError

__all__ = ["Configuration", "CrystalError", "read_xyz", "write_xyz"]
