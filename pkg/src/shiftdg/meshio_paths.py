"""Locations of the built-in meshes shipped with the package."""

from importlib import resources

BUILTIN_MESHES = ("flower", "vortex_annulus", "cylinder_subsonic", "shock_cylinder")


def builtin_mesh_path(name):
    if name not in BUILTIN_MESHES:
        raise KeyError(f"unknown built-in mesh {name!r}; have {BUILTIN_MESHES}")
    return str(resources.files("shiftdg") / "meshes" / f"{name}.msh")
