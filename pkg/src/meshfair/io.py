"""File formats: Wavefront OBJ subset, camera text files, binary PGM rasters.

All writers are atomic (temp file + rename) and format floats with 12
significant digits, which round-trips desk-scale coordinates to 1e-9.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fairing import Scene
from .geometry import CameraView, TriMesh


def _atomic_write(path, data: bytes) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {v[0]:.12g} {v[1]:.12g} {v[2]:.12g}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_obj(path) -> TriMesh:
    """Parse ``v x y z`` and ``f i j k`` lines; other records are ignored.

    Face entries may carry ``/texture/normal`` suffixes; only the leading
    vertex index is used (1-based, negatives count from the end).
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for p in parts[1:4]:
                        i = int(p.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.append(idx)
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed OBJ record: {raw.rstrip()}") from exc
    if not verts:
        raise ValidationError(f"{path}: no vertices found")
    try:
        return TriMesh(np.array(verts), np.array(faces).reshape(-1, 3))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_cameras(path, matrices: list[np.ndarray]) -> None:
    """One camera per line: 12 row-major values of the 3x4 projection matrix."""
    lines = [" ".join(f"{x:.17g}" for x in np.asarray(P, dtype=float).ravel())
             for P in matrices]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_cameras(path) -> list[np.ndarray]:
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 12:
                raise ValidationError(f"{path}:{lineno}: expected 12 values, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric camera entry") from exc
            out.append(np.array(vals).reshape(3, 4))
    if not out:
        raise ValidationError(f"{path}: no cameras found")
    return out


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM; intensities in [0, 1] map linearly to 0..255."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValidationError("PGM writer expects a 2D grayscale raster")
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    _atomic_write(path, header + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM to float intensities in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValidationError(f"{path}: not a binary PGM (P5) file")
    # Header tokens may be separated by whitespace and '#' comments.
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed PGM header") from exc
    if maxval <= 0 or maxval > 255:
        raise ValidationError(f"{path}: unsupported PGM maxval {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if raster.size != width * height:
        raise ValidationError(f"{path}: truncated PGM raster")
    return raster.reshape(height, width).astype(float) / float(maxval)


def list_images(directory) -> list[Path]:
    """PGM files of a directory in lexicographic order (matches camera order)."""
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"{directory}: not a directory")
    return sorted(d.glob("*.pgm"))


def load_scene(mesh_path, cams_path, images_dir) -> Scene:
    """Assemble and validate a fairing scene from mesh, cameras, image files."""
    mesh = read_obj(mesh_path)
    matrices = read_cameras(cams_path)
    paths = list_images(images_dir)
    if len(paths) != len(matrices):
        raise ValidationError(
            f"{len(paths)} images in {images_dir} but {len(matrices)} cameras in {cams_path}")
    views = [CameraView(P=P, image=read_pgm(p)) for P, p in zip(matrices, paths)]
    scene = Scene(mesh=mesh, views=views)
    scene.validate()
    return scene
