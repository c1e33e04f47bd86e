"""Interchange PLY serialization with the common splatting attribute layout.

Binary little-endian, 62 float32 properties per vertex: xyz, zeroed normals,
3 diffuse SH values, 45 higher-band values (channel-major), opacity logit,
3 log scales, 4 quaternion components. Mask logits are not part of the
interchange layout and reset to their keep-everything default on load.
"""

from __future__ import annotations

import numpy as np

from .cloud import GaussianCloud
from .errors import FormatError

PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def save_ply(cloud: GaussianCloud, path) -> None:
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")

    data = np.zeros((n, len(PLY_PROPERTIES)), dtype="<f4")
    data[:, 0:3] = cloud.positions
    # normals stay zero
    data[:, 6:9] = cloud.sh_dc
    # higher bands stored channel-major: all R coefficients, then G, then B
    data[:, 9:54] = np.transpose(cloud.sh_rest, (0, 2, 1)).reshape(n, 45)
    data[:, 54] = cloud.opacity_logits
    data[:, 55:58] = cloud.log_scales
    data[:, 58:62] = cloud.rotations

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        first = f.readline().strip()
        if first != b"ply":
            raise FormatError(f"{path}: not a PLY file")
        fmt = f.readline().strip()
        if fmt != b"format binary_little_endian 1.0":
            raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
        n = None
        names = []
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: missing end_header")
            line = line.strip()
            if line == b"end_header":
                break
            parts = line.decode("ascii").split()
            if parts[0] == "element":
                if parts[1] != "vertex":
                    raise FormatError(f"{path}: unexpected element {parts[1]!r}")
                n = int(parts[2])
            elif parts[0] == "property":
                if parts[1] != "float":
                    raise FormatError(f"{path}: unsupported property type {parts[1]!r}")
                names.append(parts[2])
            elif parts[0] == "comment":
                continue
            else:
                raise FormatError(f"{path}: unexpected header line {line!r}")
        if n is None:
            raise FormatError(f"{path}: missing element vertex line")
        if names != PLY_PROPERTIES:
            raise FormatError(f"{path}: property layout mismatch")
        raw = f.read(n * len(names) * 4)
        if len(raw) != n * len(names) * 4:
            raise FormatError(f"{path}: truncated vertex data")

    data = np.frombuffer(raw, dtype="<f4").reshape(n, len(names)).astype(np.float64)
    cloud = GaussianCloud.zeros(n)
    cloud.positions = data[:, 0:3].copy()
    cloud.sh_dc = data[:, 6:9].copy()
    cloud.sh_rest = np.ascontiguousarray(np.transpose(data[:, 9:54].reshape(n, 3, 15), (0, 2, 1)))
    cloud.opacity_logits = data[:, 54].copy()
    cloud.log_scales = data[:, 55:58].copy()
    cloud.rotations = data[:, 58:62].copy()
    return cloud
