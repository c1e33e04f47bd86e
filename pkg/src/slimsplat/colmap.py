"""COLMAP sparse-reconstruction I/O (text and binary layouts).

Only PINHOLE and SIMPLE_PINHOLE camera models are accepted; both encodings of
the same reconstruction parse to identical bundles.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .cameras import Camera
from .errors import FormatError
from .schedule import SfmPoints

CAMERA_MODEL_IDS = {0: "SIMPLE_PINHOLE", 1: "PINHOLE"}
CAMERA_MODEL_NAMES = {v: k for k, v in CAMERA_MODEL_IDS.items()}
CAMERA_MODEL_PARAMS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4}
# model ids COLMAP defines but this loader rejects
KNOWN_UNSUPPORTED = {
    2: "SIMPLE_RADIAL", 3: "RADIAL", 4: "OPENCV", 5: "OPENCV_FISHEYE",
    6: "FULL_OPENCV", 7: "FOV", 8: "SIMPLE_RADIAL_FISHEYE",
    9: "RADIAL_FISHEYE", 10: "THIN_PRISM_FISHEYE",
}


@dataclass
class SfmCamera:
    camera_id: int
    model: str
    width: int
    height: int
    params: np.ndarray  # SIMPLE_PINHOLE: (f, cx, cy); PINHOLE: (fx, fy, cx, cy)


@dataclass
class SfmImage:
    image_id: int
    qvec: np.ndarray   # (w, x, y, z) world -> camera
    tvec: np.ndarray
    camera_id: int
    name: str
    xys: np.ndarray          # (K, 2) observed keypoints
    point3d_ids: np.ndarray  # (K,)


@dataclass
class SfmBundle:
    cameras: dict            # camera_id -> SfmCamera
    images: list             # SfmImage, sorted by image_id
    point_ids: np.ndarray    # (P,)
    xyz: np.ndarray          # (P, 3)
    rgb: np.ndarray          # (P, 3) uint8
    errors: np.ndarray       # (P,)
    tracks: list = field(default_factory=list)  # per point: (L, 2) int array

    def points(self) -> SfmPoints:
        """Seeding view of the 3D points (RGB rescaled to [0, 1])."""
        return SfmPoints(
            xyz=self.xyz.astype(np.float64),
            rgb=self.rgb.astype(np.float64) / 255.0,
            errors=self.errors.astype(np.float64),
        )

    def camera_for_image(self, image: SfmImage) -> Camera:
        cam = self.cameras[image.camera_id]
        if cam.model == "SIMPLE_PINHOLE":
            fx = fy = cam.params[0]
            cx, cy = cam.params[1], cam.params[2]
        else:
            fx, fy, cx, cy = cam.params[:4]
        R = qvec_to_rotmat(image.qvec)
        return Camera(
            fx=fx, fy=fy, cx=cx, cy=cy, R=R, t=image.tvec,
            width=cam.width, height=cam.height, name=image.name,
        )


def qvec_to_rotmat(qvec) -> np.ndarray:
    w, x, y, z = np.asarray(qvec, dtype=np.float64) / np.linalg.norm(qvec)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_qvec(R) -> np.ndarray:
    rxx, ryx, rzx, rxy, ryy, rzy, rxz, ryz, rzz = np.asarray(R).flat
    K = (
        np.array(
            [
                [rxx - ryy - rzz, 0, 0, 0],
                [ryx + rxy, ryy - rxx - rzz, 0, 0],
                [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
                [ryz - rzy, rzx - rxz, rxy - ryx, rxx + ryy + rzz],
            ]
        )
        / 3.0
    )
    eigvals, eigvecs = np.linalg.eigh(K)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec = -qvec
    return qvec


def _model_name(model_id: int) -> str:
    if model_id in CAMERA_MODEL_IDS:
        return CAMERA_MODEL_IDS[model_id]
    name = KNOWN_UNSUPPORTED.get(model_id, f"id {model_id}")
    raise FormatError(f"unsupported camera model {name} (only pinhole models are accepted)")


def _read_bytes(f, count, fmt):
    data = f.read(count)
    if len(data) != count:
        raise FormatError("truncated binary COLMAP file")
    return struct.unpack("<" + fmt, data)


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def read_cameras_text(path) -> dict:
    cameras = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 4:
                raise FormatError(f"malformed camera record: {line!r}")
            model = parts[1]
            if model not in CAMERA_MODEL_PARAMS:
                raise FormatError(
                    f"unsupported camera model {model} (only pinhole models are accepted)"
                )
            n_params = CAMERA_MODEL_PARAMS[model]
            if len(parts) != 4 + n_params:
                raise FormatError(f"camera record has wrong parameter count: {line!r}")
            cameras[int(parts[0])] = SfmCamera(
                camera_id=int(parts[0]),
                model=model,
                width=int(parts[2]),
                height=int(parts[3]),
                params=np.array([float(p) for p in parts[4:]]),
            )
    return cameras


def read_cameras_binary(path) -> dict:
    cameras = {}
    with open(path, "rb") as f:
        (count,) = _read_bytes(f, 8, "Q")
        for _ in range(count):
            camera_id, model_id = _read_bytes(f, 8, "ii")
            width, height = _read_bytes(f, 16, "QQ")
            model = _model_name(model_id)
            n_params = CAMERA_MODEL_PARAMS[model]
            params = np.array(_read_bytes(f, 8 * n_params, "d" * n_params))
            cameras[camera_id] = SfmCamera(camera_id, model, int(width), int(height), params)
    return cameras


def write_cameras_text(cameras: dict, path) -> None:
    with open(path, "w") as f:
        f.write("# Camera list with one line of data per camera:\n")
        f.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for cam in sorted(cameras.values(), key=lambda c: c.camera_id):
            params = " ".join(repr(float(p)) for p in cam.params)
            f.write(f"{cam.camera_id} {cam.model} {cam.width} {cam.height} {params}\n")


def write_cameras_binary(cameras: dict, path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(cameras)))
        for cam in sorted(cameras.values(), key=lambda c: c.camera_id):
            f.write(struct.pack("<ii", cam.camera_id, CAMERA_MODEL_NAMES[cam.model]))
            f.write(struct.pack("<QQ", cam.width, cam.height))
            f.write(struct.pack("<" + "d" * len(cam.params), *cam.params))


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def read_images_text(path) -> list:
    images = []
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 10:
            raise FormatError(f"malformed image record: {line!r}")
        qvec = np.array([float(v) for v in parts[1:5]])
        tvec = np.array([float(v) for v in parts[5:8]])
        if i >= len(lines):
            raise FormatError("image record missing its points2D line")
        pts_line = lines[i].strip()
        i += 1
        if pts_line:
            vals = pts_line.split()
            if len(vals) % 3 != 0:
                raise FormatError("points2D line must hold X Y POINT3D_ID triples")
            arr = np.array(vals, dtype=object).reshape(-1, 3)
            xys = arr[:, :2].astype(np.float64)
            pids = arr[:, 2].astype(np.int64)
        else:
            xys = np.zeros((0, 2))
            pids = np.zeros(0, dtype=np.int64)
        images.append(
            SfmImage(
                image_id=int(parts[0]),
                qvec=qvec,
                tvec=tvec,
                camera_id=int(parts[8]),
                name=parts[9],
                xys=xys,
                point3d_ids=pids,
            )
        )
    return sorted(images, key=lambda im: im.image_id)


def read_images_binary(path) -> list:
    images = []
    with open(path, "rb") as f:
        (count,) = _read_bytes(f, 8, "Q")
        for _ in range(count):
            (image_id,) = _read_bytes(f, 4, "i")
            qvec = np.array(_read_bytes(f, 32, "dddd"))
            tvec = np.array(_read_bytes(f, 24, "ddd"))
            (camera_id,) = _read_bytes(f, 4, "i")
            name = b""
            while True:
                ch = f.read(1)
                if ch == b"":
                    raise FormatError("truncated binary COLMAP file")
                if ch == b"\x00":
                    break
                name += ch
            (n_pts,) = _read_bytes(f, 8, "Q")
            xys = np.zeros((n_pts, 2))
            pids = np.zeros(n_pts, dtype=np.int64)
            for k in range(n_pts):
                x, y, pid = _read_bytes(f, 24, "ddq")
                xys[k] = (x, y)
                pids[k] = pid
            images.append(
                SfmImage(image_id, qvec, tvec, camera_id, name.decode("utf-8"), xys, pids)
            )
    return sorted(images, key=lambda im: im.image_id)


def write_images_text(images: list, path) -> None:
    with open(path, "w") as f:
        f.write("# Image list with two lines of data per image:\n")
        f.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        f.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for im in sorted(images, key=lambda im: im.image_id):
            pose = " ".join(repr(float(v)) for v in (*im.qvec, *im.tvec))
            f.write(f"{im.image_id} {pose} {im.camera_id} {im.name}\n")
            pts = " ".join(
                f"{repr(float(x))} {repr(float(y))} {int(pid)}"
                for (x, y), pid in zip(im.xys, im.point3d_ids)
            )
            f.write(pts + "\n")


def write_images_binary(images: list, path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(images)))
        for im in sorted(images, key=lambda im: im.image_id):
            f.write(struct.pack("<i", im.image_id))
            f.write(struct.pack("<dddd", *im.qvec))
            f.write(struct.pack("<ddd", *im.tvec))
            f.write(struct.pack("<i", im.camera_id))
            f.write(im.name.encode("utf-8") + b"\x00")
            f.write(struct.pack("<Q", im.xys.shape[0]))
            for (x, y), pid in zip(im.xys, im.point3d_ids):
                f.write(struct.pack("<ddq", x, y, pid))


# ---------------------------------------------------------------------------
# points3D
# ---------------------------------------------------------------------------

def read_points3d_text(path):
    ids, xyzs, rgbs, errors, tracks = [], [], [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 8 or (len(parts) - 8) % 2 != 0:
                raise FormatError(f"malformed point3D record: {line!r}")
            ids.append(int(parts[0]))
            xyzs.append([float(v) for v in parts[1:4]])
            rgbs.append([int(v) for v in parts[4:7]])
            errors.append(float(parts[7]))
            track = np.array(parts[8:], dtype=np.int64).reshape(-1, 2)
            tracks.append(track)
    return ids, xyzs, rgbs, errors, tracks


def read_points3d_binary(path):
    ids, xyzs, rgbs, errors, tracks = [], [], [], [], []
    with open(path, "rb") as f:
        (count,) = _read_bytes(f, 8, "Q")
        for _ in range(count):
            (pid,) = _read_bytes(f, 8, "q")
            xyz = _read_bytes(f, 24, "ddd")
            rgb = _read_bytes(f, 3, "BBB")
            (error,) = _read_bytes(f, 8, "d")
            (track_len,) = _read_bytes(f, 8, "Q")
            track = np.zeros((track_len, 2), dtype=np.int64)
            for k in range(track_len):
                image_id, p2d = _read_bytes(f, 8, "ii")
                track[k] = (image_id, p2d)
            ids.append(pid)
            xyzs.append(xyz)
            rgbs.append(rgb)
            errors.append(error)
            tracks.append(track)
    return ids, xyzs, rgbs, errors, tracks


def write_points3d_text(bundle: "SfmBundle", path) -> None:
    with open(path, "w") as f:
        f.write("# 3D point list with one line of data per point:\n")
        f.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for i, pid in enumerate(bundle.point_ids):
            xyz = " ".join(repr(float(v)) for v in bundle.xyz[i])
            rgb = " ".join(str(int(v)) for v in bundle.rgb[i])
            track = " ".join(str(int(v)) for v in bundle.tracks[i].ravel())
            line = f"{int(pid)} {xyz} {rgb} {repr(float(bundle.errors[i]))}"
            f.write(line + (" " + track if track else "") + "\n")


def write_points3d_binary(bundle: "SfmBundle", path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", bundle.point_ids.shape[0]))
        for i, pid in enumerate(bundle.point_ids):
            f.write(struct.pack("<q", int(pid)))
            f.write(struct.pack("<ddd", *bundle.xyz[i]))
            f.write(struct.pack("<BBB", *(int(v) for v in bundle.rgb[i])))
            f.write(struct.pack("<d", float(bundle.errors[i])))
            track = bundle.tracks[i]
            f.write(struct.pack("<Q", track.shape[0]))
            for image_id, p2d in track:
                f.write(struct.pack("<ii", int(image_id), int(p2d)))


# ---------------------------------------------------------------------------
# bundle-level API
# ---------------------------------------------------------------------------

def _assemble(cameras, images, pts) -> SfmBundle:
    ids, xyzs, rgbs, errors, tracks = pts
    order = np.argsort(np.asarray(ids, dtype=np.int64), kind="stable")
    bundle = SfmBundle(
        cameras=cameras,
        images=images,
        point_ids=np.asarray(ids, dtype=np.int64)[order],
        xyz=np.asarray(xyzs, dtype=np.float64).reshape(-1, 3)[order],
        rgb=np.asarray(rgbs, dtype=np.uint8).reshape(-1, 3)[order],
        errors=np.asarray(errors, dtype=np.float64)[order],
        tracks=[tracks[i] for i in order],
    )
    for im in bundle.images:
        if im.camera_id not in bundle.cameras:
            raise FormatError(f"image {im.name!r} references unknown camera {im.camera_id}")
    if np.any(bundle.errors < 0):
        raise FormatError("negative reprojection error in points3D")
    return bundle


def load_colmap(path) -> SfmBundle:
    """Load a COLMAP sparse directory, preferring binary files when present.

    `path` may be the reconstruction directory itself or a scene root with
    the usual sparse/0 layout underneath.
    """
    path = str(path)
    for candidate in (path, os.path.join(path, "sparse", "0"), os.path.join(path, "sparse")):
        if os.path.isfile(os.path.join(candidate, "cameras.bin")) or os.path.isfile(
            os.path.join(candidate, "cameras.txt")
        ):
            base = candidate
            break
    else:
        raise FormatError(f"no COLMAP reconstruction found under {path!r}")

    def pick(stem):
        bin_path = os.path.join(base, stem + ".bin")
        txt_path = os.path.join(base, stem + ".txt")
        if os.path.isfile(bin_path):
            return bin_path, True
        if os.path.isfile(txt_path):
            return txt_path, False
        raise FormatError(f"missing {stem}.bin/.txt in {base!r}")

    cam_path, cam_bin = pick("cameras")
    img_path, img_bin = pick("images")
    pts_path, pts_bin = pick("points3D")
    cameras = read_cameras_binary(cam_path) if cam_bin else read_cameras_text(cam_path)
    images = read_images_binary(img_path) if img_bin else read_images_text(img_path)
    pts = read_points3d_binary(pts_path) if pts_bin else read_points3d_text(pts_path)
    return _assemble(cameras, images, pts)


def save_colmap(bundle: SfmBundle, directory, binary: bool = True) -> None:
    os.makedirs(directory, exist_ok=True)
    if binary:
        write_cameras_binary(bundle.cameras, os.path.join(directory, "cameras.bin"))
        write_images_binary(bundle.images, os.path.join(directory, "images.bin"))
        write_points3d_binary(bundle, os.path.join(directory, "points3D.bin"))
    else:
        write_cameras_text(bundle.cameras, os.path.join(directory, "cameras.txt"))
        write_images_text(bundle.images, os.path.join(directory, "images.txt"))
        write_points3d_text(bundle, os.path.join(directory, "points3D.txt"))
