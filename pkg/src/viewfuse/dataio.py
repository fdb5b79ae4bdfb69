"""File formats: PFM depth maps, PNG images, camera manifests, scene configs.

PFM files are written single-channel ("Pf"), little-endian (scale -1.0),
rows bottom-to-top per the format convention; float32 depth survives a
round-trip bit-exactly. Color images are 8-bit RGB PNG. The camera manifest
is a JSON document; see README for the schemas.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera
from .raster import DEPTH, ColorImage, ScalarMap
from . import scenegen


def write_pfm(path, data) -> None:
    """Write a (H, W) float32 array as a grayscale PFM (little-endian)."""
    arr = np.asarray(getattr(data, "data", data), dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"write_pfm expects a 2-D array, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into (H, W) or (H, W, 3) float32."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"Pf":
            channels = 1
        elif header == b"PF":
            channels = 3
        else:
            raise ValueError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return raw.reshape(shape)[::-1].astype(np.float32)


def write_png(path, image) -> None:
    """Write a [0, 1] RGB image as 8-bit PNG."""
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


def read_png(path) -> ColorImage:
    """Read an 8-bit RGB PNG into a [0, 1] ColorImage."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return ColorImage(arr / 255.0)


def read_depth_png(path, scale: float = 0.001) -> ScalarMap:
    """Read a 16-bit grayscale PNG as depth; scale converts units to meters."""
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float32)
    return ScalarMap(arr * scale, kind=DEPTH)


def camera_to_dict(cam: Camera, cam_id: str | None = None) -> dict:
    d = {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "rotation": [float(x) for x in cam.rotation.reshape(-1)],
        "translation": [float(x) for x in cam.translation],
    }
    if cam_id is not None:
        d["id"] = cam_id
    return d


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        width=int(d["width"]),
        height=int(d["height"]),
        rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.asarray(d["translation"], dtype=np.float64),
    )


def save_camera_manifest(path, cameras: dict[str, Camera]) -> None:
    """Write {"cameras": [{id, fx, fy, cx, cy, width, height, rotation, translation}]}."""
    doc = {"cameras": [camera_to_dict(c, cam_id) for cam_id, c in cameras.items()]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)


def load_camera_manifest(path) -> dict[str, Camera]:
    """Read a camera manifest; returns an insertion-ordered {id: Camera} map."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    cams = {}
    for entry in doc["cameras"]:
        cams[str(entry["id"])] = camera_from_dict(entry)
    return cams


_PRIM_TYPES = {
    "plane": scenegen.PlanePrimitive,
    "sphere": scenegen.SpherePrimitive,
    "box": scenegen.BoxPrimitive,
}


def _texture_to_dict(tex: scenegen.Texture) -> dict:
    return {"kind": tex.kind, "scale": tex.scale, "seed": tex.seed}


def _texture_from_dict(d: dict) -> scenegen.Texture:
    return scenegen.Texture(
        kind=d.get("kind", "checker"), scale=float(d.get("scale", 0.25)), seed=int(d.get("seed", 0))
    )


def scene_to_dict(spec: scenegen.SceneSpec) -> dict:
    prims = []
    for p in spec.primitives:
        if isinstance(p, scenegen.PlanePrimitive):
            prims.append(
                {
                    "type": "plane",
                    "center": list(p.center),
                    "half_size": list(p.half_size),
                    "rotation": [float(x) for x in np.asarray(p.rotation).reshape(-1)],
                    "texture": _texture_to_dict(p.texture),
                    "velocity": list(p.velocity),
                }
            )
        elif isinstance(p, scenegen.SpherePrimitive):
            prims.append(
                {
                    "type": "sphere",
                    "center": list(p.center),
                    "radius": p.radius,
                    "texture": _texture_to_dict(p.texture),
                    "velocity": list(p.velocity),
                }
            )
        elif isinstance(p, scenegen.BoxPrimitive):
            prims.append(
                {
                    "type": "box",
                    "center": list(p.center),
                    "half_extents": list(p.half_extents),
                    "texture": _texture_to_dict(p.texture),
                    "velocity": list(p.velocity),
                }
            )
        else:
            raise TypeError(f"unknown primitive type {type(p).__name__}")
    return {
        "primitives": prims,
        "cameras": [camera_to_dict(c, f"cam{i:02d}") for i, c in enumerate(spec.cameras)],
        "frames": spec.frames,
        "fps": spec.fps,
    }


def scene_from_dict(doc: dict) -> scenegen.SceneSpec:
    prims = []
    for d in doc["primitives"]:
        kind = d["type"]
        tex = _texture_from_dict(d.get("texture", {}))
        vel = tuple(d.get("velocity", (0.0, 0.0, 0.0)))
        if kind == "plane":
            rot = np.asarray(d.get("rotation", np.eye(3).reshape(-1)), dtype=np.float64).reshape(3, 3)
            prims.append(
                scenegen.PlanePrimitive(
                    center=tuple(d["center"]),
                    half_size=tuple(d["half_size"]),
                    rotation=rot,
                    texture=tex,
                    velocity=vel,
                )
            )
        elif kind == "sphere":
            prims.append(
                scenegen.SpherePrimitive(
                    center=tuple(d["center"]), radius=float(d["radius"]), texture=tex, velocity=vel
                )
            )
        elif kind == "box":
            prims.append(
                scenegen.BoxPrimitive(
                    center=tuple(d["center"]),
                    half_extents=tuple(d["half_extents"]),
                    texture=tex,
                    velocity=vel,
                )
            )
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    cams = [camera_from_dict(c) for c in doc["cameras"]]
    return scenegen.SceneSpec(
        primitives=prims, cameras=cams, frames=int(doc.get("frames", 1)), fps=float(doc.get("fps", 30.0))
    )


def load_scene(path) -> scenegen.SceneSpec:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(json.load(f))


def save_scene(path, spec: scenegen.SceneSpec) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scene_to_dict(spec), f, indent=2)


def export_dataset(
    root,
    spec: scenegen.SceneSpec,
    noise: scenegen.NoiseSpec | None = None,
    clean_depth: bool = False,
) -> None:
    """Render a scene to the on-disk dataset layout.

    Layout: root/<cam_id>/color_%06d.png and root/<cam_id>/depth_%06d.pfm
    plus root/manifest.json and root/scene.json. Depth noise (if any) is
    seeded per (view, frame), deterministic across runs; clean_depth also
    writes the noise-free depth as depth_clean_%06d.pfm.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cam_ids = [f"cam{i:02d}" for i in range(len(spec.cameras))]
    save_camera_manifest(root / "manifest.json", dict(zip(cam_ids, spec.cameras)))
    save_scene(root / "scene.json", spec)
    for ci, (cam_id, cam) in enumerate(zip(cam_ids, spec.cameras)):
        cam_dir = root / cam_id
        cam_dir.mkdir(exist_ok=True)
        for t in range(spec.frames):
            img, depth = scenegen.render_scene(spec, cam, t)
            write_png(cam_dir / f"color_{t:06d}.png", img)
            if clean_depth:
                write_pfm(cam_dir / f"depth_clean_{t:06d}.pfm", depth)
            if noise is not None:
                depth = scenegen.add_noise(depth, noise, stream=ci * 100003 + t)
            write_pfm(cam_dir / f"depth_{t:06d}.pfm", depth)
