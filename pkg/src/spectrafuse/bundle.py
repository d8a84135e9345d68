"""On-disk tensor bundle: manifest + raw little-endian f32 blobs.

A bundle directory decouples the numerical core from any deep-learning
runtime. It holds everything one image needs: per-window attention keys and
values, the output/projection matrices, text embeddings, and the global
image embedding. Tensor files are headerless row-major little-endian f32;
the manifest is the single source of truth for shapes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IoFailure, ManifestInvalid, MissingFile, NonFinite, ShapeMismatch

MANIFEST_NAME = "manifest.json"
BUNDLE_VERSION = 1

# name -> shape template, resolved against manifest dims (h, D_h, d, C)
_REQUIRED_GLOBALS = {
    "w_o": ("h*D_h", "h*D_h"),
    "post_ln_scale": ("h*D_h",),
    "post_ln_bias": ("h*D_h",),
    "proj": ("h*D_h", "d"),
    "text_embeddings": ("C", "d"),
    "cls_embedding": ("d",),
}

_WINDOW_TENSORS = ("k_vfm", "k_clip", "v_clip")


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    file: str
    dtype: str = "f32"
    byte_order: str = "little-endian"

    def nbytes(self) -> int:
        return int(math.prod(self.shape)) * 4


@dataclass
class Window:
    """One sliding-window record: pixel origin plus its three key/value tensors."""

    origin_xy: tuple[int, int]
    k_vfm: np.ndarray  # [h, N, D_h]
    k_clip: np.ndarray  # [h, N, D_h]
    v_clip: np.ndarray  # [h, N, D_h]


@dataclass
class Bundle:
    """In-memory image bundle. Immutable by convention after load."""

    image_size_hw: tuple[int, int]
    window_size: int
    stride: int
    h: int
    n_patches: int
    d_head: int
    d_joint: int
    n_classes: int
    grid_hw: tuple[int, int]
    class_names: list[str]
    w_o: np.ndarray  # [h*D_h, h*D_h]
    post_ln_scale: np.ndarray  # [h*D_h]
    post_ln_bias: np.ndarray  # [h*D_h]
    proj: np.ndarray  # [h*D_h, d]
    text_embeddings: np.ndarray  # [C, d]
    cls_embedding: np.ndarray  # [d]
    windows: list[Window] = field(default_factory=list)
    version: int = BUNDLE_VERSION


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ManifestInvalid(msg)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFinite(f"tensor {name!r} contains NaN or Inf")


def _resolve_shape(template: tuple[str, ...], dims: dict[str, int]) -> tuple[int, ...]:
    out = []
    for part in template:
        total = 1
        for factor in part.split("*"):
            total *= dims[factor]
        out.append(total)
    return tuple(out)


def validate_bundle(bundle: Bundle) -> None:
    """Check every structural invariant of an in-memory bundle.

    Raises ManifestInvalid or NonFinite; used both after read and before write.
    """
    h, n, dh, d, c = bundle.h, bundle.n_patches, bundle.d_head, bundle.d_joint, bundle.n_classes
    for dim_name, val in (("h", h), ("N", n), ("D_h", dh), ("d", d), ("C", c)):
        _expect(isinstance(val, int) and val >= 1, f"dimension {dim_name} must be a positive integer")
    gh, gw = bundle.grid_hw
    _expect(gh * gw == n, f"N={n} does not equal grid {gh}x{gw}")
    _expect(len(bundle.class_names) == c, "class_names length must equal C")
    _expect(len(bundle.windows) >= 1, "bundle must contain at least one window")
    _expect(bundle.window_size >= 1 and bundle.stride >= 1, "window_size and stride must be positive")

    dims = {"h": h, "D_h": dh, "d": d, "C": c}
    for name, template in _REQUIRED_GLOBALS.items():
        arr = getattr(bundle, name)
        want = _resolve_shape(template, dims)
        _expect(tuple(arr.shape) == want, f"global tensor {name!r} has shape {arr.shape}, expected {want}")
        _check_finite(name, arr)

    ih, iw = bundle.image_size_hw
    covered = np.zeros((ih, iw), dtype=bool)
    for idx, win in enumerate(bundle.windows):
        x, y = win.origin_xy
        _expect(0 <= x and 0 <= y, f"window {idx} origin out of bounds")
        _expect(
            x + bundle.window_size <= iw and y + bundle.window_size <= ih,
            f"window {idx} extends past the image",
        )
        for tname in _WINDOW_TENSORS:
            arr = getattr(win, tname)
            _expect(
                tuple(arr.shape) == (h, n, dh),
                f"window {idx} tensor {tname!r} has shape {arr.shape}, expected {(h, n, dh)}",
            )
            _check_finite(f"window {idx}/{tname}", arr)
        covered[y : y + bundle.window_size, x : x + bundle.window_size] = True
    _expect(bool(covered.all()), "window tiling does not cover every pixel of the image")


def _window_tensor_name(idx: int, tname: str) -> str:
    return f"win{idx:03d}_{tname}"


def _manifest_dict(bundle: Bundle) -> dict:
    tensors = []
    dims = {"h": bundle.h, "D_h": bundle.d_head, "d": bundle.d_joint, "C": bundle.n_classes}
    for name, template in _REQUIRED_GLOBALS.items():
        tensors.append(
            {
                "name": name,
                "shape": list(_resolve_shape(template, dims)),
                "dtype": "f32",
                "byte_order": "little-endian",
                "file": f"{name}.bin",
            }
        )
    windows = []
    for idx, win in enumerate(bundle.windows):
        names = {}
        for tname in _WINDOW_TENSORS:
            full = _window_tensor_name(idx, tname)
            tensors.append(
                {
                    "name": full,
                    "shape": [bundle.h, bundle.n_patches, bundle.d_head],
                    "dtype": "f32",
                    "byte_order": "little-endian",
                    "file": f"{full}.bin",
                }
            )
            names[tname] = full
        windows.append({"origin_xy": list(win.origin_xy), **names})
    return {
        "version": bundle.version,
        "image_size_hw": list(bundle.image_size_hw),
        "window_size": bundle.window_size,
        "stride": bundle.stride,
        "h": bundle.h,
        "N": bundle.n_patches,
        "D_h": bundle.d_head,
        "d": bundle.d_joint,
        "C": bundle.n_classes,
        "grid_hw": list(bundle.grid_hw),
        "class_names": list(bundle.class_names),
        "tensors": tensors,
        "windows": windows,
    }


def write_bundle(bundle: Bundle, path: str) -> None:
    """Write a validated bundle to `path`, byte-deterministically.

    Tensor files are raw little-endian f32, row-major, no header. The
    manifest is JSON with sorted keys, so two writes of the same bundle
    produce identical bytes.
    """
    validate_bundle(bundle)
    manifest = _manifest_dict(bundle)
    arrays = {
        name: getattr(bundle, name) for name in _REQUIRED_GLOBALS
    }
    for idx, win in enumerate(bundle.windows):
        for tname in _WINDOW_TENSORS:
            arrays[_window_tensor_name(idx, tname)] = getattr(win, tname)
    try:
        os.makedirs(path, exist_ok=True)
        for spec in manifest["tensors"]:
            arr = np.ascontiguousarray(arrays[spec["name"]], dtype="<f4")
            with open(os.path.join(path, spec["file"]), "wb") as fh:
                fh.write(arr.tobytes())
        text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"failed writing bundle to {path}: {exc}") from exc


def _load_tensor(path: str, spec: TensorSpec) -> np.ndarray:
    fpath = os.path.join(path, spec.file)
    if not os.path.isfile(fpath):
        raise MissingFile(f"tensor file {spec.file!r} referenced by manifest is missing")
    size = os.path.getsize(fpath)
    if size != spec.nbytes():
        raise ShapeMismatch(
            f"tensor {spec.name!r}: file has {size} bytes but shape {spec.shape} requires {spec.nbytes()}"
        )
    arr = np.fromfile(fpath, dtype="<f4").reshape(spec.shape)
    _check_finite(spec.name, arr)
    return arr


def _parse_tensor_specs(raw: list) -> dict[str, TensorSpec]:
    specs: dict[str, TensorSpec] = {}
    for entry in raw:
        _expect(isinstance(entry, dict), "tensor entry must be an object")
        for key in ("name", "shape", "dtype", "file", "byte_order"):
            _expect(key in entry, f"tensor entry missing {key!r}")
        _expect(entry["dtype"] == "f32", f"unsupported dtype {entry['dtype']!r} (only f32)")
        _expect(entry["byte_order"] == "little-endian", "unsupported byte order")
        shape = entry["shape"]
        _expect(
            isinstance(shape, list) and len(shape) >= 1 and all(isinstance(s, int) and s > 0 for s in shape),
            f"tensor {entry['name']!r} shape must be a list of positive integers",
        )
        name = entry["name"]
        _expect(name not in specs, f"duplicate tensor name {name!r}")
        specs[name] = TensorSpec(name=name, shape=tuple(shape), file=entry["file"])
    return specs


def read_bundle(path: str) -> Bundle:
    """Load and fully validate a bundle directory."""
    mpath = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(mpath):
        raise MissingFile(f"{MANIFEST_NAME} not found in {path}")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestInvalid(f"cannot parse {MANIFEST_NAME}: {exc}") from exc

    _expect(isinstance(manifest, dict), "manifest must be a JSON object")
    for key in (
        "version",
        "image_size_hw",
        "window_size",
        "stride",
        "h",
        "N",
        "D_h",
        "d",
        "C",
        "grid_hw",
        "class_names",
        "tensors",
        "windows",
    ):
        _expect(key in manifest, f"manifest missing key {key!r}")
    _expect(manifest["version"] == BUNDLE_VERSION, f"unsupported bundle version {manifest['version']!r}")
    _expect(
        isinstance(manifest["windows"], list) and len(manifest["windows"]) >= 1,
        "manifest must declare at least one window",
    )

    specs = _parse_tensor_specs(manifest["tensors"])
    tensors = {name: _load_tensor(path, spec) for name, spec in specs.items()}

    for name in _REQUIRED_GLOBALS:
        _expect(name in tensors, f"required global tensor {name!r} absent from manifest")

    windows = []
    for idx, entry in enumerate(manifest["windows"]):
        _expect(isinstance(entry, dict) and "origin_xy" in entry, f"window {idx} missing origin_xy")
        refs = {}
        for tname in _WINDOW_TENSORS:
            _expect(tname in entry, f"window {idx} missing {tname!r} reference")
            ref = entry[tname]
            _expect(ref in tensors, f"window {idx} references unknown tensor {ref!r}")
            refs[tname] = tensors[ref]
        origin = entry["origin_xy"]
        _expect(
            isinstance(origin, list) and len(origin) == 2 and all(isinstance(v, int) for v in origin),
            f"window {idx} origin_xy must be two integers",
        )
        windows.append(Window(origin_xy=(origin[0], origin[1]), **refs))

    bundle = Bundle(
        image_size_hw=tuple(manifest["image_size_hw"]),
        window_size=manifest["window_size"],
        stride=manifest["stride"],
        h=manifest["h"],
        n_patches=manifest["N"],
        d_head=manifest["D_h"],
        d_joint=manifest["d"],
        n_classes=manifest["C"],
        grid_hw=tuple(manifest["grid_hw"]),
        class_names=list(manifest["class_names"]),
        w_o=tensors["w_o"],
        post_ln_scale=tensors["post_ln_scale"],
        post_ln_bias=tensors["post_ln_bias"],
        proj=tensors["proj"],
        text_embeddings=tensors["text_embeddings"],
        cls_embedding=tensors["cls_embedding"],
        windows=windows,
        version=manifest["version"],
    )
    validate_bundle(bundle)
    return bundle


def bundles_equal(a: Bundle, b: Bundle) -> bool:
    """Element-for-element equality, used by round-trip tests."""
    scalar_fields = (
        "image_size_hw",
        "window_size",
        "stride",
        "h",
        "n_patches",
        "d_head",
        "d_joint",
        "n_classes",
        "grid_hw",
        "class_names",
        "version",
    )
    if any(getattr(a, f) != getattr(b, f) for f in scalar_fields):
        return False
    for name in _REQUIRED_GLOBALS:
        if not np.array_equal(getattr(a, name), getattr(b, name)):
            return False
    if len(a.windows) != len(b.windows):
        return False
    for wa, wb in zip(a.windows, b.windows):
        if wa.origin_xy != wb.origin_xy:
            return False
        for tname in _WINDOW_TENSORS:
            if not np.array_equal(getattr(wa, tname), getattr(wb, tname)):
                return False
    return True


def build_gram_graph(keys: np.ndarray) -> np.ndarray:
    """Per-head key affinity graph A^i = K^i (K^i)^T, exactly symmetrized.

    `keys` is [h, N, D_h]; the result is float64 [h, N, N]. The product is
    symmetrized as (M + M^T)/2 so the downstream eigensolver sees an exactly
    symmetric matrix.
    """
    keys = np.asarray(keys)
    if keys.ndim != 3:
        raise ShapeMismatch(f"keys must be [h, N, D_h], got shape {keys.shape}")
    if not np.isfinite(keys).all():
        raise NonFinite("keys contain NaN or Inf")
    k = keys.astype(np.float64, copy=False)
    h, n, _ = k.shape
    gram = np.empty((h, n, n), dtype=np.float64)
    for i in range(h):
        m = k[i] @ k[i].T
        gram[i] = (m + m.T) / 2.0
    return gram
