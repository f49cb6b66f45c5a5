"""Versioned checkpoint container: ckpt.json (metadata + array layout) and
ckpt.bin (named little-endian arrays). Shared by the translators, the body
fitter and the trainer; float parameters round-trip bit-exactly as float32.
"""

import json
import os

import numpy as np

from .errors import ConfigError

_FORMAT = "repcycle-checkpoint"
_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<i8": np.dtype("<i8"), "|u1": np.dtype("|u1")}


class Checkpoint:
    """A bag of named arrays plus JSON metadata."""

    def __init__(self, meta=None, arrays=None):
        self.meta = meta or {}
        self.arrays = arrays or {}

    def put(self, name, array):
        array = np.asarray(array)
        if array.dtype.kind == "f":
            array = array.astype("<f4")
        elif array.dtype.kind in "iu" and array.dtype != np.uint8:
            array = array.astype("<i8")
        self.arrays[name] = array

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        layout = {}
        blob = bytearray()
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name])
            layout[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape),
                            "offset": len(blob), "nbytes": arr.nbytes}
            blob.extend(arr.tobytes())
        header = {"format": _FORMAT, "version": _VERSION,
                  "meta": self.meta, "arrays": layout}
        with open(os.path.join(directory, "ckpt.json"), "w") as f:
            json.dump(header, f, indent=1)
        with open(os.path.join(directory, "ckpt.bin"), "wb") as f:
            f.write(bytes(blob))

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "ckpt.json")) as f:
            header = json.load(f)
        if header.get("format") != _FORMAT:
            raise ConfigError(f"not a checkpoint container: {directory}")
        with open(os.path.join(directory, "ckpt.bin"), "rb") as f:
            blob = f.read()
        arrays = {}
        for name, spec in header["arrays"].items():
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arr = np.frombuffer(blob, dtype=dtype, count=count,
                                offset=spec["offset"]).reshape(spec["shape"])
            arrays[name] = arr.copy()
        return cls(meta=header["meta"], arrays=arrays)


def module_to_arrays(module, prefix):
    """Flatten a torch module's state dict into named numpy arrays."""
    out = {}
    for key, value in module.state_dict().items():
        out[f"{prefix}:{key}"] = value.detach().cpu().numpy()
    return out


def arrays_to_module(module, arrays, prefix):
    """Load named arrays back into a torch module, strict on key match."""
    import torch
    state = {}
    want = set(module.state_dict().keys())
    for key in want:
        name = f"{prefix}:{key}"
        if name not in arrays:
            raise ConfigError(f"checkpoint missing array {name}")
        state[key] = torch.from_numpy(np.ascontiguousarray(arrays[name]))
    module.load_state_dict(state)
    return module
