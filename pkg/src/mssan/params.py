"""Named trainable parameters and checkpoint IO.

Checkpoints are a single binary file: one line of JSON listing
``name / shape / offset`` per entry, then the raw little-endian float64
values back to back. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from typing import Iterator

import numpy as np

from .errors import ValidationError
from .tensor import Tape, Tensor


class ParamStore:
    """Trainable tensors keyed by unique names, in deterministic order."""

    def __init__(self) -> None:
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise ValidationError(f"duplicate parameter name: {name}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._entries.items())

    def param_count(self) -> int:
        """Exact number of trainable scalars."""
        return sum(t.data.size for t in self._entries.values())

    def count_prefix(self, prefix: str) -> int:
        dotted = prefix + "."
        return sum(
            t.data.size
            for n, t in self._entries.items()
            if n == prefix or n.startswith(dotted)
        )

    def save(self, path) -> None:
        entries = []
        blobs = []
        offset = 0
        for name, t in self._entries.items():
            raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(t.data.shape), "offset": offset})
            blobs.append(raw)
            offset += len(raw)
        with open(path, "wb") as fh:
            fh.write(json.dumps({"entries": entries}, separators=(",", ":")).encode("ascii"))
            fh.write(b"\n")
            for blob in blobs:
                fh.write(blob)

    @staticmethod
    def _read(path) -> dict[str, np.ndarray]:
        with open(path, "rb") as fh:
            header = fh.readline()
            data = fh.read()
        try:
            manifest = json.loads(header.decode("ascii"))
            entries = manifest["entries"]
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"{path}: not a parameter checkpoint") from exc
        out: dict[str, np.ndarray] = {}
        for e in entries:
            shape = tuple(int(s) for s in e["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(
                data, dtype="<f8", count=count, offset=int(e["offset"])
            ).reshape(shape)
            out[e["name"]] = arr.copy()
        return out

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        for name, arr in cls._read(path).items():
            store.add(name, arr)
        return store

    def load_state(self, path) -> None:
        """Replace the data of existing entries from a checkpoint, in place."""
        state = self._read(path)
        if set(state) != set(self._entries):
            missing = sorted(set(self._entries) - set(state))
            extra = sorted(set(state) - set(self._entries))
            raise ValidationError(
                f"checkpoint does not match this model (missing {missing}, unexpected {extra})"
            )
        for name, arr in state.items():
            t = self._entries[name]
            if arr.shape != t.data.shape:
                raise ValidationError(
                    f"checkpoint shape for {name} is {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr


def backward(loss: Tensor, tape: Tape, params: ParamStore) -> dict[str, Tensor]:
    """Gradient of a scalar loss for every parameter; zeros when unused."""
    names = params.names()
    grads = tape.gradient(loss, [params[n] for n in names])
    return {n: Tensor(g) for n, g in zip(names, grads)}
