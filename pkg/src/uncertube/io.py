"""Binary and JSON persistence for datasets, models, ensembles, and meshes.

Every binary file starts with a 4-byte magic and a little-endian u32
version; loaders check both and never read past declared lengths. All
numeric round-trips are exact at the stored precision (f32 for bulk
records, f64 for headers and moment sums).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .color import ColormapConfig
from .flowmap import DropoutConfig, FlowMapModel, ModelConfig
from .tube import TubeParams
from .uq import SwagConfig, SwagPosterior, TrajectoryEnsemble
from .vecfield import CoordinateScaling, FlowMapDataset

DATASET_MAGIC = b"UTFM"
MODEL_MAGIC = b"UTNN"
ENSEMBLE_MAGIC = b"UTEN"
POSTERIOR_MAGIC = b"UTSP"
FORMAT_VERSION = 1

_RESCALE_CODES = {"bounding_box": 0, "spatially_uniform": 1}
_RESCALE_NAMES = {v: k for k, v in _RESCALE_CODES.items()}


class FormatError(ValueError):
    """Raised when a file does not match its declared layout."""


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def _check_header(fh, magic: bytes):
    got = _read_exact(fh, 4, "magic")
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version > FORMAT_VERSION:
        raise FormatError(
            f"unsupported {magic.decode()} version {version}; this build reads <= {FORMAT_VERSION}"
        )
    return version


def _read_array(fh, dtype, count: int, what: str) -> np.ndarray:
    raw = _read_exact(fh, count * np.dtype(dtype).itemsize, what)
    return np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)


def _write_block(fh, payload: bytes):
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_block(fh, what: str) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4, f"{what} length"))
    return _read_exact(fh, n, what)


# ---------------------------------------------------------------- datasets

def save_dataset(dataset: FlowMapDataset, path) -> None:
    """Header {magic, version, m, n, delta, rescale, boxes} + m*n f32 records.

    Records run seed-major, 7 floats each: start xyz, raw file cycle,
    end xyz, all in normalized coordinates except the cycle. The validity
    mask is not persisted; loads mark every sample valid.
    """
    m, n = dataset.m_seeds, dataset.n_cycles
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, m, n))
        fh.write(struct.pack("<d", dataset.delta))
        fh.write(struct.pack("<B", _RESCALE_CODES[dataset.scaling.mode]))
        fh.write(np.ascontiguousarray(dataset.original_box, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.seeding_box, dtype="<f8").tobytes())
        records = np.empty((m, n, 7), dtype="<f4")
        records[:, :, 0:3] = dataset.starts[:, None, :]
        records[:, :, 3] = dataset.cycles[None, :]
        records[:, :, 4:7] = dataset.ends
        fh.write(records.tobytes())


def load_dataset(path) -> FlowMapDataset:
    with open(path, "rb") as fh:
        _check_header(fh, DATASET_MAGIC)
        m, n = struct.unpack("<II", _read_exact(fh, 8, "seed/cycle counts"))
        (delta,) = struct.unpack("<d", _read_exact(fh, 8, "delta"))
        (rescale,) = struct.unpack("<B", _read_exact(fh, 1, "rescale mode"))
        if rescale not in _RESCALE_NAMES:
            raise FormatError(f"unknown rescale code {rescale}")
        original_box = _read_array(fh, np.float64, 6, "original box").reshape(3, 2)
        seeding_box = _read_array(fh, np.float64, 6, "seeding box").reshape(3, 2)
        records = _read_array(fh, np.float32, m * n * 7, "records").reshape(m, n, 7)
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after declared records")
    cycles = records[0, :, 3].astype(np.int64)
    return FlowMapDataset(
        starts=records[:, 0, 0:3].astype(np.float64),
        ends=records[:, :, 4:7].astype(np.float64),
        cycles=cycles,
        delta=delta,
        scaling=CoordinateScaling.from_box(original_box, _RESCALE_NAMES[rescale]),
        original_box=original_box,
        seeding_box=seeding_box,
    )


# ------------------------------------------------------------------ models

def _config_dict(config: ModelConfig) -> dict:
    return {
        "encoder_layers": config.encoder_layers,
        "decoder_layers": config.decoder_layers,
        "latent_dim": config.latent_dim,
        "hidden_width": config.hidden_width,
        "sine_frequency": config.sine_frequency,
        "dropout": {"mode": config.dropout.mode, "rate": config.dropout.rate},
    }


def _config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        encoder_layers=int(d["encoder_layers"]),
        decoder_layers=int(d["decoder_layers"]),
        latent_dim=int(d["latent_dim"]),
        hidden_width=None if d.get("hidden_width") is None else int(d["hidden_width"]),
        sine_frequency=float(d["sine_frequency"]),
        dropout=DropoutConfig(
            mode=d["dropout"]["mode"], rate=float(d["dropout"]["rate"])
        ),
    )


def _binding_dict(model: FlowMapModel) -> dict | None:
    if model.scaling is None:
        return None
    return {
        "mode": model.scaling.mode,
        "offset": model.scaling.offset.tolist(),
        "scale": model.scaling.scale.tolist(),
        "n_cycles": model.n_cycles,
        "delta": model.delta,
    }


def _binding_from_dict(d: dict | None) -> dict:
    if d is None:
        return {"scaling": None, "n_cycles": None, "delta": None}
    return {
        "scaling": CoordinateScaling(d["mode"], d["offset"], d["scale"]),
        "n_cycles": int(d["n_cycles"]),
        "delta": float(d["delta"]),
    }


def save_model(model: FlowMapModel, path) -> None:
    """Config/binding JSON block, then per-layer f32 blobs with shape headers."""
    meta = {"config": _config_dict(model.config), "binding": _binding_dict(model)}
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_block(fh, json.dumps(meta, separators=(",", ":")).encode("utf-8"))
        fh.write(struct.pack("<I", len(model.params)))
        for w, b in model.params:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", b.shape[0]))
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path) -> FlowMapModel:
    with open(path, "rb") as fh:
        _check_header(fh, MODEL_MAGIC)
        try:
            meta = json.loads(_read_block(fh, "model metadata"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"model metadata is not valid JSON: {exc}") from None
        config = _config_from_dict(meta["config"])
        (n_layers,) = struct.unpack("<I", _read_exact(fh, 4, "layer count"))
        expected = config.layer_shapes()
        if n_layers != len(expected):
            raise FormatError(
                f"config implies {len(expected)} layers, file declares {n_layers}"
            )
        params = []
        for i, (_, fan_in, fan_out) in enumerate(expected):
            rows, cols = struct.unpack("<II", _read_exact(fh, 8, f"layer {i} shape"))
            if (rows, cols) != (fan_in, fan_out):
                raise FormatError(
                    f"layer {i}: config implies shape {(fan_in, fan_out)}, file has {(rows, cols)}"
                )
            w = _read_array(fh, np.float32, rows * cols, f"layer {i} weights")
            (blen,) = struct.unpack("<I", _read_exact(fh, 4, f"layer {i} bias length"))
            if blen != cols:
                raise FormatError(f"layer {i}: bias length {blen} != fan_out {cols}")
            b = _read_array(fh, np.float32, blen, f"layer {i} bias")
            params.append([w.reshape(rows, cols), b])
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after declared layers")
    return FlowMapModel(config, params, **_binding_from_dict(meta["binding"]))


# --------------------------------------------------------------- ensembles

def _ensemble_batch_header(ensembles) -> tuple:
    if not ensembles:
        raise ValueError("no ensembles to save")
    first = ensembles[0]
    for e in ensembles:
        if e.delta != first.delta or e.n_steps != first.n_steps:
            raise ValueError("ensembles in one file must share delta and step count")
        if e.n_members != first.n_members:
            raise ValueError("ensembles in one file must share the member count")
        if e.method != first.method:
            raise ValueError("ensembles in one file must share the method tag")
    return first.delta, first.n_steps, first.n_members, first.method


def ensembles_json_bytes(ensembles) -> bytes:
    """{version, delta, n_steps, method, members_per_seed, seeds, paths, means}.

    ``paths[s][k]`` is member k of seed s as (n_steps+1) xyz rows starting
    at the seed. ``means`` carries the representative paths; readers
    without it fall back to the member average.
    """
    delta, n_steps, k, method = _ensemble_batch_header(ensembles)
    doc = {
        "version": FORMAT_VERSION,
        "delta": delta,
        "n_steps": n_steps,
        "method": method,
        "members_per_seed": k,
        "seeds": [e.seed.tolist() for e in ensembles],
        "paths": [e.members.tolist() for e in ensembles],
        "means": [e.mean_path.tolist() for e in ensembles],
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def save_ensembles_json(ensembles, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ensembles_json_bytes(ensembles))


def save_ensembles_binary(ensembles, path) -> None:
    """UTEN header then per-seed f32 blocks: mean path, then K member paths."""
    delta, n_steps, k, method = _ensemble_batch_header(ensembles)
    method_bytes = method.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, len(ensembles), k, n_steps))
        fh.write(struct.pack("<d", delta))
        _write_block(fh, method_bytes)
        for e in ensembles:
            fh.write(np.ascontiguousarray(e.mean_path, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(e.members, dtype="<f4").tobytes())


def _ensembles_from_arrays(delta, method, seeds, means, paths) -> list:
    out = []
    for seed, mean, members in zip(seeds, means, paths):
        out.append(
            TrajectoryEnsemble(
                seed=np.asarray(seed, dtype=np.float64),
                delta=float(delta),
                mean_path=np.asarray(mean, dtype=np.float64),
                members=np.asarray(members, dtype=np.float64),
                method=method,
            )
        )
    return out


def load_ensembles(path) -> list:
    """Read either the JSON or the binary ensemble format (sniffed by magic)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == ENSEMBLE_MAGIC:
        return _load_ensembles_binary(path)
    return _load_ensembles_json(path)


def _load_ensembles_json(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"not an ensemble file (invalid JSON: {exc})") from None
    for key in ("version", "delta", "n_steps", "method", "members_per_seed", "seeds", "paths"):
        if key not in doc:
            raise FormatError(f"ensemble JSON missing key {key!r}")
    if doc["version"] > FORMAT_VERSION:
        raise FormatError(f"unsupported ensemble version {doc['version']}")
    try:
        paths = [np.asarray(p, dtype=np.float64) for p in doc["paths"]]
    except ValueError as exc:
        raise FormatError(f"ragged path arrays (bad shape): {exc}") from None
    n_steps = int(doc["n_steps"])
    k = int(doc["members_per_seed"])
    for i, p in enumerate(paths):
        if p.shape != (k, n_steps + 1, 3):
            raise FormatError(
                f"seed {i}: paths shape {p.shape} != ({k}, {n_steps + 1}, 3)"
            )
    means = doc.get("means")
    if means is None:
        means = [p.mean(axis=0) for p in paths]
        for mean, p in zip(means, paths):
            mean[0] = p[0, 0]
    return _ensembles_from_arrays(doc["delta"], doc["method"], doc["seeds"], means, paths)


def _load_ensembles_binary(path) -> list:
    with open(path, "rb") as fh:
        _check_header(fh, ENSEMBLE_MAGIC)
        s, k, n_steps = struct.unpack("<III", _read_exact(fh, 12, "ensemble counts"))
        (delta,) = struct.unpack("<d", _read_exact(fh, 8, "delta"))
        method = _read_block(fh, "method tag").decode("utf-8")
        pts = n_steps + 1
        seeds, means, paths = [], [], []
        for i in range(s):
            mean = _read_array(fh, np.float32, pts * 3, f"seed {i} mean path")
            members = _read_array(fh, np.float32, k * pts * 3, f"seed {i} members")
            mean = mean.reshape(pts, 3).astype(np.float64)
            members = members.reshape(k, pts, 3).astype(np.float64)
            seeds.append(members[0, 0])
            means.append(mean)
            paths.append(members)
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after declared ensembles")
    return _ensembles_from_arrays(delta, method, seeds, means, paths)


# ------------------------------------------------------------- posteriors

def save_posterior(model: FlowMapModel, posterior: SwagPosterior, path,
                   swag_config: SwagConfig | None = None) -> None:
    """Self-contained sampling state: base model + moment sums + deviations."""
    if posterior.n_params != model.param_count:
        raise ValueError("posterior size does not match the model")
    state = posterior.state()
    if state["shift"] is None:
        raise ValueError("posterior has no snapshots yet")
    meta = {
        "config": _config_dict(model.config),
        "binding": _binding_dict(model),
        "swag": None if swag_config is None else {
            "swag_lr": swag_config.swag_lr,
            "n_snapshots": swag_config.n_snapshots,
            "rank": swag_config.rank,
            "momentum": swag_config.momentum,
            "weight_decay": swag_config.weight_decay,
            "batch_size": swag_config.batch_size,
            "snapshot_every": swag_config.snapshot_every,
        },
        "n_params": state["n_params"],
        "rank": state["rank"],
        "n_snapshots": state["n_snapshots"],
        "rank_used": int(state["deviations"].shape[0]),
    }
    with open(path, "wb") as fh:
        fh.write(POSTERIOR_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_block(fh, json.dumps(meta, separators=(",", ":")).encode("utf-8"))
        for w, b in model.params:
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(state["shift"], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state["sum_d"], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state["sumsq_d"], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state["deviations"], dtype="<f4").tobytes())


def load_posterior(path) -> tuple:
    """Returns (base model, posterior) ready for trajectory sampling."""
    with open(path, "rb") as fh:
        _check_header(fh, POSTERIOR_MAGIC)
        try:
            meta = json.loads(_read_block(fh, "posterior metadata"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"posterior metadata is not valid JSON: {exc}") from None
        config = _config_from_dict(meta["config"])
        params = []
        for i, (_, fan_in, fan_out) in enumerate(config.layer_shapes()):
            w = _read_array(fh, np.float32, fan_in * fan_out, f"layer {i} weights")
            b = _read_array(fh, np.float32, fan_out, f"layer {i} bias")
            params.append([w.reshape(fan_in, fan_out), b])
        model = FlowMapModel(config, params, **_binding_from_dict(meta["binding"]))
        n_params = int(meta["n_params"])
        if n_params != model.param_count:
            raise FormatError(
                f"posterior declares {n_params} parameters, model has {model.param_count}"
            )
        shift = _read_array(fh, np.float64, n_params, "posterior shift")
        sum_d = _read_array(fh, np.float64, n_params, "posterior sums")
        sumsq_d = _read_array(fh, np.float64, n_params, "posterior squared sums")
        rank_used = int(meta["rank_used"])
        dev = _read_array(fh, np.float32, rank_used * n_params, "deviation matrix")
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after declared posterior state")
    posterior = SwagPosterior.from_state(
        {
            "n_params": n_params,
            "rank": int(meta["rank"]),
            "n_snapshots": int(meta["n_snapshots"]),
            "shift": shift,
            "sum_d": sum_d,
            "sumsq_d": sumsq_d,
            "deviations": dev.reshape(rank_used, n_params),
        }
    )
    return model, posterior


# ------------------------------------------------------------------ meshes

class _F32:
    """Marks an array whose numbers serialize as shortest-round-trip f32."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float32).reshape(-1)


class _Ints:
    __slots__ = ("values",)

    def __init__(self, values):
        self.values = np.asarray(values).reshape(-1)


def _f32_str(x) -> str:
    v = np.float32(x)
    if not np.isfinite(v):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    return str(v)


def _dump_json(obj, out: list) -> None:
    if isinstance(obj, _F32):
        flat = obj.values
        if flat.size and not np.isfinite(flat).all():
            raise ValueError("non-finite value cannot be serialized")
        out.append("[" + ",".join(str(x) for x in flat) + "]")
    elif isinstance(obj, _Ints):
        out.append("[" + ",".join(map(str, obj.values.tolist())) + "]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _dump_json(value, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, value in enumerate(obj):
            if i:
                out.append(",")
            _dump_json(value, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None or isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            raise ValueError(f"non-finite value {obj!r} cannot be serialized")
        out.append(json.dumps(float(obj)))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class MeshDocument:
    """A colored-mesh batch plus everything needed to regenerate it.

    ``generated_at`` stays None by default so identical queries yield
    byte-identical documents.
    """

    meshes: list
    method: str
    params: TubeParams = field(default_factory=TubeParams)
    colormap: ColormapConfig = field(default_factory=ColormapConfig)
    ceiling: float = 1.0
    rng_seeds: tuple = ()
    frame: str = "domain"
    generated_at: str | None = None


def mesh_document_dict(doc: MeshDocument) -> dict:
    meshes = []
    for mesh in doc.meshes:
        if mesh.colors is None:
            raise ValueError("mesh has no colors; color it before export")
        meshes.append(
            {
                "seed": _F32(mesh.seed),
                "n_rings": mesh.n_rings,
                "ring_samples": mesh.ring_samples,
                "vertices": _F32(mesh.vertices),
                "normals": _F32(mesh.normals),
                "uvs": _F32(mesh.uvs),
                "colors": _F32(mesh.colors),
                "indices": _Ints(mesh.indices),
                "magnitude": _F32(mesh.stats.magnitude),
                "symmetry": _F32(mesh.stats.symmetry),
            }
        )
    return {
        "version": FORMAT_VERSION,
        "meta": {
            "method": doc.method,
            "tau": doc.params.tau,
            "m": doc.params.ring_samples,
            "radius_convention": doc.params.radius_convention,
            "include_mean": doc.params.include_mean,
            "end_cap": doc.params.end_cap,
            "colormap": {
                "palette": [list(stop) for stop in doc.colormap.palette],
                "suppress_color": list(doc.colormap.suppress_color),
                "magnitude_percentile": doc.colormap.magnitude_percentile,
                "magnitude_ceiling": doc.ceiling,
            },
            "rng_seeds": [int(s) for s in doc.rng_seeds],
            "frame": doc.frame,
            "generated_at": doc.generated_at,
        },
        "meshes": meshes,
    }


def mesh_document_bytes(doc: MeshDocument) -> bytes:
    out: list = []
    _dump_json(mesh_document_dict(doc), out)
    return "".join(out).encode("utf-8")


def export_mesh_json(doc: MeshDocument, path) -> None:
    data = mesh_document_bytes(doc)
    with open(path, "wb") as fh:
        fh.write(data)


def obj_bytes(doc: MeshDocument) -> bytes:
    """Vertex-colored OBJ: `v x y z r g b`, `vt`, `vn`, 1-based `f v/vt/vn`.

    One `o` group per tube; indices are global across the file, per the
    usual OBJ convention.
    """
    lines = []
    base = 0
    for t, mesh in enumerate(doc.meshes):
        if mesh.colors is None:
            raise ValueError("mesh has no colors; color it before export")
        lines.append(f"o tube_{t}")
        for v, c in zip(mesh.vertices, mesh.colors):
            lines.append(
                "v "
                + " ".join(_f32_str(x) for x in v)
                + " "
                + " ".join(_f32_str(x) for x in c[:3])
            )
        for uv in mesh.uvs:
            lines.append("vt " + " ".join(_f32_str(x) for x in uv))
        for nrm in mesh.normals:
            lines.append("vn " + " ".join(_f32_str(x) for x in nrm))
        for tri in mesh.indices:
            a, b, c = (int(i) + base + 1 for i in tri)
            lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
        base += mesh.n_vertices
    lines.append("")
    return "\n".join(lines).encode("utf-8")


def export_obj(doc: MeshDocument, path) -> None:
    data = obj_bytes(doc)
    with open(path, "wb") as fh:
        fh.write(data)
