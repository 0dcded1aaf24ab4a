"""Command-line front door and the HTTP query service.

The service loads every artifact it finds in a models directory once at
startup (model weights, posteriors, ensemble files), then answers queries
by running seed placement -> UQ sampling -> tube meshing -> coloring and
streaming the canonical mesh document back. All shared state is immutable
after load, so concurrent queries cannot interleave.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .color import (
    ColormapConfig,
    color_tubes,
    load_palette,
    palette_by_name,
    parse_hex_color,
)
from .flowmap import DropoutConfig, ModelConfig, init_model, train
from .io import (
    FormatError,
    MeshDocument,
    ensembles_json_bytes,
    export_mesh_json,
    export_obj,
    load_dataset,
    load_ensembles,
    load_model,
    load_posterior,
    mesh_document_bytes,
    save_dataset,
    save_ensembles_binary,
    save_ensembles_json,
    save_model,
    save_posterior,
)
from .tube import TubeParams, available_backends, build_tubes
from .uq import (
    SwagConfig,
    deep_ensemble_sample,
    mc_dropout_sample,
    swag_fit,
    swag_sample_trajectories,
)
from .vecfield import build_dataset, generate_seeds, synth_field, tornado_field

METHODS = ("ensemble", "dropout", "swag", "external")
GENERATORS = ("sobol", "uniform_grid", "pseudo_random")
CONVENTIONS = ("stddev", "eigenvalue")


def _env(name: str, default):
    return os.environ.get(f"UT_{name}", default)


# ------------------------------------------------------------- artifacts

@dataclasses.dataclass(frozen=True)
class Artifact:
    name: str
    kind: str  # model | posterior | ensembles
    path: str
    payload: object


def scan_artifacts(models_dir) -> dict:
    """Load every recognized artifact under ``models_dir`` (non-recursive).

    Files that fail to parse are skipped with a warning on stderr rather
    than failing startup, so one stray file cannot take the service down.
    """
    registry: dict[str, Artifact] = {}
    root = Path(models_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"models directory not found: {root}")
    for path in sorted(root.iterdir()):
        if not path.is_file():
            continue
        try:
            if path.suffix == ".utnn":
                payload, kind = load_model(path), "model"
            elif path.suffix == ".utsp":
                payload, kind = load_posterior(path), "posterior"
            elif path.suffix in (".uten", ".json"):
                payload, kind = load_ensembles(path), "ensembles"
            else:
                continue
        except (FormatError, ValueError, KeyError, TypeError) as exc:
            print(f"skipping {path.name}: {exc}", file=sys.stderr)
            continue
        name = path.stem
        if name in registry:
            name = path.name
        registry[name] = Artifact(name, kind, str(path), payload)
    return registry


def describe_artifacts(registry: dict) -> list:
    out = []
    for name in sorted(registry):
        art = registry[name]
        if art.kind == "model":
            model = art.payload
            out.append(
                {
                    "name": name,
                    "kind": "model",
                    "n_params": model.param_count,
                    "latent_dim": model.config.latent_dim,
                    "dropout_mode": model.config.dropout.mode,
                    "dropout_rate": model.config.dropout.rate,
                    "bound": model.scaling is not None,
                    "n_cycles": model.n_cycles,
                }
            )
        elif art.kind == "posterior":
            model, post = art.payload
            out.append(
                {
                    "name": name,
                    "kind": "posterior",
                    "n_params": post.n_params,
                    "n_snapshots": post.n_snapshots,
                    "rank_used": post.rank_used,
                    "bound": model.scaling is not None,
                    "n_cycles": model.n_cycles,
                }
            )
        else:
            ens = art.payload
            out.append(
                {
                    "name": name,
                    "kind": "ensembles",
                    "n_seeds": len(ens),
                    "members_per_seed": ens[0].n_members,
                    "n_steps": ens[0].n_steps,
                    "method": ens[0].method,
                }
            )
    return out


# ---------------------------------------------------------------- queries

class QueryError(Exception):
    """Maps straight onto an HTTP error body {error, detail}."""

    def __init__(self, status: int, error: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.error = error
        self.detail = detail


def _bad(detail: str) -> QueryError:
    return QueryError(400, "validation", detail)


_QUERY_KEYS = {
    "method", "model", "seeds", "seed_box", "count", "generator",
    "n_samples", "n_steps", "tau", "m", "radius_convention",
    "include_mean", "end_cap", "colormap", "rng_seed",
}


@dataclasses.dataclass
class TubeQuery:
    method: str
    model: str | None
    seeds: np.ndarray | None
    seed_box: np.ndarray | None
    count: int
    generator: str
    n_samples: int | None
    n_steps: int | None
    tau: float
    m: int
    radius_convention: str
    include_mean: bool
    end_cap: bool
    colormap: ColormapConfig
    rng_seed: int


def _colormap_from_dict(data) -> ColormapConfig:
    if data is None:
        return ColormapConfig()
    if not isinstance(data, dict):
        raise _bad("colormap must be an object")
    unknown = set(data) - {"palette", "suppress_color", "magnitude_percentile", "magnitude_ceiling"}
    if unknown:
        raise _bad(f"unknown colormap field(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    palette = data.get("palette")
    if palette is not None:
        try:
            kwargs["palette"] = (
                palette_by_name(palette) if isinstance(palette, str) else tuple(
                    tuple(stop) for stop in palette
                )
            )
        except (TypeError, ValueError) as exc:
            raise _bad(f"bad palette: {exc}") from None
    suppress = data.get("suppress_color")
    if suppress is not None:
        if isinstance(suppress, str):
            try:
                suppress = parse_hex_color(suppress)
            except ValueError as exc:
                raise _bad(str(exc)) from None
        try:
            kwargs["suppress_color"] = tuple(suppress)
        except TypeError:
            raise _bad("suppress_color must be a hex string or RGB triple") from None
    if data.get("magnitude_percentile") is not None:
        kwargs["magnitude_percentile"] = data["magnitude_percentile"]
    if data.get("magnitude_ceiling") is not None:
        kwargs["magnitude_ceiling"] = data["magnitude_ceiling"]
    try:
        return ColormapConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise _bad(f"bad colormap config: {exc}") from None


def _int_field(data, key, default, minimum, what):
    value = data.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise _bad(f"{key} must be an integer")
    if value < minimum:
        raise _bad(f"{key} must be >= {minimum} ({what})")
    return value


def parse_query(data) -> TubeQuery:
    """Validate a raw /query body. Every failure is a 400 with a reason."""
    if not isinstance(data, dict):
        raise _bad("query body must be a JSON object")
    unknown = set(data) - _QUERY_KEYS
    if unknown:
        raise _bad(f"unknown field(s): {', '.join(sorted(unknown))}")
    method = data.get("method")
    if method not in METHODS:
        raise _bad(f"method must be one of {', '.join(METHODS)}")
    seeds = data.get("seeds")
    seed_box = data.get("seed_box")
    if seeds is not None and seed_box is not None:
        raise _bad("give either explicit seeds or a seed_box, not both")
    if seeds is not None:
        try:
            seeds = np.asarray(seeds, dtype=np.float64)
        except (TypeError, ValueError):
            raise _bad("seeds must be an array of [x, y, z] rows") from None
        if seeds.ndim != 2 or seeds.shape[1] != 3 or seeds.shape[0] < 1:
            raise _bad("seeds must be a nonempty array of [x, y, z] rows")
        if not np.isfinite(seeds).all():
            raise _bad("seeds must be finite")
    if seed_box is not None:
        try:
            seed_box = np.asarray(seed_box, dtype=np.float64)
        except (TypeError, ValueError):
            raise _bad("seed_box must be three [min, max] pairs") from None
        if seed_box.shape != (3, 2):
            raise _bad("seed_box must be three [min, max] pairs")
        if not np.isfinite(seed_box).all() or np.any(seed_box[:, 0] >= seed_box[:, 1]):
            raise _bad("seed_box must have min < max on every axis")
    if method != "external" and seeds is None and seed_box is None:
        raise _bad("query needs seeds or a seed_box")
    if method == "external" and (seeds is not None or seed_box is not None):
        raise _bad("external ensembles carry their own seeds")
    generator = data.get("generator", "sobol")
    if generator not in GENERATORS:
        raise _bad(f"generator must be one of {', '.join(GENERATORS)}")
    count = _int_field(data, "count", 64, 1, "seed count")
    n_samples = _int_field(data, "n_samples", None, 2, "minimum member count")
    n_steps = _int_field(data, "n_steps", None, 1, "trajectory steps")
    rng_seed = _int_field(data, "rng_seed", 0, 0, "rng seed")
    tau = data.get("tau", 4.0)
    if isinstance(tau, bool) or not isinstance(tau, (int, float)):
        raise _bad("tau must be a number")
    if tau < 2:
        raise _bad("tau must be >= 2")
    m = data.get("m", 32)
    if isinstance(m, bool) or not isinstance(m, int):
        raise _bad("m must be an integer")
    if m < 3:
        raise _bad("m must be >= 3 (ring samples)")
    convention = data.get("radius_convention", "stddev")
    if convention not in CONVENTIONS:
        raise _bad(f"radius_convention must be one of {', '.join(CONVENTIONS)}")
    include_mean = data.get("include_mean", True)
    end_cap = data.get("end_cap", False)
    if not isinstance(include_mean, bool) or not isinstance(end_cap, bool):
        raise _bad("include_mean and end_cap must be booleans")
    model = data.get("model")
    if model is not None and not isinstance(model, str):
        raise _bad("model must be an artifact name")
    return TubeQuery(
        method=method,
        model=model,
        seeds=seeds,
        seed_box=seed_box,
        count=count,
        generator=generator,
        n_samples=n_samples,
        n_steps=n_steps,
        tau=float(tau),
        m=m,
        radius_convention=convention,
        include_mean=include_mean,
        end_cap=end_cap,
        colormap=_colormap_from_dict(data.get("colormap")),
        rng_seed=rng_seed,
    )


def _pick(registry, query: TubeQuery, kind: str, usable) -> Artifact:
    if query.model is not None:
        art = registry.get(query.model)
        if art is None:
            raise QueryError(404, "unknown_model", f"no artifact named {query.model!r}")
        if art.kind != kind or not usable(art):
            raise _bad(f"artifact {query.model!r} cannot serve method {query.method!r}")
        return art
    candidates = [a for a in registry.values() if a.kind == kind and usable(a)]
    if not candidates:
        raise QueryError(404, "unknown_model", f"no {kind} artifact available for {query.method!r}")
    if len(candidates) > 1:
        names = ", ".join(sorted(a.name for a in candidates))
        raise _bad(f"several artifacts match; pick one with 'model': {names}")
    return candidates[0]


def _resolve_seeds(query: TubeQuery) -> np.ndarray:
    if query.seeds is not None:
        return query.seeds
    return generate_seeds(
        query.seed_box, query.count, query.generator, rng_seed=query.rng_seed
    )


def run_query(query: TubeQuery, registry: dict) -> list:
    """Produce the trajectory ensembles a query asks for."""
    if query.method == "external":
        art = _pick(registry, query, "ensembles", lambda a: True)
        return list(art.payload)
    if query.method == "ensemble":
        models = [a.payload for a in sorted(
            (a for a in registry.values() if a.kind == "model"),
            key=lambda a: a.name,
        ) if a.payload.scaling is not None]
        if query.n_samples is not None:
            if query.n_samples > len(models):
                raise _bad(
                    f"n_samples {query.n_samples} exceeds the {len(models)} available models"
                )
            models = models[: query.n_samples]
        if len(models) < 2:
            raise _bad("a deep ensemble needs at least 2 bound models (minimum member count 2)")
        return deep_ensemble_sample(models, _resolve_seeds(query), query.n_steps)
    if query.method == "dropout":
        art = _pick(
            registry, query, "model",
            lambda a: a.payload.config.dropout.mode != "none"
            and a.payload.scaling is not None,
        )
        k = 30 if query.n_samples is None else query.n_samples
        return mc_dropout_sample(
            art.payload, _resolve_seeds(query), k, query.rng_seed, query.n_steps
        )
    art = _pick(registry, query, "posterior", lambda a: a.payload[0].scaling is not None)
    model, posterior = art.payload
    k = 30 if query.n_samples is None else query.n_samples
    return swag_sample_trajectories(
        model, posterior, _resolve_seeds(query), k, query.rng_seed, query.n_steps
    )


def query_mesh_bytes(query: TubeQuery, registry: dict, workers: int = 1) -> bytes:
    ensembles = run_query(query, registry)
    params = TubeParams(
        tau=query.tau,
        ring_samples=query.m,
        radius_convention=query.radius_convention,
        include_mean=query.include_mean,
        end_cap=query.end_cap,
    )
    meshes = build_tubes(ensembles, params, workers=workers)
    colored, ceiling = color_tubes(meshes, query.colormap)
    doc = MeshDocument(
        meshes=colored,
        method=query.method,
        params=params,
        colormap=query.colormap,
        ceiling=ceiling,
        rng_seeds=(query.rng_seed,),
    )
    return mesh_document_bytes(doc)


def query_ensemble_bytes(query: TubeQuery, registry: dict) -> bytes:
    return ensembles_json_bytes(run_query(query, registry))


# -------------------------------------------------------------- HTTP app

def create_app(models_dir, workers: int | None = None):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, Response

    if workers is None:
        workers = int(_env("THREADS", "1"))
    registry = scan_artifacts(models_dir)
    app = FastAPI(title="uncertube", version=__version__)

    @app.exception_handler(QueryError)
    async def _query_error(_req: Request, exc: QueryError):
        return JSONResponse({"error": exc.error, "detail": exc.detail}, status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def _body_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            {"error": "validation", "detail": str(exc.errors()[:1])}, status_code=400
        )

    @app.exception_handler(Exception)
    async def _internal(_req: Request, exc: Exception):
        return JSONResponse(
            {"error": "internal", "detail": f"{type(exc).__name__}: {exc}"}, status_code=500
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/models")
    def models():
        return describe_artifacts(registry)

    @app.post("/query")
    def query(data: dict):
        body = query_mesh_bytes(parse_query(data), registry, workers=workers)
        return Response(content=body, media_type="application/json")

    @app.post("/ensemble")
    def ensemble(data: dict):
        body = query_ensemble_bytes(parse_query(data), registry)
        return Response(content=body, media_type="application/json")

    return app


# -------------------------------------------------------------- commands

def _parse_box(text: str) -> np.ndarray:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 6:
        raise argparse.ArgumentTypeError("box needs 6 numbers: x0,x1,y0,y1,z0,z1")
    return np.asarray(vals, dtype=np.float64).reshape(3, 2)


def _parse_dropout(text: str) -> DropoutConfig:
    mode_map = {"none": "none", "all": "all_layers", "last": "last_layer"}
    mode, _, rate = text.partition(":")
    if mode not in mode_map:
        raise argparse.ArgumentTypeError("dropout must be {none|all|last}[:RATE]")
    if mode == "none":
        return DropoutConfig("none", 0.0)
    if not rate:
        raise argparse.ArgumentTypeError(f"dropout mode {mode!r} needs a rate, e.g. {mode}:0.1")
    try:
        return DropoutConfig(mode_map[mode], float(rate))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _field_preset(name: str):
    return synth_field() if name == "synth" else tornado_field()


def _cmd_gen_data(args) -> int:
    field = _field_preset(args.field)
    box = args.seed_box if args.seed_box is not None else field.domain
    seeds = generate_seeds(box, args.seeds, args.generator, rng_seed=args.rng_seed)
    rescale = "bounding_box" if args.rescale == "bbox" else "spatially_uniform"
    dataset = build_dataset(
        field, seeds, n_cycles=args.cycles, delta=args.delta,
        rescale=rescale, seeding_box=box,
    )
    save_dataset(dataset, args.out)
    kept = int(dataset.valid.sum())
    print(f"wrote {args.out}: {dataset.m_seeds} seeds x {dataset.n_cycles} cycles "
          f"({kept}/{dataset.sample_count} samples valid)")
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    config = ModelConfig(
        encoder_layers=args.enc,
        decoder_layers=args.dec,
        latent_dim=args.latent,
        hidden_width=args.width,
        dropout=args.dropout,
    )
    model = init_model(config, rng_seed=args.seed).bind_dataset(dataset)
    report = train(
        model, dataset, iters=args.iters, batch_size=args.batch,
        learning_rate=args.lr, rng_seed=args.seed,
    )
    save_model(model, args.out)
    print(
        f"wrote {args.out}: loss {report.initial_probe_loss:.5f} -> "
        f"{report.final_probe_loss:.5f} over {report.iters} iters "
        f"({report.wall_time_s:.1f}s)"
    )
    return 0


def _cmd_swag_fit(args) -> int:
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    config = SwagConfig(
        swag_lr=args.swag_lr, n_snapshots=args.snapshots, rank=args.rank,
        batch_size=args.batch,
    )
    posterior = swag_fit(model, dataset, config, rng_seed=args.seed)
    save_posterior(model, posterior, args.out, config)
    print(f"wrote {args.out}: {posterior.n_snapshots} snapshots, rank {posterior.rank_used}")
    return 0


def _cmd_uq(args) -> int:
    seeds = generate_seeds(args.seeds_box, args.seeds, args.generator, rng_seed=args.rng_seed)
    if args.method == "ensemble":
        if not args.models:
            print("--models DIR is required for method=ensemble", file=sys.stderr)
            return 2
        paths = sorted(Path(args.models).glob("*.utnn"))
        models = [load_model(p) for p in paths]
        if len(models) < 2:
            print(f"need >= 2 models in {args.models}, found {len(models)}", file=sys.stderr)
            return 1
        ensembles = deep_ensemble_sample(models, seeds, args.n_steps)
    elif args.method == "dropout":
        if not args.model:
            print("--model FILE is required for method=dropout", file=sys.stderr)
            return 2
        model = load_model(args.model)
        ensembles = mc_dropout_sample(model, seeds, args.n_samples, args.rng_seed, args.n_steps)
    else:
        if not args.model:
            print("--model FILE is required for method=swag", file=sys.stderr)
            return 2
        model, posterior = load_posterior(args.model)
        ensembles = swag_sample_trajectories(
            model, posterior, seeds, args.n_samples, args.rng_seed, args.n_steps
        )
    if args.format == "binary":
        save_ensembles_binary(ensembles, args.out)
    else:
        save_ensembles_json(ensembles, args.out)
    first = ensembles[0]
    print(f"wrote {args.out}: {len(ensembles)} seeds x {first.n_members} members "
          f"x {first.n_steps} steps")
    return 0


def _cmd_tube(args) -> int:
    ensembles = load_ensembles(args.ensemble)
    params = TubeParams(
        tau=args.tau, ring_samples=args.m, radius_convention=args.radius_convention,
        end_cap=args.end_cap,
    )
    if args.palette and Path(args.palette).exists():
        palette = load_palette(args.palette)
    elif args.palette:
        palette = palette_by_name(args.palette)
    else:
        palette = palette_by_name("viridis")
    colormap = ColormapConfig(
        palette=palette,
        suppress_color=parse_hex_color(args.suppress_color),
        magnitude_percentile=args.percentile,
    )
    meshes = build_tubes(ensembles, params, workers=args.workers, backend=args.backend)
    colored, ceiling = color_tubes(meshes, colormap)
    doc = MeshDocument(
        meshes=colored, method=ensembles[0].method, params=params,
        colormap=colormap, ceiling=ceiling,
    )
    export_mesh_json(doc, args.out)
    total_tris = sum(m.n_triangles for m in colored)
    print(f"wrote {args.out}: {len(colored)} tubes, {total_tris} triangles, "
          f"ceiling {ceiling:.6g}")
    if args.obj:
        export_obj(doc, args.obj)
        print(f"wrote {args.obj}")
    return 0


def _synthetic_ensembles(n_seeds: int, n_steps: int, n_samples: int) -> list:
    from .uq import ensemble_from_arrays

    rng = np.random.default_rng(0)
    out = []
    for _ in range(n_seeds):
        seed = rng.uniform(-1, 1, 3)
        drift = np.linspace(0, 1, n_steps + 1)[None, :, None] * rng.uniform(-0.5, 0.5, 3)
        walk = rng.normal(0, 0.01, (n_samples, n_steps + 1, 3)).cumsum(axis=1)
        members = seed + drift + walk
        members[:, 0] = seed
        out.append(ensemble_from_arrays(seed, 0.1, members))
    return out


def _cmd_bench(args) -> int:
    ensembles = _synthetic_ensembles(args.seeds, args.steps, args.samples)
    worker_counts = sorted({1, args.workers})
    print(f"{'backend':<10} {'workers':>7} {'seeds':>6} {'steps':>6} {'samples':>8} "
          f"{'total_ms':>9} {'ms_per_tube':>12}")
    for backend in available_backends():
        for workers in worker_counts:
            build_tubes(ensembles[: min(4, len(ensembles))], workers=workers, backend=backend)
            t0 = time.perf_counter()
            build_tubes(ensembles, workers=workers, backend=backend)
            ms = (time.perf_counter() - t0) * 1e3
            print(f"{backend:<10} {workers:>7} {args.seeds:>6} {args.steps:>6} "
                  f"{args.samples:>8} {ms:>9.1f} {ms / args.seeds:>12.3f}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    app = create_app(args.models, workers=args.threads)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except (OSError, SystemExit) as exc:
        print(f"server failed to start on {args.host}:{args.port}: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uncertube",
        description="Uncertainty tubes: flow-map surrogates, UQ sampling, and tube meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="trace a field preset into a training dataset")
    p.add_argument("--field", choices=("synth", "tornado"), required=True)
    p.add_argument("--seeds", type=int, required=True, help="number of seed points")
    p.add_argument("--cycles", type=int, required=True, help="file cycles per seed")
    p.add_argument("--delta", type=float, required=True, help="time step between cycles")
    p.add_argument("--rescale", choices=("bbox", "uniform"), default="bbox")
    p.add_argument("--generator", choices=GENERATORS, default="sobol")
    p.add_argument("--seed-box", type=_parse_box, default=None,
                   help="seeding box x0,x1,y0,y1,z0,z1 (default: whole domain)")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the flow-map surrogate on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--enc", type=int, default=2, help="encoder layers per branch")
    p.add_argument("--dec", type=int, default=3, help="decoder layers")
    p.add_argument("--latent", type=int, default=64)
    p.add_argument("--width", type=int, default=None, help="hidden width (default: latent)")
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dropout", type=_parse_dropout, default=DropoutConfig("none", 0.0),
                   help="{none|all|last}:RATE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("swag-fit", help="collect an SGD snapshot posterior around a model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--swag-lr", type=float, default=5e-4)
    p.add_argument("--snapshots", type=int, default=1000)
    p.add_argument("--rank", type=int, default=100)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_swag_fit)

    p = sub.add_parser("uq", help="sample trajectory ensembles from trained artifacts")
    p.add_argument("--method", choices=("ensemble", "dropout", "swag"), required=True)
    p.add_argument("--models", default=None, help="directory of .utnn models (ensemble)")
    p.add_argument("--model", default=None, help="model or posterior file (dropout/swag)")
    p.add_argument("--seeds-box", type=_parse_box, required=True)
    p.add_argument("--seeds", type=int, default=64, help="number of seed points")
    p.add_argument("--generator", choices=GENERATORS, default="sobol")
    p.add_argument("--n-samples", type=int, default=30, help="members per seed")
    p.add_argument("--n-steps", type=int, default=None)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "binary"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_uq)

    p = sub.add_parser("tube", help="mesh an ensemble file into colored tubes")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--tau", type=float, default=4.0)
    p.add_argument("--m", type=int, default=32, help="boundary samples per ring")
    p.add_argument("--radius-convention", choices=CONVENTIONS, default="stddev")
    p.add_argument("--end-cap", action="store_true")
    p.add_argument("--palette", default=None, help="palette name or JSON file")
    p.add_argument("--percentile", type=float, default=98.0)
    p.add_argument("--suppress-color", default="#cccccc")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--backend", choices=("auto", "compiled", "python"), default="auto")
    p.add_argument("--out", required=True)
    p.add_argument("--obj", default=None, help="also write a vertex-colored OBJ")
    p.set_defaults(func=_cmd_tube)

    p = sub.add_parser("serve", help="serve the query loop over HTTP")
    p.add_argument("--models", default=_env("MODELS", "."), help="artifact directory")
    p.add_argument("--host", default=_env("HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(_env("PORT", "8711")))
    p.add_argument("--threads", type=int, default=int(_env("THREADS", "1")),
                   help="mesh workers per query")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="time tube meshing across backends and workers")
    p.add_argument("--seeds", type=int, default=300)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (OSError, ValueError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
