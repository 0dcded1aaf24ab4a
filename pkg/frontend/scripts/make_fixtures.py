"""Regenerate the viewer test fixtures from the engine.

Run from the repository root with the Python package installed:

    python3 frontend/scripts/make_fixtures.py

Writes frontend/test/fixtures/sample_doc.json (a real mesh document built
from a synthetic external ensemble) and validation_cases.json (a case table
with the service's actual accept/reject verdict and error detail for each
query, which the client-side validator is tested against).
"""

import json
import pathlib

import numpy as np

from uncertube.color import ColormapConfig
from uncertube.io import MeshDocument, export_mesh_json
from uncertube.service_cli import QueryError, parse_query
from uncertube.tube import TubeParams, build_tubes
from uncertube.uq import ensemble_from_arrays
from uncertube.color import color_tubes

HERE = pathlib.Path(__file__).resolve().parent
FIXTURES = HERE.parent / "test" / "fixtures"


def write_sample_doc() -> None:
    rng = np.random.default_rng(7)
    ensembles = []
    for si, seed in enumerate([(0.1, -0.2, -1.0), (-0.3, 0.25, -0.95)]):
        seed = np.asarray(seed)
        t = np.linspace(0.0, 1.0, 11)
        base = np.stack(
            [
                seed[0] + 0.4 * np.sin(3.0 * t + si),
                seed[1] + 0.4 * np.cos(3.0 * t + si) - 0.4 * np.cos(si),
                seed[2] + 1.2 * t,
            ],
            axis=1,
        )
        spread = 0.01 + 0.06 * t[:, None]
        members = base[None] + rng.normal(size=(12, 11, 3)) * spread[None]
        members[:, 0] = seed
        ensembles.append(ensemble_from_arrays(seed, 0.2, members))

    params = TubeParams(tau=4.0, ring_samples=12)
    colored, ceiling = color_tubes(build_tubes(ensembles, params), ColormapConfig())
    doc = MeshDocument(
        meshes=colored,
        method="external",
        params=params,
        colormap=ColormapConfig(),
        ceiling=ceiling,
        rng_seeds=(),
    )
    export_mesh_json(doc, FIXTURES / "sample_doc.json")


BOX = [[-0.5, 0.5], [-0.5, 0.5], [-1.0, -0.9]]
SEEDS = [[0.0, 0.0, -1.0], [0.1, 0.2, -0.95]]


def q(**kw):
    """A well-formed dropout query, overridden per case."""
    base = {"method": "dropout", "seed_box": BOX, "count": 6, "n_samples": 8}
    base.update(kw)
    return {k: v for k, v in base.items() if v is not ...}


# (name, query, texts_match). texts_match=False marks cases where the
# client flags the same query with different wording (numpy's array
# conversion error vs an element-level report); the verdict still agrees.
CASES = [
    ("valid_minimal_dropout", q(n_steps=20, rng_seed=1, model="desk"), True),
    ("valid_ensemble_seeds", {"method": "ensemble", "seeds": SEEDS, "n_steps": 10}, True),
    ("valid_external_bare", {"method": "external", "model": "runs"}, True),
    (
        "valid_swag_full",
        {
            "method": "swag", "model": "desk", "seed_box": BOX, "count": 4,
            "n_samples": 12, "n_steps": 30, "rng_seed": 0, "tau": 2, "m": 3,
            "radius_convention": "eigenvalue", "include_mean": False,
            "end_cap": True, "generator": "uniform_grid",
        },
        True,
    ),
    ("valid_palette_name", q(colormap={"palette": "grayscale"}), True),
    (
        "valid_colormap_full",
        q(colormap={
            "palette": [[0, 0, 0], [1, 1, 1]],
            "suppress_color": "#aabbcc",
            "magnitude_percentile": 98,
            "magnitude_ceiling": 0.5,
        }),
        True,
    ),
    ("valid_suppress_triple", q(colormap={"suppress_color": [0.8, 0.8, 0.8]}), True),
    ("valid_double_hash_hex", q(colormap={"suppress_color": "##aabbcc"}), True),
    ("valid_tau_boundary", q(tau=2), True),
    ("valid_m_boundary", q(m=3), True),
    ("valid_k_boundary", q(n_samples=2), True),
    ("valid_count_null", q(count=None), True),
    ("valid_n_samples_null", q(n_samples=None), True),
    ("valid_generator", q(generator="pseudo_random"), True),
    ("valid_percentile_boundary", q(colormap={"magnitude_percentile": 100}), True),
    ("reject_non_object_body", [1, 2, 3], True),
    ("reject_unknown_fields", q(bogus=1, zeta=2), True),
    ("reject_bad_method", q(method="bayes"), True),
    ("reject_method_case", q(method="Dropout"), True),
    ("reject_missing_method", {"seed_box": BOX}, True),
    ("reject_seeds_and_box", q(seeds=SEEDS), True),
    ("reject_seeds_empty", {"method": "dropout", "seeds": []}, True),
    ("reject_seeds_two_wide", {"method": "dropout", "seeds": [[1, 2]]}, True),
    ("reject_seeds_flat", {"method": "dropout", "seeds": [1, 2, 3]}, True),
    ("reject_seeds_ragged", {"method": "dropout", "seeds": [[0, 0, -1], [1, 2]]}, False),
    ("reject_seeds_non_numeric", {"method": "dropout", "seeds": [[0, 0, "x"]]}, False),
    ("reject_seeds_null_entry", {"method": "dropout", "seeds": [[0, 0, None]]}, True),
    ("reject_box_two_pairs", q(seed_box=[[0, 1], [0, 1]]), True),
    ("reject_box_reversed", q(seed_box=[[0, 1], [0, 1], [1, 0]]), True),
    ("reject_box_degenerate", q(seed_box=[[-1, 1], [2, 2], [-1, 1]]), True),
    ("reject_no_seeds_no_box", {"method": "dropout"}, True),
    ("reject_external_with_seeds", {"method": "external", "seeds": SEEDS}, True),
    ("reject_external_with_box", {"method": "external", "seed_box": BOX}, True),
    ("reject_bad_generator", q(generator="halton"), True),
    ("reject_generator_null", q(generator=None), True),
    ("reject_count_zero", q(count=0), True),
    ("reject_count_bool", q(count=True), True),
    ("reject_count_string", q(count="8"), True),
    ("reject_k_one", q(n_samples=1), True),
    ("reject_steps_zero", q(n_steps=0), True),
    ("reject_rng_negative", q(rng_seed=-1), True),
    ("reject_rng_fractional", q(rng_seed=2.5), True),
    ("reject_tau_small", q(tau=1.9), True),
    ("reject_tau_string", q(tau="4"), True),
    ("reject_tau_bool", q(tau=True), True),
    ("reject_tau_null", q(tau=None), True),
    ("reject_m_small", q(m=2), True),
    ("reject_m_string", q(m="16"), True),
    ("reject_m_bool", q(m=True), True),
    ("reject_m_null", q(m=None), True),
    ("reject_bad_convention", q(radius_convention="radius"), True),
    ("reject_convention_null", q(radius_convention=None), True),
    ("reject_include_mean_int", q(include_mean=1), True),
    ("reject_include_mean_null", q(include_mean=None), True),
    ("reject_end_cap_string", q(end_cap="yes"), True),
    ("reject_model_int", q(model=5), True),
    ("reject_colormap_scalar", q(colormap=5), True),
    ("reject_colormap_array", q(colormap=[]), True),
    ("reject_colormap_unknown_key", q(colormap={"glow": 1}), True),
    ("reject_unknown_palette", q(colormap={"palette": "plasma"}), True),
    ("reject_palette_scalar", q(colormap={"palette": 5}), True),
    ("reject_palette_one_stop", q(colormap={"palette": [[0, 0, 0]]}), True),
    ("reject_palette_empty", q(colormap={"palette": []}), True),
    ("reject_stop_out_of_range", q(colormap={"palette": [[0, 0, 0], [2, 0, 0]]}), True),
    ("reject_stop_two_wide", q(colormap={"palette": [[0, 0, 0], [0.5, 0.5]]}), True),
    ("reject_stop_scalar", q(colormap={"palette": [[0, 0, 0], 7]}), True),
    ("reject_stop_string", q(colormap={"palette": [["x", 0, 0], [1, 1, 1]]}), True),
    ("reject_hex_short", q(colormap={"suppress_color": "#12345"}), True),
    ("reject_hex_bad_digits", q(colormap={"suppress_color": "zzzzzz"}), True),
    ("reject_suppress_scalar", q(colormap={"suppress_color": 5}), True),
    ("reject_suppress_out_of_range", q(colormap={"suppress_color": [1.5, 0, 0]}), True),
    ("reject_suppress_two_wide", q(colormap={"suppress_color": [0.5, 0.5]}), True),
    ("reject_percentile_zero", q(colormap={"magnitude_percentile": 0}), True),
    ("reject_percentile_high", q(colormap={"magnitude_percentile": 101}), True),
    ("reject_percentile_string", q(colormap={"magnitude_percentile": "50"}), True),
    ("reject_ceiling_zero", q(colormap={"magnitude_ceiling": 0}), True),
    ("reject_ceiling_negative", q(colormap={"magnitude_ceiling": -2}), True),
    ("reject_ceiling_string", q(colormap={"magnitude_ceiling": "x"}), True),
]


def write_validation_cases() -> None:
    out = []
    for name, query, texts_match in CASES:
        try:
            parse_query(query)
            verdict = {"rejected": False, "detail": None}
        except QueryError as exc:
            verdict = {"rejected": True, "detail": exc.detail}
        expected = name.split("_")[0]
        got = "reject" if verdict["rejected"] else "valid"
        if expected != got:
            raise SystemExit(f"case {name}: server said {got}")
        out.append({"name": name, "query": query, "texts_match": texts_match, **verdict})
    path = FIXTURES / "validation_cases.json"
    path.write_text(json.dumps({"cases": out}, indent=1), encoding="utf-8")
    n_rej = sum(c["rejected"] for c in out)
    print(f"{path.name}: {len(out)} cases ({n_rej} rejected)")


def write_tiny_model() -> None:
    """A small trained dropout artifact for the live round-trip test."""
    from uncertube.flowmap import DropoutConfig, ModelConfig, init_model, train
    from uncertube.io import save_model
    from uncertube.vecfield import build_dataset, generate_seeds, synth_field

    field = synth_field()
    box = [[-0.5, 0.5], [-0.5, 0.5], [-1.0, -0.9]]
    seeds = generate_seeds(box, 256, "sobol", rng_seed=0)
    ds = build_dataset(field, seeds, n_cycles=8, delta=0.2, seeding_box=box)
    cfg = ModelConfig(latent_dim=8, dropout=DropoutConfig("all_layers", 0.05))
    model = init_model(cfg, rng_seed=0).bind_dataset(ds)
    train(model, ds, iters=300, batch_size=512, learning_rate=1e-4, rng_seed=0)
    out = FIXTURES / "models"
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "tiny.utnn")
    print("models/tiny.utnn written")


if __name__ == "__main__":
    FIXTURES.mkdir(parents=True, exist_ok=True)
    write_sample_doc()
    print("sample_doc.json written")
    write_validation_cases()
    write_tiny_model()
