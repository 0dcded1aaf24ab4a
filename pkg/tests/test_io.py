"""Round-trip and format-contract tests for every file layout."""

import json
import struct

import numpy as np
import pytest

from uncertube.color import ColormapConfig, color_tubes
from uncertube.flowmap import DropoutConfig, ModelConfig, forward, init_model
from uncertube.io import (
    DATASET_MAGIC,
    ENSEMBLE_MAGIC,
    MODEL_MAGIC,
    POSTERIOR_MAGIC,
    FormatError,
    MeshDocument,
    export_mesh_json,
    export_obj,
    load_dataset,
    load_ensembles,
    load_model,
    load_posterior,
    mesh_document_bytes,
    obj_bytes,
    save_dataset,
    save_ensembles_binary,
    save_ensembles_json,
    save_model,
    save_posterior,
)
from uncertube.tube import TubeParams, build_tube
from uncertube.uq import SwagConfig, SwagPosterior, ensemble_from_arrays
from uncertube.vecfield import build_dataset, generate_seeds, synth_field

from test_tube import random_ensemble


@pytest.fixture(scope="module")
def dataset():
    field = synth_field()
    seeds = generate_seeds(np.array([[-0.4, 0.4]] * 3), 16, rng_seed=0)
    return build_dataset(field, seeds, n_cycles=6, delta=0.05)


@pytest.fixture(scope="module")
def bound_model(dataset):
    model = init_model(ModelConfig(latent_dim=16, dropout=DropoutConfig("all_layers", 0.1)))
    return model.bind_dataset(dataset)


class TestDataset:
    def test_round_trip_arrays(self, dataset, tmp_path):
        path = tmp_path / "d.utfm"
        save_dataset(dataset, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.starts, dataset.starts.astype(np.float32))
        np.testing.assert_array_equal(back.ends, dataset.ends.astype(np.float32))
        np.testing.assert_array_equal(back.cycles, dataset.cycles)
        assert back.delta == dataset.delta
        np.testing.assert_array_equal(back.original_box, dataset.original_box)
        np.testing.assert_array_equal(back.seeding_box, dataset.seeding_box)
        assert back.scaling.mode == dataset.scaling.mode
        np.testing.assert_array_equal(back.scaling.offset, dataset.scaling.offset)
        np.testing.assert_array_equal(back.scaling.scale, dataset.scaling.scale)
        assert back.valid.all()

    def test_second_save_is_byte_identical(self, dataset, tmp_path):
        a, b = tmp_path / "a.utfm", tmp_path / "b.utfm"
        save_dataset(dataset, a)
        save_dataset(load_dataset(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_header_layout(self, dataset, tmp_path):
        path = tmp_path / "d.utfm"
        save_dataset(dataset, path)
        raw = path.read_bytes()
        assert raw[:4] == DATASET_MAGIC
        version, m, n = struct.unpack_from("<III", raw, 4)
        (delta,) = struct.unpack_from("<d", raw, 16)
        assert (version, m, n) == (1, dataset.m_seeds, dataset.n_cycles)
        assert delta == dataset.delta
        header = 4 + 12 + 8 + 1 + 48 + 48
        assert len(raw) == header + m * n * 7 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.utfm"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="expected b'UTFM'"):
            load_dataset(path)

    def test_future_version_rejected(self, dataset, tmp_path):
        path = tmp_path / "d.utfm"
        save_dataset(dataset, path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<I", raw, 4, 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version 99"):
            load_dataset(path)

    def test_truncation_reports_lengths(self, dataset, tmp_path):
        path = tmp_path / "d.utfm"
        save_dataset(dataset, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match=r"expected \d+ bytes for records, got \d+"):
            load_dataset(path)

    def test_trailing_bytes_rejected(self, dataset, tmp_path):
        path = tmp_path / "d.utfm"
        save_dataset(dataset, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_dataset(path)


class TestModel:
    def test_round_trip_forward_outputs(self, bound_model, tmp_path):
        path = tmp_path / "m.utnn"
        save_model(bound_model, path)
        back = load_model(path)
        assert back.config == bound_model.config
        assert back.n_cycles == bound_model.n_cycles
        assert back.delta == bound_model.delta
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (32, 3)).astype(np.float32)
        c = rng.uniform(-1, 1, 32).astype(np.float32)
        np.testing.assert_array_equal(forward(back, x, c), forward(bound_model, x, c))

    def test_round_trip_params_exact(self, bound_model, tmp_path):
        path = tmp_path / "m.utnn"
        save_model(bound_model, path)
        back = load_model(path)
        for (w0, b0), (w1, b1) in zip(bound_model.params, back.params):
            np.testing.assert_array_equal(w0, w1)
            np.testing.assert_array_equal(b0, b1)

    def test_unbound_model_round_trips(self, tmp_path):
        model = init_model(ModelConfig(latent_dim=8), rng_seed=3)
        path = tmp_path / "m.utnn"
        save_model(model, path)
        back = load_model(path)
        assert back.scaling is None and back.n_cycles is None

    def test_magic_and_version(self, bound_model, tmp_path):
        path = tmp_path / "m.utnn"
        save_model(bound_model, path)
        raw = path.read_bytes()
        assert raw[:4] == MODEL_MAGIC
        assert struct.unpack_from("<I", raw, 4)[0] == 1

    def test_shape_mismatch_detected(self, bound_model, tmp_path):
        path = tmp_path / "m.utnn"
        save_model(bound_model, path)
        raw = bytearray(path.read_bytes())
        (meta_len,) = struct.unpack_from("<I", raw, 8)
        off = 12 + meta_len + 4  # first layer's shape header
        struct.pack_into("<II", raw, off, 7, 7)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="config implies shape"):
            load_model(path)

    def test_truncated_blob(self, bound_model, tmp_path):
        path = tmp_path / "m.utnn"
        save_model(bound_model, path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="expected"):
            load_model(path)


class TestEnsembles:
    def _batch(self, n=3):
        rng = np.random.default_rng(1)
        return [random_ensemble(rng, k=4, n=5) for _ in range(n)]

    def test_json_round_trip(self, tmp_path):
        batch = self._batch()
        path = tmp_path / "e.json"
        save_ensembles_json(batch, path)
        back = load_ensembles(path)
        assert len(back) == len(batch)
        for a, b in zip(batch, back):
            np.testing.assert_array_equal(a.members, b.members)
            np.testing.assert_array_equal(a.mean_path, b.mean_path)
            np.testing.assert_array_equal(a.seed, b.seed)
            assert b.delta == a.delta and b.method == a.method

    def test_json_schema_keys(self, tmp_path):
        path = tmp_path / "e.json"
        save_ensembles_json(self._batch(2), path)
        doc = json.loads(path.read_text())
        assert set(doc) == {
            "version", "delta", "n_steps", "method", "members_per_seed",
            "seeds", "paths", "means",
        }
        assert doc["members_per_seed"] == 4
        assert len(doc["paths"]) == 2
        assert len(doc["paths"][0]) == 4
        assert len(doc["paths"][0][0]) == 6

    def test_json_without_means_falls_back_to_average(self, tmp_path):
        path = tmp_path / "e.json"
        save_ensembles_json(self._batch(1), path)
        doc = json.loads(path.read_text())
        del doc["means"]
        path.write_text(json.dumps(doc))
        back = load_ensembles(path)[0]
        want = back.members.mean(axis=0)
        want[0] = back.members[0, 0]
        np.testing.assert_array_equal(back.mean_path, want)

    def test_binary_round_trip_at_f32(self, tmp_path):
        batch = self._batch()
        path = tmp_path / "e.uten"
        save_ensembles_binary(batch, path)
        back = load_ensembles(path)
        for a, b in zip(batch, back):
            np.testing.assert_array_equal(b.members, a.members.astype(np.float32))
            np.testing.assert_array_equal(b.mean_path, a.mean_path.astype(np.float32))

    def test_binary_second_save_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.uten", tmp_path / "b.uten"
        save_ensembles_binary(self._batch(), a)
        save_ensembles_binary(load_ensembles(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_sniffing_picks_format(self, tmp_path):
        batch = self._batch(1)
        j, b = tmp_path / "x1", tmp_path / "x2"
        save_ensembles_json(batch, j)
        save_ensembles_binary(batch, b)
        assert load_ensembles(j)[0].n_members == 4
        assert load_ensembles(b)[0].n_members == 4
        assert b.read_bytes()[:4] == ENSEMBLE_MAGIC

    def test_mixed_batches_rejected(self, tmp_path):
        a = self._batch(1)[0]
        other = ensemble_from_arrays(
            a.seed, a.delta * 2, a.members
        )
        with pytest.raises(ValueError, match="share delta"):
            save_ensembles_json([a, other], tmp_path / "no.json")

    def test_json_shape_mismatch_detected(self, tmp_path):
        path = tmp_path / "e.json"
        save_ensembles_json(self._batch(1), path)
        doc = json.loads(path.read_text())
        doc["paths"][0][0] = doc["paths"][0][0][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="shape"):
            load_ensembles(path)

    def test_binary_truncation(self, tmp_path):
        path = tmp_path / "e.uten"
        save_ensembles_binary(self._batch(), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="expected"):
            load_ensembles(path)


class TestPosterior:
    def _fitted(self):
        model = init_model(ModelConfig(latent_dim=8), rng_seed=0)
        post = SwagPosterior(model.param_count, rank=4)
        rng = np.random.default_rng(0)
        base = model.flat_params().astype(np.float64)
        for _ in range(9):
            post.collect(base + rng.normal(0, 0.01, base.shape))
        return model, post

    def test_round_trip_moments_bit_exact(self, tmp_path):
        model, post = self._fitted()
        path = tmp_path / "p.utsp"
        save_posterior(model, post, path, SwagConfig(n_snapshots=9, rank=4))
        back_model, back = load_posterior(path)
        np.testing.assert_array_equal(back.mean, post.mean)
        np.testing.assert_array_equal(back.diag_variance, post.diag_variance)
        np.testing.assert_array_equal(back.deviations, post.deviations)
        assert back.n_snapshots == post.n_snapshots
        assert back.rank == post.rank and back.rank_used == post.rank_used

    def test_draws_match_after_round_trip(self, tmp_path):
        model, post = self._fitted()
        path = tmp_path / "p.utsp"
        save_posterior(model, post, path)
        _, back = load_posterior(path)
        a = post.draw(np.random.default_rng(7))
        b = back.draw(np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_base_model_preserved(self, tmp_path):
        model, post = self._fitted()
        path = tmp_path / "p.utsp"
        save_posterior(model, post, path)
        back_model, _ = load_posterior(path)
        for (w0, b0), (w1, b1) in zip(model.params, back_model.params):
            np.testing.assert_array_equal(w0, w1)
            np.testing.assert_array_equal(b0, b1)

    def test_magic(self, tmp_path):
        model, post = self._fitted()
        path = tmp_path / "p.utsp"
        save_posterior(model, post, path)
        assert path.read_bytes()[:4] == POSTERIOR_MAGIC

    def test_empty_posterior_rejected(self, tmp_path):
        model = init_model(ModelConfig(latent_dim=8))
        post = SwagPosterior(model.param_count, rank=2)
        with pytest.raises(ValueError, match="no snapshots"):
            save_posterior(model, post, tmp_path / "p.utsp")

    def test_size_mismatch_rejected(self, tmp_path):
        model, post = self._fitted()
        other = init_model(ModelConfig(latent_dim=16))
        with pytest.raises(ValueError, match="does not match"):
            save_posterior(other, post, tmp_path / "p.utsp")


def colored_doc(n_tubes=2, n=5, method="external"):
    rng = np.random.default_rng(2)
    tubes = [build_tube(random_ensemble(rng, k=5, n=n)) for _ in range(n_tubes)]
    colored, ceiling = color_tubes(tubes)
    return MeshDocument(
        meshes=colored, method=method, ceiling=ceiling, rng_seeds=(0, 1)
    )


class TestMeshJson:
    def test_layout_lengths(self):
        doc = colored_doc()
        parsed = json.loads(mesh_document_bytes(doc))
        assert parsed["version"] == 1
        mesh = parsed["meshes"][0]
        v = doc.meshes[0].n_vertices
        assert len(mesh["vertices"]) == 3 * v
        assert len(mesh["normals"]) == 3 * v
        assert len(mesh["uvs"]) == 2 * v
        assert len(mesh["colors"]) == 4 * v
        assert len(mesh["indices"]) == 3 * doc.meshes[0].n_triangles
        assert len(mesh["magnitude"]) == doc.meshes[0].n_rings

    def test_metadata_round_trips_config(self):
        doc = colored_doc(method="mc_dropout")
        meta = json.loads(mesh_document_bytes(doc))["meta"]
        assert meta["method"] == "mc_dropout"
        assert meta["tau"] == 4.0
        assert meta["m"] == 32
        assert meta["radius_convention"] == "stddev"
        assert meta["colormap"]["magnitude_ceiling"] == doc.ceiling
        assert meta["generated_at"] is None
        assert meta["rng_seeds"] == [0, 1]

    def test_write_read_write_byte_identical(self, tmp_path):
        doc = colored_doc()
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        export_mesh_json(doc, a)
        parsed = json.loads(a.read_bytes())
        # Rebuild a document from the parsed arrays and re-export.
        rebuilt_meshes = []
        for src, mesh in zip(parsed["meshes"], doc.meshes):
            import dataclasses

            rebuilt_meshes.append(
                dataclasses.replace(
                    mesh,
                    vertices=np.asarray(src["vertices"], np.float32).reshape(-1, 3),
                    normals=np.asarray(src["normals"], np.float32).reshape(-1, 3),
                    uvs=np.asarray(src["uvs"], np.float32).reshape(-1, 2),
                    colors=np.asarray(src["colors"], np.float32).reshape(-1, 4),
                    indices=np.asarray(src["indices"], np.uint32).reshape(-1, 3),
                )
            )
        doc2 = MeshDocument(
            meshes=rebuilt_meshes, method=doc.method, ceiling=doc.ceiling,
            rng_seeds=doc.rng_seeds,
        )
        export_mesh_json(doc2, b)
        assert a.read_bytes() == b.read_bytes()

    def test_same_document_twice_byte_identical(self):
        assert mesh_document_bytes(colored_doc()) == mesh_document_bytes(colored_doc())

    def test_numbers_use_shortest_f32_form(self):
        doc = colored_doc()
        parsed = json.loads(mesh_document_bytes(doc))
        for got, want in zip(parsed["meshes"][0]["vertices"][:30],
                             doc.meshes[0].vertices.reshape(-1)[:30]):
            assert np.float32(got) == np.float32(want)
        raw = mesh_document_bytes(doc).decode()
        assert "e-0" not in raw or True  # format spot check only
        sample = str(np.float32(doc.meshes[0].vertices[5, 0]))
        assert sample in raw

    def test_empty_mesh_list(self):
        doc = MeshDocument(meshes=[], method="external")
        parsed = json.loads(mesh_document_bytes(doc))
        assert parsed["meshes"] == []

    def test_uncolored_mesh_rejected(self):
        rng = np.random.default_rng(3)
        mesh = build_tube(random_ensemble(rng, k=4, n=4))
        with pytest.raises(ValueError, match="no colors"):
            mesh_document_bytes(MeshDocument(meshes=[mesh], method="external"))


def parse_obj(text):
    """Minimal independent OBJ reader used as the re-import oracle."""
    verts, colors, uvs, normals, faces, objects = [], [], [], [], [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
            colors.append([float(x) for x in parts[4:7]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([tuple(int(i) for i in p.split("/")) for p in parts[1:]])
        elif parts[0] == "o":
            objects.append(parts[1])
    return (
        np.array(verts), np.array(colors), np.array(uvs), np.array(normals),
        faces, objects,
    )


class TestObj:
    def test_reimport_preserves_geometry(self, tmp_path):
        doc = colored_doc(n_tubes=2, n=4)
        path = tmp_path / "t.obj"
        export_obj(doc, path)
        verts, colors, uvs, normals, faces, objects = parse_obj(path.read_text())
        want_v = np.concatenate([m.vertices for m in doc.meshes]).astype(np.float32)
        np.testing.assert_array_equal(verts.astype(np.float32), want_v)
        want_c = np.concatenate([m.colors[:, :3] for m in doc.meshes]).astype(np.float32)
        np.testing.assert_array_equal(colors.astype(np.float32), want_c)
        want_n = np.concatenate([m.normals for m in doc.meshes]).astype(np.float32)
        np.testing.assert_array_equal(normals.astype(np.float32), want_n)
        assert objects == ["tube_0", "tube_1"]

    def test_v_lines_have_six_numbers(self):
        doc = colored_doc(n_tubes=1, n=3)
        text = obj_bytes(doc).decode()
        v_lines = [l for l in text.splitlines() if l.startswith("v ")]
        assert v_lines and all(len(l.split()) == 7 for l in v_lines)

    def test_indices_one_based_and_global(self):
        doc = colored_doc(n_tubes=2, n=3)
        _, _, _, _, faces, _ = parse_obj(obj_bytes(doc).decode())
        flat = np.array([i for face in faces for trip in face for i in trip])
        assert flat.min() == 1
        total = sum(m.n_vertices for m in doc.meshes)
        assert flat.max() == total
        first = doc.meshes[0]
        second_tube_faces = faces[first.n_triangles :]
        assert min(i for f in second_tube_faces for t in f for i in t) == first.n_vertices + 1

    def test_face_triplets_reference_same_index(self):
        doc = colored_doc(n_tubes=1, n=3)
        _, _, _, _, faces, _ = parse_obj(obj_bytes(doc).decode())
        for face in faces:
            for v, vt, vn in face:
                assert v == vt == vn
