import io

import numpy as np
import pytest

from subprune.bundle import load_bundle, save_bundle
from subprune.network import (
    count_params,
    forward,
    forward_capture,
    model_from_bundle,
    shrink_model,
)
from subprune.pipeline import PrunePlan, run_plan
from subprune.synth import make_teacher, parse_arch, synth_bundle


class TestParseArch:
    def test_mlp(self):
        assert parse_arch("mlp:8,6,4") == ("mlp", [8, 6, 4])

    def test_lenet(self):
        assert parse_arch("lenet-toy") == ("lenet-toy", None)

    @pytest.mark.parametrize("bad", ["mlp:", "mlp:3", "mlp:a,b", "conv:1,2", "mlp:0,5"])
    def test_bad_strings(self, bad):
        with pytest.raises(ValueError, match="bad arch|need"):
            parse_arch(bad)


class TestTeacher:
    def test_weight_init_range(self):
        model = make_teacher("mlp:9,16,4", seed=3)
        w = model.layers[0].weight
        a = 1.0 / np.sqrt(9)
        assert np.all(np.abs(w) <= a)
        assert w.std() > 0.1 * a  # actually random, not degenerate

    def test_lenet_toy_structure(self):
        model = make_teacher("lenet-toy", seed=0)
        kinds = [l.kind for l in model.layers]
        assert kinds == ["conv2d", "conv2d", "dense", "dense"]
        assert [l.prunable for l in model.layers] == [True, True, True, False]


class TestSynthBundle:
    def test_round_trip_identity(self, tmp_path):
        manifest, tensors = synth_bundle("mlp:8,6,4", samples=16, seed=7)
        path = tmp_path / "b.zip"
        save_bundle(manifest, tensors, path)
        m2, t2 = load_bundle(path)
        assert m2.to_json() == manifest.to_json()
        for name, rec in tensors.items():
            np.testing.assert_array_equal(t2[name].to_array(), rec.to_array())

    def test_same_seed_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
        for p in (p1, p2):
            manifest, tensors = synth_bundle("mlp:8,6,4", samples=32, seed=7)
            save_bundle(manifest, tensors, p)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        m1, t1 = synth_bundle("mlp:8,6,4", samples=16, seed=1)
        m2, t2 = synth_bundle("mlp:8,6,4", samples=16, seed=2)
        assert not np.array_equal(
            t1["fc0.weight"].to_array(), t2["fc0.weight"].to_array()
        )

    def test_lenet_capture_shapes(self):
        n = 12
        manifest, tensors = synth_bundle("lenet-toy", samples=n, seed=5)
        # conv0 feeds conv1 (3x3): output map 4x4 -> p=4, groups of 9
        assert tensors["conv0.capture"].shape == (n * 4, 6 * 9)
        # conv1 feeds dense via flatten of its 2x2 map
        assert tensors["conv1.capture"].shape == (n, 8 * 4)
        assert tensors["fc0.capture"].shape == (n, 16)

    def test_labels_are_teacher_argmax(self):
        manifest, tensors = synth_bundle("mlp:8,6,4", samples=16, seed=9)
        model = model_from_bundle(manifest, tensors)
        inputs = tensors["inputs"].to_f64()
        labels = tensors["labels"].to_array()
        np.testing.assert_array_equal(np.argmax(forward(model, inputs), axis=1), labels)

    def test_verification_split_disjoint(self):
        manifest, tensors = synth_bundle("mlp:8,6,4", samples=16, seed=9, verify_samples=8)
        verif = tensors["verification_indices"].to_array()
        assert verif.tolist() == list(range(16, 24))

    def test_captures_match_recomputation(self):
        manifest, tensors = synth_bundle("mlp:8,6,4", samples=16, seed=11)
        model = model_from_bundle(manifest, tensors)
        inputs = tensors["inputs"].to_f64()[:16]
        _, caps = forward_capture(model, inputs)
        np.testing.assert_array_equal(tensors["fc0.capture"].to_array(), caps["fc0"])


class TestShrinkModel:
    def test_shrink_preserves_function_dense(self):
        rng = np.random.default_rng(0)
        manifest, tensors = synth_bundle("mlp:7,12,9,4", samples=24, seed=3)
        model = model_from_bundle(manifest, tensors)
        x = tensors["inputs"].to_f64()[:24]
        plan = PrunePlan(budgets={"fc0": 5, "fc1": 4}, variant="layer")
        result = run_plan(model, x, plan)
        small = shrink_model(result.model)
        np.testing.assert_allclose(forward(small, x), forward(result.model, x), atol=1e-10)
        assert count_params(small) == count_params(result.model)
        assert small.layers[0].weight.shape == (7, 5)
        assert small.layers[1].weight.shape == (5, 4)

    def test_shrink_preserves_function_conv(self):
        # enough samples that every capture has full column rank
        manifest, tensors = synth_bundle("lenet-toy", samples=40, seed=4)
        model = model_from_bundle(manifest, tensors)
        x = tensors["inputs"].to_f64()[:40]
        plan = PrunePlan(budgets={"conv0": 3, "conv1": 5, "fc0": 7}, variant="seq")
        result = run_plan(model, x, plan)
        small = shrink_model(result.model)
        np.testing.assert_allclose(forward(small, x), forward(result.model, x), atol=1e-9)
        assert count_params(small) == count_params(result.model)
        assert small.layers[0].weight.shape[0] == 3
        assert small.layers[1].weight.shape[:2] == (5, 3)
        # dense rows shrink by channel blocks of the 2x2 map
        assert small.layers[2].weight.shape == (5 * 4, 7)

    def test_rank_starved_budget_stops_early_but_stays_exact(self):
        # 10 samples cannot support 5 channel blocks of 4 columns; the
        # zero-residual rule stops selection with fewer units kept and
        # no loss relative to the requested budget
        manifest, tensors = synth_bundle("lenet-toy", samples=10, seed=4)
        model = model_from_bundle(manifest, tensors)
        x = tensors["inputs"].to_f64()[:10]
        plan = PrunePlan(budgets={"conv0": 3, "conv1": 5, "fc0": 7}, variant="seq")
        result = run_plan(model, x, plan)
        assert len(result.layers["conv1"].kept) < 5
        outcome = result.layers["conv1"]
        assert outcome.residual_error <= 1e-8 * max(outcome.baseline, 1.0)
        small = shrink_model(result.model)
        np.testing.assert_allclose(forward(small, x), forward(result.model, x), atol=1e-9)

    def test_shrunk_model_bundles_and_reloads(self, tmp_path):
        manifest, tensors = synth_bundle("mlp:7,12,9,4", samples=16, seed=5)
        model = model_from_bundle(manifest, tensors)
        x = tensors["inputs"].to_f64()
        plan = PrunePlan(budgets={"fc0": 5, "fc1": 4}, variant="asym")
        result = run_plan(model, x[:16], plan)
        from subprune.synth import model_to_bundle

        m2, t2 = model_to_bundle(
            result.model, x, tensors["labels"].to_array(),
            tensors["verification_indices"].to_array(), shrink=True,
        )
        path = tmp_path / "pruned.zip"
        save_bundle(m2, t2, path)
        reloaded = model_from_bundle(*load_bundle(path))
        np.testing.assert_allclose(
            forward(reloaded, x), forward(result.model, x), atol=1e-10
        )
