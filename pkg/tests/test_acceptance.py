"""Acceptance criteria, one test per criterion with a printed PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
"""

import json
import os
import time

import numpy as np
import pytest
import scipy.stats

from modref import cli, dataio, encoders, episodic, fusion
from modref import numerics as nm

from helpers import PRIMITIVE_CASES, confusion_metrics_oracle, sweep_primitive


def criterion(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _episode_loss_gradcheck():
    """Full episode loss at d=16 in 64-bit, gradients vs central differences."""
    d, k, class_batch = 16, 4, 2
    manifest, tensors = dataio.generate_fixture(31, 4, d, 2 * k, 0.0, 0.25)
    refs = dataio.load_references(manifest, tensors)
    refs = [
        dataio.ClassReferenceSet(
            class_id=r.class_id,
            name=r.name,
            exemplars=r.exemplars.astype(np.float64),
            text_tokens=r.text_tokens.astype(np.float64),
            targets=None,
        )
        for r in refs
    ]
    spec = episodic.EpisodeSpec(k=k, class_batch=class_batch)
    episode = episodic.sample_episode(refs, spec, np.random.default_rng(3))
    gen = episodic.init_generator(np.random.default_rng(4), d, dtype=np.float64)
    lang = encoders.synthesize_language_encoder(5, d, dtype=np.float64)

    def f():
        return episodic.episode_loss(
            gen, lang, episode, tau_t=0.2, rng=np.random.default_rng(6), train_mode=True
        )

    return nm.grad_check(
        f, gen.parameters(), eps=1e-5, max_entries_per_param=6, rng=np.random.default_rng(7)
    )


class TestAcceptance:
    def test_gradient_integrity(self):
        start = time.perf_counter()
        worst_by_op = {name: sweep_primitive(name, n_cases=20) for name in PRIMITIVE_CASES}
        worst_by_op["episode_loss"] = _episode_loss_gradcheck()
        elapsed = time.perf_counter() - start
        worst = max(worst_by_op.values())
        worst_name = max(worst_by_op, key=worst_by_op.get)
        criterion(
            "gradient integrity",
            worst < 1e-3 and elapsed < 120.0,
            f"max rel err {worst:.2e} ({worst_name}), {elapsed:.1f}s",
        )

    def test_metric_oracle(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(1000):
            c = int(rng.integers(2, 11))
            n = int(rng.integers(1, 51))
            labels = rng.integers(0, c, size=n)
            preds = rng.integers(0, c, size=n)
            oracle = confusion_metrics_oracle(preds, labels, c)
            for metric in ("precision", "recall", "f1"):
                got = fusion.per_class_metric(preds, labels, c, metric)
                worst = max(worst, float(np.abs(got - oracle[metric]).max()))
        criterion("metric oracle", worst <= 1e-12, f"max abs diff {worst:.2e} over 1000 instances")

    def test_fusion_limits(self):
        rng = np.random.default_rng(23)
        exact_mean = True
        argmax_selected = True
        for _ in range(100):
            c = int(rng.integers(1, 12))
            scores = rng.random((c, 3)) * 0.9
            zero_tau = fusion.preference_weights(scores[:, 0], scores[:, 1], scores[:, 2], tau_p=0.0)
            mean_path = fusion.preference_weights(
                scores[:, 0], scores[:, 1], scores[:, 2], tau_p=10.0, metric="mean"
            )
            exact_mean &= np.array_equal(zero_tau.alpha_hat, mean_path.alpha_hat)
            probs = [rng.dirichlet(np.ones(c), size=7) for _ in range(3)]
            fused_zero, _ = fusion.fuse_predict(*probs, zero_tau)
            fused_mean, _ = fusion.fuse_predict(*probs, mean_path)
            exact_mean &= np.array_equal(fused_zero, fused_mean)

            unique = scores.copy()
            winners = rng.integers(0, 3, size=c)
            unique[np.arange(c), winners] = unique.max(axis=1) + 0.05
            sharp = fusion.preference_weights(unique[:, 0], unique[:, 1], unique[:, 2], tau_p=1e4)
            argmax_selected &= bool((sharp.alpha_hat[np.arange(c), winners] > 0.999).all())
        criterion(
            "fusion limits",
            exact_mean and argmax_selected,
            f"tau_p=0 exact mean: {exact_mean}; tau_p=1e4 weight>0.999: {argmax_selected}",
        )

    def test_worked_fusion_example(self):
        pw = fusion.preference_weights(
            np.array([0.5]), np.array([0.8]), np.array([0.5]), tau_p=10.0
        )
        softmax_ok = np.abs(pw.alpha_hat[0] - np.array([0.0453, 0.9094, 0.0453])).max() < 1e-4
        hand = fusion.PreferenceWeights(
            alpha=np.array([[0.2, 0.3, 0.5], [0.5, 0.3, 0.2]]),
            alpha_hat=np.array([[0.2, 0.3, 0.5], [0.5, 0.3, 0.2]]),
            tau_p=1.0,
            metric="f1",
        )
        scores, preds = fusion.fuse_predict(
            np.array([[0.2, 0.8]]), np.array([[0.6, 0.4]]), np.array([[0.9, 0.1]]), hand
        )
        hand_ok = np.abs(scores - np.array([[0.67, 0.54]])).max() < 1e-4 and preds[0] == 0
        criterion(
            "worked fusion example",
            softmax_ok and hand_ok,
            f"softmax row {np.round(pw.alpha_hat[0], 4).tolist()}, scores {np.round(scores[0], 4).tolist()}",
        )

    def test_voken_set_invariance(self):
        rng = np.random.default_rng(29)
        worst = 0.0
        for case in range(50):
            d = int(rng.choice([16, 32, 64]))
            gen = encoders.init_generator(np.random.default_rng(1000 + case), d)
            m = int(rng.integers(1, 12))
            e = rng.normal(size=(m, d)).astype(np.float32)
            e /= np.linalg.norm(e, axis=1, keepdims=True)
            with nm.inference_mode():
                base = encoders.generate_visual_tokens(gen, e).tokens.data
                perm = encoders.generate_visual_tokens(gen, e[rng.permutation(m)]).tokens.data
                dup = encoders.generate_visual_tokens(gen, np.concatenate([e, e])).tokens.data
            worst = max(worst, float(np.abs(base - perm).max()), float(np.abs(base - dup).max()))
        criterion("voken set-invariance", worst < 1e-5, f"max deviation {worst:.2e} over 50 configs")

    def test_episode_sampler(self):
        manifest, tensors = dataio.generate_fixture(37, 20, 8, 10, 0.0, 0.2)
        refs = dataio.load_references(manifest, tensors)
        spec = episodic.EpisodeSpec(k=8, class_batch=4)
        rng = np.random.default_rng(41)
        counts = np.zeros(5, dtype=np.int64)
        disjoint = True
        in_range = True
        for _ in range(10_000):
            episode = episodic.sample_episode(refs, spec, rng)
            for item in episode.items:
                m = item.exemplars.shape[0]
                in_range &= 2 <= m <= 6
                counts[m - 2] += 1
                joined = np.concatenate([item.exemplars, item.targets])
                disjoint &= len({row.tobytes() for row in joined}) == spec.k
        expected = counts.sum() / 5.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        chi2_crit = float(scipy.stats.chi2.ppf(1 - 0.001, df=4))
        criterion(
            "episode sampler",
            disjoint and in_range and chi2 < chi2_crit,
            f"disjoint={disjoint}, M in [2,6]={in_range}, chi2={chi2:.2f} < {chi2_crit:.2f}",
        )

    def test_trend_reproduction(self, acceptance_dataset, trained_generator, tmp_path):
        start = time.perf_counter()
        reports = {}
        for metric in ("f1", "mean"):
            path = str(tmp_path / f"{metric}.json")
            code = cli.main(
                [
                    "eval",
                    "--data", acceptance_dataset,
                    "--generator", trained_generator + ".ovma",
                    "--shots-exemplar", "16",
                    "--metric", metric,
                    "--tau-p", "10",
                    "--report", path,
                ]
            )
            assert code == 0
            with open(path) as fh:
                reports[metric] = json.load(fh)["accuracy"]
        eval_time = time.perf_counter() - start
        with open(trained_generator + ".time") as fh:
            train_time = float(fh.read())
        acc = reports["f1"]
        vt_beats_t = acc["VT"] > acc["T"]
        best = max(acc["T"], acc["V"], acc["VT"])
        fused_ok = acc["fused"] >= best - 0.01
        f1_vs_mean = reports["f1"]["fused"] >= reports["mean"]["fused"] - 0.005
        runtime_ok = train_time + eval_time < 300.0
        criterion(
            "trend reproduction",
            vt_beats_t and fused_ok and f1_vs_mean and runtime_ok,
            f"T={acc['T']:.3f} V={acc['V']:.3f} VT={acc['VT']:.3f} fused={acc['fused']:.3f} "
            f"mean-fused={reports['mean']['fused']:.3f} "
            f"(train {train_time:.0f}s + eval {eval_time:.0f}s)",
        )

    def test_secondary_exporter_end_to_end(self, trained_generator, tmp_path):
        import shutil
        import subprocess

        exporter_dir = os.path.join(os.path.dirname(__file__), "..", "exporter")
        cli_js = os.path.join(exporter_dir, "dist", "cli.js")
        if not os.path.exists(cli_js):
            npm = shutil.which("npm")
            assert npm, "exporter not built and npm unavailable"
            if not os.path.isdir(os.path.join(exporter_dir, "node_modules")):
                subprocess.run([npm, "install"], cwd=exporter_dir, check=True, capture_output=True)
            subprocess.run([npm, "run", "build"], cwd=exporter_dir, check=True, capture_output=True)

        # Two classes, four binary PPM images each.
        rng = np.random.default_rng(59)
        images = tmp_path / "images"
        for name, tint in (("ruby", 200), ("sapphire", 40)):
            (images / name).mkdir(parents=True)
            for i in range(4):
                w, h = 12, 9
                px = np.clip(
                    rng.integers(0, 64, size=(h, w, 3)) + np.array([tint, 30, 255 - tint]),
                    0, 255,
                ).astype(np.uint8)
                with open(images / name / f"img{i}.ppm", "wb") as fh:
                    fh.write(f"P6 {w} {h} 255\n".encode())
                    fh.write(px.tobytes())
        classes_file = tmp_path / "classes.txt"
        classes_file.write_text("ruby\nsapphire\n")

        prefix = str(tmp_path / "export")
        result = subprocess.run(
            ["node", cli_js, "--classes", str(classes_file), "--images", str(images),
             "--template", "a photo of a {}", "--dim", "64", "--out", prefix],
            capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr

        # The primary toolkit's own readers validate the output.
        manifest = dataio.load_manifest(prefix + ".manifest.json")
        tensors = dataio.read_archive(prefix + ".ovma")
        refs = dataio.load_references(manifest, tensors)
        format_ok = (
            manifest.d == 64
            and len(refs) == 2
            and all(r.exemplars.shape == (4, 64) for r in refs)
            and all(
                abs(np.linalg.norm(row) - 1) < 1e-3
                for r in refs
                for row in tensors[f"cls{r.class_id}.exemplars"]
            )
        )

        report_path = str(tmp_path / "report.json")
        code = cli.main(["eval", "--data", prefix,
                         "--generator", trained_generator + ".ovma",
                         "--report", report_path])
        with open(report_path) as fh:
            accuracy = json.load(fh)["accuracy"]
        eval_ok = code == 0 and all(accuracy[k] is not None for k in ("T", "V", "VT", "fused"))
        criterion(
            "secondary exporter",
            format_ok and eval_ok,
            f"archive/manifest valid={format_ok}, eval accuracies {accuracy}",
        )

    def test_determinism(self, tmp_path):
        data = str(tmp_path / "fix")
        assert cli.main(["fixtures", "--seed", "47", "--classes", "8", "--dim", "16",
                         "--shots", "8", "--sigma", "0.2", "--out", data]) == 0
        blobs = []
        for name in ("r1", "r2"):
            out = str(tmp_path / name)
            code = cli.main(["train", "--data", data, "--episodes", "25", "--k", "4",
                             "--class-batch", "4", "--lr", "3e-3", "--seed", "13",
                             "--out", out])
            assert code == 0
            with open(out + ".ovma", "rb") as fh:
                blobs.append(fh.read())
        train_identical = blobs[0] == blobs[1]

        rng = np.random.default_rng(53)
        tensors = {f"t{i}": rng.normal(size=(3, 5)).astype(np.float32) for i in range(4)}
        archive = str(tmp_path / "rt.ovma")
        dataio.write_archive(archive, tensors)
        back = dataio.read_archive(archive)
        round_trip = all(np.array_equal(tensors[k], back[k]) for k in tensors)
        criterion(
            "determinism",
            train_identical and round_trip,
            f"checkpoints byte-identical={train_identical}, archive round-trip bitwise={round_trip}",
        )
