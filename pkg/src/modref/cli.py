"""Command-line front door.

Subcommands
    fixtures      generate a synthetic dataset (manifest + tensor archive)
    train         pre-train the visual token generator episodically
    eval          build classifiers, run preference fusion, report accuracy
    export-bank   persist the classifier weight bank as an archive

Datasets are addressed by prefix: PREFIX.manifest.json + PREFIX.ovma.
Exit codes: 0 success, 2 validation/configuration error, 1 I/O error.
A JSON config file (--config) mirrors the flags of the chosen subcommand;
explicit flags win. MODREF_THREADS caps BLAS parallelism when set before
numpy is first imported.
"""

import argparse
import csv
import json
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("MODREF_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise SystemExit(f"error: MODREF_THREADS must be a positive integer, got {cap!r}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(var, cap)


def _fraction(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="modref", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file whose keys mirror the subcommand flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fix = sub.add_parser("fixtures", help="generate a synthetic dataset")
    p_fix.add_argument("--seed", type=int, default=0)
    p_fix.add_argument("--classes", type=_positive_int, default=20)
    p_fix.add_argument("--dim", type=_positive_int, default=64)
    p_fix.add_argument("--shots", type=_positive_int, default=24)
    p_fix.add_argument("--ambiguity", type=_fraction, default=0.0)
    p_fix.add_argument("--sigma", type=_nonneg_float, default=0.3)
    p_fix.add_argument("--out", default="fixture")
    p_fix.set_defaults(func=cmd_fixtures)

    p_train = sub.add_parser("train", help="pre-train the visual token generator")
    p_train.add_argument("--data", required=True, help="dataset prefix")
    p_train.add_argument("--epochs", type=_positive_int, default=30)
    p_train.add_argument("--episodes", type=_positive_int, default=None,
                         help="total episode count, overrides --epochs")
    p_train.add_argument("--k", type=_positive_int, default=8)
    p_train.add_argument("--class-batch", type=_positive_int, default=16)
    p_train.add_argument("--lr", type=_positive_float, default=2e-4)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--tau-t", type=_positive_float, default=0.1)
    p_train.add_argument("--p-tokens", type=_positive_int, default=2)
    p_train.add_argument("--heads", type=_positive_int, default=1)
    p_train.add_argument("--attn-dropout", type=_fraction, default=0.1)
    p_train.add_argument("--channel-dropout", type=_fraction, default=0.1)
    p_train.add_argument("--lang-seed", type=int, default=1234)
    p_train.add_argument("--lang-blocks", type=_positive_int, default=4)
    p_train.add_argument("--context-length", type=_positive_int, default=77)
    p_train.add_argument("--checkpoint-every", type=int, default=0)
    p_train.add_argument("--strict", action="store_true",
                         help="error out on classes with fewer than K samples")
    p_train.add_argument("--out", default="generator")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate classifiers and preference fusion")
    p_eval.add_argument("--data", required=True, help="dataset prefix")
    p_eval.add_argument("--generator", help="generator checkpoint archive")
    p_eval.add_argument("--bank", help="pre-built classifier bank archive")
    p_eval.add_argument("--tau-p", type=_nonneg_float, default=10.0)
    p_eval.add_argument("--tau-t", type=_positive_float, default=None,
                        help="classifier temperature (default: bank value or 0.01)")
    p_eval.add_argument("--metric", choices=["f1", "precision", "recall", "mean"], default="f1")
    p_eval.add_argument("--classifiers", default="auto",
                        help="comma list from T,V,VT to require (default: all available)")
    p_eval.add_argument("--shots-exemplar", type=_positive_int, default=None,
                        help="exemplar rows per class used to build and validate (default: all)")
    p_eval.add_argument("--report", help="write a machine-readable JSON report here")
    p_eval.set_defaults(func=cmd_eval)

    p_bank = sub.add_parser("export-bank", help="persist the classifier weight bank")
    p_bank.add_argument("--data", required=True, help="dataset prefix")
    p_bank.add_argument("--generator", required=True, help="generator checkpoint archive")
    p_bank.add_argument("--tau-t", type=_positive_float, default=None)
    p_bank.add_argument("--shots-exemplar", type=_positive_int, default=None)
    p_bank.add_argument("--out", default="bank.ovma")
    p_bank.set_defaults(func=cmd_export_bank)

    return parser, {"fixtures": p_fix, "train": p_train, "eval": p_eval, "export-bank": p_bank}


def _merge_config(argv, parser, subparsers):
    """Apply --config JSON values as subcommand defaults; explicit flags win."""
    path = None
    rest = list(argv)
    for i, tok in enumerate(rest):
        if tok == "--config":
            if i + 1 >= len(rest):
                parser.error("--config needs a path")
            path = rest[i + 1]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            break
    if path is None:
        return
    command = next((tok for tok in rest if tok in subparsers), None)
    if command is None:
        parser.error("--config requires a subcommand")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            parser.error(f"config file is not valid JSON: {exc}")
    if not isinstance(values, dict):
        parser.error("config file must hold a JSON object")
    sub = subparsers[command]
    actions = {a.dest: a for a in sub._actions}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            parser.error(f"unknown config key {key!r} for {command}")
        sub.set_defaults(**{dest: value})
        actions[dest].required = False


def _dataset_paths(prefix):
    return prefix + ".manifest.json", prefix + ".ovma"


def _load_dataset(prefix):
    from . import dataio

    manifest_path, archive_path = _dataset_paths(prefix)
    manifest = dataio.load_manifest(manifest_path)
    tensors = dataio.read_archive(archive_path)
    refs = dataio.load_references(manifest, tensors)
    return manifest, refs


def _exemplar_subset(refs, shots):
    """First `shots` pooled rows per class (all rows when shots is None)."""
    import copy

    from .errors import ValidationError

    if shots is None:
        return refs
    out = []
    for ref in refs:
        if ref.exemplars is None or ref.exemplars.shape[0] < shots:
            raise ValidationError(
                f"class {ref.class_id} has fewer than {shots} exemplar rows"
            )
        clone = copy.copy(ref)
        clone.exemplars = ref.exemplars[:shots]
        out.append(clone)
    return out


def cmd_fixtures(args):
    from . import dataio

    manifest, tensors = dataio.generate_fixture(
        seed=args.seed,
        num_classes=args.classes,
        d=args.dim,
        shots=args.shots,
        text_ambiguity_fraction=args.ambiguity,
        noise_sigma=args.sigma,
    )
    manifest_path, archive_path = _dataset_paths(args.out)
    dataio.write_archive(archive_path, tensors)
    dataio.save_manifest(manifest_path, manifest)
    print(
        f"fixtures: {args.classes} classes, d={args.dim}, shots={args.shots}, "
        f"sigma={args.sigma}, ambiguity={args.ambiguity} -> {manifest_path}, {archive_path}"
    )
    return 0


def cmd_train(args):
    from . import dataio, encoders, episodic

    manifest, refs = _load_dataset(args.data)
    spec = episodic.EpisodeSpec(k=args.k, class_batch=args.class_batch, strict=args.strict)
    config = episodic.TrainConfig(
        epochs=args.epochs,
        total_episodes=args.episodes,
        base_lr=args.lr,
        seed=args.seed,
        tau_t=args.tau_t,
        p_tokens=args.p_tokens,
        num_heads=args.heads,
        attn_path_dropout=args.attn_dropout,
        channel_dropout=args.channel_dropout,
        lang_seed=args.lang_seed,
        lang_blocks=args.lang_blocks,
        context_length=args.context_length,
    )
    lang = encoders.synthesize_language_encoder(
        args.lang_seed,
        manifest.d,
        num_blocks=args.lang_blocks,
        context_length=args.context_length,
        num_heads=args.heads,
    )
    log_path = args.out + ".log.csv"
    log_exists = os.path.exists(log_path) and os.path.getsize(log_path) > 0
    log_file = open(log_path, "a", newline="")
    writer = csv.writer(log_file)
    if not log_exists:
        writer.writerow(["step", "epoch", "lr", "loss", "m_values"])

    def on_step(step, gen, row):
        writer.writerow(
            [
                row["step"],
                row["epoch"],
                f"{row['lr']:.8e}",
                f"{row['loss']:.8f}",
                ";".join(str(m) for m in row["m_values"]),
            ]
        )
        if args.checkpoint_every > 0 and (step + 1) % args.checkpoint_every == 0:
            dataio.write_archive(
                f"{args.out}.step{step + 1:06d}.ovma",
                encoders.generator_to_tensors(gen, lang),
            )

    try:
        gen, lang, log = episodic.train(refs, spec, config, lang=lang, on_step=on_step)
    finally:
        log_file.close()
    checkpoint = args.out + ".ovma"
    dataio.write_archive(checkpoint, encoders.generator_to_tensors(gen, lang))
    first, last = log[0]["loss"], log[-1]["loss"]
    print(
        f"train: {len(log)} episodes, loss {first:.4f} -> {last:.4f}, "
        f"checkpoint {checkpoint}, log {log_path}"
    )
    return 0


def _build_bank(args, refs):
    """Assemble the classifier bank from --bank or --generator (or text-only)."""
    import numpy as np

    from . import dataio, encoders
    from . import numerics as nm
    from .classifiers import ClassifierBank
    from .errors import ValidationError

    class_ids = [r.class_id for r in refs]
    subset = _exemplar_subset(refs, args.shots_exemplar)
    if getattr(args, "bank", None):
        tensors = dataio.read_archive(args.bank)
        mats = {w: tensors.get(f"bank.w_{w}") for w in ("T", "V", "VT")}
        if all(m is None for m in mats.values()):
            raise ValidationError(f"{args.bank} holds no bank.w_* tensors")
        for w, m in mats.items():
            if m is not None and m.shape[0] != len(class_ids):
                raise ValidationError(
                    f"bank.w_{w} has {m.shape[0]} rows but the manifest lists {len(class_ids)} classes"
                )
        tau_t = args.tau_t
        if tau_t is None:
            stored = tensors.get("bank.tau_t")
            tau_t = float(stored.reshape(-1)[0]) if stored is not None else 0.01
        bank = ClassifierBank(
            class_ids=class_ids,
            w_T=None if mats["T"] is None else nm.constant(mats["T"]),
            w_V=None if mats["V"] is None else nm.constant(mats["V"]),
            w_VT=None if mats["VT"] is None else nm.constant(mats["VT"]),
            tau_t=tau_t,
        )
        return bank, subset
    tau_t = args.tau_t if args.tau_t is not None else 0.01
    if getattr(args, "generator", None):
        gen, lang = encoders.generator_from_tensors(dataio.read_archive(args.generator))
        include = ("T", "V", "VT")
    else:
        gen = None
        d = refs[0].exemplars.shape[1] if refs[0].exemplars is not None else refs[0].text_tokens.shape[1]
        lang = encoders.synthesize_language_encoder(1234, d)
        include = ("T",)
    with nm.inference_mode():
        bank = encoders.build_classifier_weights(
            gen, lang, subset, train_mode=False, include=include, tau_t=tau_t
        )
    return bank, subset


def _pooled(refs, attr):
    import numpy as np

    from .errors import ValidationError

    mats, labels = [], []
    for pos, ref in enumerate(refs):
        arr = getattr(ref, attr)
        if arr is None or arr.shape[0] == 0:
            raise ValidationError(f"class {ref.class_id} has no {attr} to evaluate")
        mats.append(arr)
        labels.append(np.full(arr.shape[0], pos, dtype=np.int64))
    return np.concatenate(mats, axis=0), np.concatenate(labels)


def cmd_eval(args):
    import numpy as np

    from . import classifiers, fusion
    from .errors import ValidationError

    if args.generator and args.bank:
        raise ValidationError("pass either --generator or --bank, not both")
    _, refs = _load_dataset(args.data)
    bank, subset = _build_bank(args, refs)
    if args.classifiers != "auto":
        requested = [part.strip() for part in args.classifiers.split(",") if part.strip()]
        for part in requested:
            bank.matrix(part)  # raises when e.g. V/VT were requested without a generator
    targets, target_labels = _pooled(refs, "targets")
    exemplars, exemplar_labels = _pooled(subset, "exemplars")

    accuracy = {"T": None, "V": None, "VT": None, "fused": None}
    probs_by = {}
    for which in bank.available():
        probs, preds = classifiers.predict(bank, targets, which)
        probs_by[which] = probs.data
        accuracy[which] = float((preds == target_labels).mean())

    preferences = None
    if set(bank.available()) >= {"T", "V", "VT"}:
        fused = fusion.build_fused_classifier(
            bank, exemplars, exemplar_labels, tau_p=args.tau_p, metric=args.metric
        )
        scores, preds = fusion.fuse_predict(
            probs_by["V"], probs_by["VT"], probs_by["T"], fused.preferences
        )
        if args.metric == "mean":
            arithmetic = (probs_by["V"] + probs_by["VT"] + probs_by["T"]) / 3.0
            if not np.allclose(scores, arithmetic, atol=1e-6):
                raise AssertionError("mean-metric fusion diverged from the arithmetic mean")
        accuracy["fused"] = float((preds == target_labels).mean())
        preferences = fused.preferences

    print(f"eval: {len(refs)} classes, {targets.shape[0]} targets, metric={args.metric}, tau_p={args.tau_p}")
    for key in ("T", "V", "VT", "fused"):
        if accuracy[key] is not None:
            print(f"  accuracy[{key:>5}] = {accuracy[key]:.4f}")
    if preferences is not None:
        print("  class preferences (alpha V/VT/T -> weight V/VT/T):")
        for row, ref in enumerate(refs):
            a = preferences.alpha[row]
            w = preferences.alpha_hat[row]
            print(
                f"    {ref.class_id:>4} {ref.name:<12} "
                f"{a[0]:.3f} {a[1]:.3f} {a[2]:.3f} -> {w[0]:.3f} {w[1]:.3f} {w[2]:.3f}"
            )

    if args.report:
        report = {
            "version": 1,
            "metric": args.metric,
            "tau_p": args.tau_p,
            "tau_t": bank.tau_t,
            "num_classes": len(refs),
            "num_targets": int(targets.shape[0]),
            "accuracy": accuracy,
            "preferences": None
            if preferences is None
            else [
                {
                    "class_id": ref.class_id,
                    "name": ref.name,
                    "alpha": {
                        "V": preferences.alpha[row][0],
                        "VT": preferences.alpha[row][1],
                        "T": preferences.alpha[row][2],
                    },
                    "alpha_hat": {
                        "V": preferences.alpha_hat[row][0],
                        "VT": preferences.alpha_hat[row][1],
                        "T": preferences.alpha_hat[row][2],
                    },
                }
                for row, ref in enumerate(refs)
            ],
        }
        from .dataio import _atomic_write

        _atomic_write(args.report, json.dumps(report, indent=2).encode("utf-8"))
        print(f"  report -> {args.report}")
    return 0


def cmd_export_bank(args):
    import numpy as np

    from . import dataio

    _, refs = _load_dataset(args.data)
    bank, _ = _build_bank(args, refs)
    tensors = {}
    for which in bank.available():
        tensors[f"bank.w_{which}"] = getattr(bank, f"w_{which}").data
    tensors["bank.tau_t"] = np.asarray([bank.tau_t], dtype=np.float32)
    dataio.write_archive(args.out, tensors)
    print(f"export-bank: {len(refs)} classes -> {args.out}")
    return 0


def main(argv=None):
    _apply_thread_cap()
    parser, subparsers = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    from .errors import ArchiveFormatError, ModrefError

    try:
        _merge_config(argv, parser, subparsers)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ArchiveFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ModrefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
