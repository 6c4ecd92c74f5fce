"""Command-line interface: ``latentmix [global flags] VERB [verb flags]``.

Output directory layout (``--out``, default from the config)::

    config.txt                   canonical config dump
    dataset/                     faces.npy, latents.npy, manifest.json
    keys/registry.log            key issue/revoke log
    templates/set-J/*.famx       one template per protected image of key set J
    templates/set-J/refine.json  loss before and after refinement per template
    report.txt, records.jsonl    evaluation report and records
    attack.txt                   attack report (records appended to records.jsonl)

Exit codes: 0 success, 2 configuration error (including artifact hash
mismatch), 3 I/O or file-format error, 4 numeric failure, 5 key error
(unknown or revoked key).
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from latentmix import benchmark, report
from latentmix.config import ExperimentConfig, load_config
from latentmix.dataset import SyntheticDataset, build_dataset, subject_id
from latentmix.errors import (
    ConfigError,
    FormatError,
    NumericError,
    RevokedKeyError,
    SaturationError,
    UnknownKeyError,
)
from latentmix.keying import KeyRegistry
from latentmix.pipeline import ProtectedTemplate, verify

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_KEY = 5


class Context:
    def __init__(self, args):
        config = load_config(args.config) if args.config else ExperimentConfig()
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.out is not None:
            changes["out_dir"] = args.out
        if args.threads is not None:
            changes["threads"] = args.threads
        self.config = config.replace(**changes) if changes else config
        self.out = Path(self.config.out_dir)
        self.quiet = args.quiet
        self.allow_mismatch = getattr(args, "allow_hash_mismatch", False)
        self._backend = None

    @property
    def backend(self):
        if self._backend is None:
            self._backend = self.config.backend()
        return self._backend

    def log(self, message):
        if not self.quiet:
            print(message, file=sys.stderr, flush=True)

    def registry(self):
        return KeyRegistry(self.out / "keys" / "registry.log")

    def check_hash(self, what, found):
        if found == self.config.hash():
            return True
        if not self.allow_mismatch:
            raise ConfigError(
                f"{what} was produced under config hash {found.hex()[:16]}..., "
                f"current config is {self.config.hash_hex()[:16]}... (pass --allow-hash-mismatch to override)"
            )
        print(f"warning: {what} config hash mismatch overridden", file=sys.stderr)
        return False

    def load_dataset(self):
        path = self.out / "dataset"
        if not (path / "manifest.json").exists():
            raise FileNotFoundError(f"no dataset at {path}; run 'synth' first")
        dataset = SyntheticDataset.load(path)
        self.check_hash("dataset", dataset.config_hash)
        return dataset


# -- template files ----------------------------------------------------------


def set_dir(out, index):
    return Path(out) / "templates" / f"set-{index}"


def template_name(subject, image):
    return f"{subject_id(subject)}-{image}.famx"


def write_key_set(out, pset):
    directory = set_dir(out, pset.index)
    directory.mkdir(parents=True, exist_ok=True)
    k = 0
    for s in range(pset.faces.shape[0]):
        for i in pset.images:
            (directory / template_name(s, i)).write_bytes(pset.templates[k].to_bytes())
            k += 1
    losses = {
        "key_set": pset.index,
        "images": list(pset.images),
        "initial": pset.initial_loss.tolist(),
        "final": pset.final_loss.tolist(),
    }
    (directory / "refine.json").write_text(json.dumps(losses, sort_keys=True) + "\n", encoding="utf-8")


def read_key_set(ctx, index, n_subjects):
    directory = set_dir(ctx.out, index)
    meta_path = directory / "refine.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing templates for key set {index} in {directory}; run 'protect' first")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    images = tuple(meta["images"])
    templates = []
    mismatched = False
    for s in range(n_subjects):
        for i in images:
            t = ProtectedTemplate.from_bytes((directory / template_name(s, i)).read_bytes())
            if t.config_hash != ctx.config.hash() and not mismatched:
                mismatched = not ctx.check_hash(f"templates of key set {index}", t.config_hash)
            templates.append(t)
    shape = (n_subjects, len(images))
    return benchmark.ProtectedSet(
        index,
        images,
        np.stack([t.face for t in templates]).reshape(shape + (-1,)),
        np.stack([t.latent.flatten() for t in templates]).reshape(shape + (-1,)),
        [templates[s * len(images)].key_id for s in range(n_subjects)],
        np.array(meta["initial"], dtype=np.float64),
        np.array(meta["final"], dtype=np.float64),
        templates,
    )


# -- verbs -------------------------------------------------------------------


def cmd_synth(ctx, args):
    t0 = time.perf_counter()
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "config.txt").write_text(ctx.config.dump(), encoding="utf-8")
    dataset = build_dataset(ctx.config, ctx.backend)
    digest = dataset.save(ctx.out / "dataset")
    ctx.log(f"synth: {time.perf_counter() - t0:.1f}s")
    print(
        f"subjects={dataset.n_subjects} images_per_subject={dataset.images_per_subject} "
        f"image_dim={dataset.faces.shape[-1]} latent_size={dataset.latents.shape[-1]} manifest_sha256={digest}"
    )


def cmd_protect(ctx, args):
    dataset = ctx.load_dataset()
    sets = args.sets if args.sets is not None else list(range(ctx.config.robustness_keys))
    registry = ctx.registry()
    t0 = time.perf_counter()
    for j in sets:
        protected = benchmark.protect_all(
            ctx.config,
            ctx.backend,
            dataset,
            registry=registry,
            threads=ctx.config.threads,
            generation=args.key_generation,
            sets=[j],
            log=ctx.log,
        )
        write_key_set(ctx.out, protected[j])
    ctx.log(f"protect: {time.perf_counter() - t0:.1f}s")
    print(f"protected key sets {','.join(map(str, sets))} into {ctx.out / 'templates'}")


def _load_protected(ctx, dataset):
    return {j: read_key_set(ctx, j, dataset.n_subjects) for j in range(ctx.config.robustness_keys)}


def cmd_evaluate(ctx, args):
    dataset = ctx.load_dataset()
    protected = _load_protected(ctx, dataset)
    t0 = time.perf_counter()
    evaluation = benchmark.evaluate(ctx.config, ctx.backend, dataset, protected)
    text = report.evaluation_text(ctx.config, evaluation)
    (ctx.out / "report.txt").write_text(text, encoding="utf-8")
    (ctx.out / "records.jsonl").write_text(
        report.dumps_records(report.evaluation_records(ctx.config, evaluation)), encoding="utf-8"
    )
    ctx.log(f"evaluate: {time.perf_counter() - t0:.1f}s")
    if not ctx.quiet:
        print(text, end="")


def cmd_attack(ctx, args):
    dataset = ctx.load_dataset()
    set0 = read_key_set(ctx, 0, dataset.n_subjects)
    thresholds, _ = benchmark.calibrate(ctx.backend, dataset, tuple(ctx.config.fmr))
    t0 = time.perf_counter()
    study = benchmark.attack(ctx.config, ctx.backend, dataset, set0, thresholds, ctx.config.threads, ctx.log)
    text = report.attack_text(study)
    (ctx.out / "attack.txt").write_text(text, encoding="utf-8")
    records_path = ctx.out / "records.jsonl"
    kept = []
    if records_path.exists():
        kept = [r for r in report.loads_records(records_path.read_text(encoding="utf-8")) if r["type"] != "attack"]
    records_path.write_text(report.dumps_records(kept + report.attack_records(study)), encoding="utf-8")
    ctx.log(f"attack: {time.perf_counter() - t0:.1f}s")
    if not ctx.quiet:
        print(text, end="")


def cmd_verify(ctx, args):
    t1 = ProtectedTemplate.from_bytes(Path(args.template1).read_bytes())
    t2 = ProtectedTemplate.from_bytes(Path(args.template2).read_bytes())
    if args.threshold is not None:
        threshold = args.threshold
    else:
        fmr = args.fmr if args.fmr is not None else ctx.config.fmr[0]
        thresholds, _ = benchmark.calibrate(ctx.backend, ctx.load_dataset(), (fmr,))
        threshold = thresholds[fmr]
    match, score = verify(t1, t2, ctx.backend, threshold)
    print(f"{'match' if match else 'no-match'} score={score:.6f} threshold={threshold:.6f}")


def cmd_revoke(ctx, args):
    registry = ctx.registry()
    registry.revoke(args.key_id)
    print(f"revoked {args.key_id}")


def cmd_keys(ctx, args):
    registry = ctx.registry()
    for key_id, status, parent in registry.keys():
        usable = "usable" if registry.is_active(key_id) else "unusable"
        print(f"{key_id} {status} {usable}" + (f" parent={parent}" if parent else ""))


def _int_list(text):
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latentmix",
        description="Key-driven latent mixing for cancelable face templates (toy backend benchmark).",
    )
    parser.add_argument("--config", help="key = value config file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--threads", type=int, help="worker threads for protection")
    parser.add_argument("--quiet", action="store_true", help="suppress progress and report echo")
    sub = parser.add_subparsers(dest="verb", required=True)

    sub.add_parser("synth", help="generate the synthetic dataset")

    p = sub.add_parser("protect", help="protect every dataset image under each key set")
    p.add_argument("--sets", type=_int_list, help="key sets to protect, e.g. 0,1 (default: all)")
    p.add_argument("--key-generation", type=int, default=0, help="draw fresh master keys (reissue after revocation)")
    p.add_argument("--allow-hash-mismatch", action="store_true")

    p = sub.add_parser("verify", help="compare two template files")
    p.add_argument("template1")
    p.add_argument("template2")
    p.add_argument("--threshold", type=float, help="decision threshold (default: calibrated on the dataset)")
    p.add_argument("--fmr", type=float, help="FMR to calibrate the threshold at")
    p.add_argument("--allow-hash-mismatch", action="store_true")

    p = sub.add_parser("evaluate", help="compute every metric and write the report")
    p.add_argument("--allow-hash-mismatch", action="store_true")

    p = sub.add_parser("attack", help="run the irreversibility attacks")
    p.add_argument("--allow-hash-mismatch", action="store_true")

    p = sub.add_parser("revoke", help="revoke a key (derived keys follow their parent)")
    p.add_argument("key_id")

    sub.add_parser("keys", help="list registered keys")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "protect": cmd_protect,
    "verify": cmd_verify,
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
    "revoke": cmd_revoke,
    "keys": cmd_keys,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        ctx = Context(args)
        COMMANDS[args.verb](ctx, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnknownKeyError, RevokedKeyError) as exc:
        print(f"key error: {exc}", file=sys.stderr)
        return EXIT_KEY
    except (NumericError, SaturationError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
