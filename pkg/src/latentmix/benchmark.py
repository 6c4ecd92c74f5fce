"""Benchmark orchestration over a synthetic dataset.

Key sets: set ``j`` has a master key drawn from ``(seed, generation, j)``.
Under the per-subject policy each subject's key is derived from the master;
under the deployment policy every subject uses the master itself. Sets 0
and 1 protect every image; sets 2 and up protect only each subject's first
image and exist for the key-robustness sweep.

Scores are identity-embedding cosines throughout. Decision thresholds are
calibrated on impostor scores between original faces of different subjects.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from latentmix.attacks import invertibility_benchmark, latent_replacement_attack
from latentmix.dataset import band_jitter, build_dataset, sample_latents, subject_id
from latentmix.keying import derive_subject_key, issue_key, key_to_latent
from latentmix.latent import mix_naive_flat
from latentmix.metrics import (
    ScoreSet,
    auc,
    eer,
    fmr_threshold,
    key_robustness,
    match_rate,
    psr,
    unlinkability,
)
from latentmix.pipeline import protect_batch
from latentmix.prng import Stream, derive_seed

FULL_SETS = (0, 1)


# -- keys --------------------------------------------------------------------


def master_key(config, index, generation=0):
    return issue_key(derive_seed("master", config.seed, generation, index))


def key_set(config, index, n_subjects, generation=0):
    """(master, per-subject keys) for key set ``index``."""
    master = master_key(config, index, generation)
    if config.key_policy == "deployment":
        return master, [master] * n_subjects
    return master, [derive_subject_key(master, subject_id(s)) for s in range(n_subjects)]


def key_set_images(config, index):
    return tuple(range(config.images_per_subject)) if index in FULL_SETS else (0,)


def key_latents(keys, backend):
    cache = {}
    for key in keys:
        if key.key_id not in cache:
            cache[key.key_id] = key_to_latent(key, backend.mapper, backend.n_layers, backend.dim).flatten()
    return np.stack([cache[k.key_id] for k in keys])


# -- protection --------------------------------------------------------------


@dataclass
class ProtectedSet:
    """Protected faces of one key set, indexed ``[subject, image slot]``."""

    index: int
    images: tuple
    faces: np.ndarray
    latents: np.ndarray
    key_ids: list
    initial_loss: np.ndarray
    final_loss: np.ndarray
    templates: list = field(default_factory=list, repr=False)


def protect_key_set(config, backend, dataset, index, keys, registry=None, threads=1, generation=0):
    s_count = dataset.n_subjects
    images = key_set_images(config, index)
    faces = dataset.faces[:, list(images)].reshape(-1, dataset.faces.shape[-1])
    item_keys = [keys[s] for s in range(s_count) for _ in images]
    seeds = [derive_seed("augment", config.seed, generation, index, s, i) for s in range(s_count) for i in images]
    ids = [f"{subject_id(s)}/{i}" for s in range(s_count) for i in images]
    traces = []
    templates = protect_batch(
        faces,
        item_keys,
        backend,
        config.protection(),
        seeds,
        ids,
        registry,
        config.hash(),
        threads,
        traces,
    )
    initial = np.array([b.total for tr in traces for b in (tr.history[0] if tr.history else tr.final)])
    final = np.array([b.total for tr in traces for b in tr.final])
    shape = (s_count, len(images))
    return ProtectedSet(
        index,
        images,
        np.stack([t.face for t in templates]).reshape(shape + (-1,)),
        np.stack([t.latent.flatten() for t in templates]).reshape(shape + (-1,)),
        [k.key_id for k in keys],
        initial.reshape(shape),
        final.reshape(shape),
        templates,
    )


def protect_all(config, backend, dataset, registry=None, threads=1, generation=0, sets=None, log=None):
    sets = range(config.robustness_keys) if sets is None else sets
    out = {}
    for j in sets:
        master, keys = key_set(config, j, dataset.n_subjects, generation)
        if registry is not None:
            registry.register(master)
            for key in keys:
                if key.key_id != master.key_id:
                    registry.register(key, parent=master.key_id)
        t0 = time.perf_counter()
        out[j] = protect_key_set(config, backend, dataset, j, keys, registry, threads, generation)
        if log:
            log(f"key set {j}: {out[j].faces.shape[0] * out[j].faces.shape[1]} templates in {time.perf_counter() - t0:.1f}s")
    return out


# -- scoring helpers ---------------------------------------------------------


def embed(backend, faces):
    faces = np.asarray(faces, dtype=np.float64)
    return backend.identity_embed(faces.reshape(-1, faces.shape[-1])).reshape(faces.shape[:-1] + (-1,))


def within_scores(emb, labels):
    """Genuine and impostor scores over unordered pairs ``i < j`` of one set."""
    sims = np.clip(emb @ emb.T, -1.0, 1.0)
    iu = np.triu_indices(emb.shape[0], k=1)
    same = labels[iu[0]] == labels[iu[1]]
    vals = sims[iu]
    return vals[same], vals[~same]


def cross_scores(emb_a, emb_b, labels):
    """Mated (same label) and non-mated scores over all pairs across two sets."""
    sims = np.clip(emb_a @ emb_b.T, -1.0, 1.0)
    same = labels[:, None] == labels[None, :]
    return sims[same], sims[~same]


def rowwise(emb_a, emb_b):
    return np.clip(np.sum(emb_a * emb_b, axis=-1), -1.0, 1.0)


def calibrate(backend, dataset, fmrs):
    """Thresholds at each FMR from impostor scores of the original faces."""
    emb = embed(backend, dataset.flat_faces())
    genuine, impostor = within_scores(emb, dataset.flat_labels())
    return {f: fmr_threshold(impostor, f) for f in fmrs}, ScoreSet(genuine, impostor)


# -- evaluation --------------------------------------------------------------


@dataclass
class Evaluation:
    thresholds: dict
    anonymity_psr: dict
    anonymity_mean_cos: float
    refine_reduced: int
    refine_anon_ok: int
    refine_subjects: int
    refine_min_reduction: float
    eer_original: float
    auc_original: float
    eer_protected: float
    auc_protected: float
    unlinkability_psr: dict
    d_sys: object
    d_sys_control: object
    robustness: object
    robustness_fmr: float
    summary: dict = field(default_factory=dict)


def evaluate(config, backend, dataset, protected):
    """Every metric over protected key sets (``{index: ProtectedSet}``)."""
    fmrs = tuple(config.fmr)
    thresholds, original_scores = calibrate(backend, dataset, fmrs)
    labels = dataset.flat_labels()
    emb_r = embed(backend, dataset.faces)  # (S, P, k)
    set0, set1 = protected[0], protected[1]
    emb_0 = embed(backend, set0.faces)
    emb_1 = embed(backend, set1.faces)

    # anonymity: protected vs its own original
    anon_scores = rowwise(emb_0, emb_r).ravel()
    anonymity = {f: psr(anon_scores, t) for f, t in thresholds.items()}

    # refinement effectiveness on each subject's first image
    reduction = 1.0 - set0.final_loss[:, 0] / set0.initial_loss[:, 0]
    first_cos = rowwise(emb_0[:, 0], emb_r[:, 0])
    margin = config.margin

    # identity preservation: same key within a subject, per-subject keys across subjects
    flat0 = emb_0.reshape(-1, emb_0.shape[-1])
    protected_scores = ScoreSet(*within_scores(flat0, labels))

    # unlinkability: same image under two keys, and the mated/non-mated analysis
    unlink_scores = rowwise(emb_0, emb_1).ravel()
    unlink_psr = {f: psr(unlink_scores, t) for f, t in thresholds.items()}
    bins = config.bins or None
    mated, nonmated = cross_scores(flat0, emb_1.reshape(flat0.shape), labels)
    flat_r = emb_r.reshape(flat0.shape)
    c_mated, c_nonmated = cross_scores(flat_r, flat_r, labels)

    # key robustness: anonymity PSR of first images, one run per key set
    t_rob = thresholds[fmrs[0]]
    robustness = key_robustness(
        sorted(protected),
        lambda j: psr(rowwise(embed(backend, protected[j].faces[:, 0]), emb_r[:, 0]), t_rob),
    )
    return Evaluation(
        thresholds,
        anonymity,
        float(np.mean(anon_scores)),
        int(np.sum(reduction >= 0.30)),
        int(np.sum(first_cos <= margin + 0.05)),
        int(reduction.size),
        float(np.min(reduction)),
        eer(original_scores),
        auc(original_scores),
        eer(protected_scores),
        auc(protected_scores),
        unlink_psr,
        unlinkability(mated, nonmated, bins),
        unlinkability(c_mated, c_nonmated, bins),
        robustness,
        fmrs[0],
        {
            "genuine_original": original_scores.genuine.size,
            "impostor_original": original_scores.impostor.size,
            "mated": mated.size,
            "nonmated": nonmated.size,
        },
    )


# -- attacks -----------------------------------------------------------------


@dataclass
class AttackStudy:
    protected: dict
    control: dict
    train_pairs: int
    synthetic_pairs: int


def attacker_pairs(config, backend, count, threads=1):
    """Extra (protected, original) pairs the attacker makes with its own faces and keys."""
    if count <= 0:
        empty = np.zeros((0, backend.image_dim))
        return empty, empty
    root = Stream(derive_seed("attacker", config.seed))
    latents = sample_latents(backend, root.child("subjects"), count)
    sigmas = {"coarse": config.intra_sigma_coarse, "mid": config.intra_sigma_mid, "fine": config.intra_sigma_fine}
    originals = backend.generate_flat(latents + band_jitter(backend, root.child("intra"), (count,), sigmas))
    master = issue_key(derive_seed("attacker-master", config.seed))
    keys = [derive_subject_key(master, f"a{k:05d}") for k in range(count)]
    seeds = [derive_seed("attacker-augment", config.seed, k) for k in range(count)]
    templates = protect_batch(originals, keys, backend, config.protection(), seeds, threads=threads)
    return np.stack([t.face for t in templates]), originals


def mapper_pair_target(config, backend):
    return config.mapper_pairs or backend.image_dim + 1


def attack(config, backend, dataset, set0, thresholds, threads=1, log=None):
    """Both attacks on the evaluation split of key set 0, plus the zero-protection control."""
    train, held = dataset.train_subjects, dataset.eval_subjects
    width = dataset.faces.shape[-1]
    x_r = dataset.faces[held].reshape(-1, width)
    x_p = set0.faces[held].reshape(-1, width)
    master, keys = key_set(config, 0, dataset.n_subjects)
    z_f = np.repeat(key_latents([keys[s] for s in held], backend), dataset.images_per_subject, axis=0)

    train_x = set0.faces[train].reshape(-1, width)
    train_y = dataset.faces[train].reshape(-1, width)
    extra = max(0, mapper_pair_target(config, backend) - train_x.shape[0])
    t0 = time.perf_counter()
    syn_p, syn_r = attacker_pairs(config, backend, extra, threads)
    if log:
        log(f"attacker protected {extra} synthetic faces in {time.perf_counter() - t0:.1f}s")
    inputs = np.concatenate([train_x, syn_p])
    targets = np.concatenate([train_y, syn_r])
    protected = invertibility_benchmark(x_r, x_p, z_f, inputs, targets, backend, thresholds, config.mapper_alpha)

    # control: the "protected" face is the original; the attacker's key latent is its inversion
    control_targets = np.concatenate([train_y, syn_r])
    control = invertibility_benchmark(
        x_r, x_r, backend.invert_flat(x_r), control_targets, control_targets, backend, thresholds, config.mapper_alpha
    )
    return AttackStudy(protected, control, int(train_x.shape[0]), int(extra))


# -- leakage-free study (naive mixing only) ----------------------------------


@dataclass
class NaiveStudy:
    threshold: float
    protected_vs_original: np.ndarray
    keyface_vs_original: np.ndarray
    match_rate: float
    reconstruction_cos: np.ndarray
    random_pair_cos: np.ndarray


def naive_study(config, fmr=1e-3):
    """Naive mixing (no refinement) with a leak-free backend, first image per subject."""
    cfg = config.replace(leak=0.0)
    backend = cfg.backend()
    dataset = build_dataset(cfg, backend)
    thresholds, original_scores = calibrate(backend, dataset, (fmr,))
    _, keys = key_set(cfg, 0, dataset.n_subjects)
    z_f = key_latents(keys, backend)
    x_r = dataset.faces[:, 0]
    z_r = backend.invert_flat(x_r)
    x_p = backend.generate_flat(mix_naive_flat(z_r, z_f, backend.bands, backend.dim))
    e_r = backend.identity_embed(x_r)
    pv = rowwise(backend.identity_embed(x_p), e_r)
    kv = rowwise(backend.identity_embed(backend.generate_flat(z_f)), e_r)
    recon = latent_replacement_attack(x_p, z_f, backend)
    rc = rowwise(backend.identity_embed(recon), e_r)
    return NaiveStudy(thresholds[fmr], pv, kv, match_rate(pv, thresholds[fmr]), rc, original_scores.impostor)


# -- everything --------------------------------------------------------------


@dataclass
class BenchmarkResult:
    config: object
    dataset: object
    protected: dict
    evaluation: Evaluation
    attacks: AttackStudy
    timings: dict


def run_benchmark(config, threads=1, log=None, with_attacks=True):
    timings = {}
    t0 = time.perf_counter()
    backend = config.backend()
    dataset = build_dataset(config, backend)
    timings["synth"] = time.perf_counter() - t0

    protected = {}
    for j in range(config.robustness_keys):
        t0 = time.perf_counter()
        protected.update(protect_all(config, backend, dataset, threads=threads, sets=[j], log=log))
        timings[f"protect_set{j}"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    evaluation = evaluate(config, backend, dataset, protected)
    timings["evaluate"] = time.perf_counter() - t0

    attacks = None
    if with_attacks:
        t0 = time.perf_counter()
        attacks = attack(config, backend, dataset, protected[0], evaluation.thresholds, threads, log)
        timings["attack"] = time.perf_counter() - t0
    return BenchmarkResult(config, dataset, protected, evaluation, attacks, timings)
