"""Text report and line-delimited record file for benchmark results.

Record file: one JSON object per line, keys sorted. Every record carries
``schema`` (currently 1) and ``type``. Types and their fields:

==================  =========================================================
``run``             ``config_hash``, ``subjects``, ``images_per_subject``
``threshold``       ``fmr``, ``value``
``anonymity_psr``   ``fmr``, ``psr``
``unlinkability_psr`` ``fmr``, ``psr``
``refine``          ``subjects``, ``reduced_30pct``, ``anon_within_margin``, ``min_reduction``
``recognition``     ``templates`` (original|protected), ``eer``, ``auc``
``d_sys``           ``variant`` (protected|identity_control), ``bins``, ``d_sys``, ``sensitivity``
``key_psr``         ``key_set``, ``fmr``, ``psr``
``key_robustness``  ``mean``, ``std``
``attack``          ``attack``, ``target`` (protected|control), ``fmr``, ``psr``, ``mean_cosine``
==================  =========================================================

Timings are not recorded, so outputs of two runs with one seed are identical.
"""

import json

RECORD_SCHEMA = 1


def _record(kind, **fields):
    return {"schema": RECORD_SCHEMA, "type": kind, **fields}


def evaluation_records(config, evaluation):
    e = evaluation
    out = [_record("run", config_hash=config.hash_hex(), subjects=config.subjects, images_per_subject=config.images_per_subject)]
    out += [_record("threshold", fmr=f, value=t) for f, t in e.thresholds.items()]
    out += [_record("anonymity_psr", fmr=f, psr=v) for f, v in e.anonymity_psr.items()]
    out += [_record("unlinkability_psr", fmr=f, psr=v) for f, v in e.unlinkability_psr.items()]
    out.append(
        _record(
            "refine",
            subjects=e.refine_subjects,
            reduced_30pct=e.refine_reduced,
            anon_within_margin=e.refine_anon_ok,
            min_reduction=e.refine_min_reduction,
        )
    )
    out.append(_record("recognition", templates="original", eer=e.eer_original, auc=e.auc_original))
    out.append(_record("recognition", templates="protected", eer=e.eer_protected, auc=e.auc_protected))
    for variant, rep in (("protected", e.d_sys), ("identity_control", e.d_sys_control)):
        sens = {str(k): v for k, v in rep.sensitivity.items()}
        out.append(_record("d_sys", variant=variant, bins=rep.bins, d_sys=rep.d_sys, sensitivity=sens))
    out += [_record("key_psr", key_set=j, fmr=e.robustness_fmr, psr=p) for j, p in enumerate(e.robustness.psrs)]
    out.append(_record("key_robustness", mean=e.robustness.mean, std=e.robustness.std))
    return out


def attack_records(study):
    out = []
    for target, reports in (("protected", study.protected), ("control", study.control)):
        for name, rep in reports.items():
            for fmr, value in rep.psr.items():
                out.append(_record("attack", attack=name, target=target, fmr=fmr, psr=value, mean_cosine=rep.mean_cosine))
    return out


def dumps_records(records):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def loads_records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _pct(fmr):
    return f"{100 * fmr:g}%"


def _table(header, rows):
    cols = [header] + rows
    widths = [max(len(str(r[i])) for r in cols) for i in range(len(header))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in cols]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def evaluation_text(config, evaluation):
    e = evaluation
    fmrs = list(e.thresholds)
    parts = [
        "# protection benchmark",
        f"config_hash: {config.hash_hex()}",
        f"subjects: {config.subjects}",
        f"images_per_subject: {config.images_per_subject}",
        f"key_policy: {config.key_policy}",
        f"original_genuine_pairs: {e.summary['genuine_original']}",
        f"original_impostor_pairs: {e.summary['impostor_original']}",
        "",
        "## thresholds and protection success rate (%)",
        _table(
            ["FMR", "threshold", "anonymity PSR", "unlinkability PSR"],
            [
                [_pct(f), f"{e.thresholds[f]:.6f}", f"{e.anonymity_psr[f]:.2f}", f"{e.unlinkability_psr[f]:.2f}"]
                for f in fmrs
            ],
        ),
        f"anonymity_mean_cosine: {e.anonymity_mean_cos:.6f}",
        "",
        "## refinement (first image per subject, key set 0)",
        f"loss_reduced_by_30pct: {e.refine_reduced}/{e.refine_subjects}",
        f"anonymity_within_margin: {e.refine_anon_ok}/{e.refine_subjects}",
        f"min_loss_reduction: {e.refine_min_reduction:.6f}",
        "",
        "## recognition (same key within subject)",
        _table(
            ["templates", "EER", "AUC"],
            [
                ["original", f"{e.eer_original:.6f}", f"{e.auc_original:.6f}"],
                ["protected", f"{e.eer_protected:.6f}", f"{e.auc_protected:.6f}"],
            ],
        ),
        "",
        "## unlinkability (key sets 0 and 1)",
        f"mated_scores: {e.summary['mated']}",
        f"nonmated_scores: {e.summary['nonmated']}",
        _table(
            ["templates", "bins", "D_sys", "D_sys at other bin counts"],
            [
                [name, rep.bins, f"{rep.d_sys:.6f}", ", ".join(f"{k}: {v:.6f}" for k, v in rep.sensitivity.items())]
                for name, rep in (("protected", e.d_sys), ("identity control", e.d_sys_control))
            ],
        ),
        "",
        f"## key robustness (anonymity PSR at FMR {_pct(e.robustness_fmr)}, first image per subject)",
        _table(["key set", "PSR"], [[j, f"{p:.2f}"] for j, p in enumerate(e.robustness.psrs)]),
        f"psr_mean: {e.robustness.mean:.4f}",
        f"psr_std: {e.robustness.std:.4f}",
    ]
    return "\n".join(parts) + "\n"


def attack_text(study):
    fmrs = list(next(iter(study.protected.values())).psr)
    rows = []
    for target, reports in (("protected", study.protected), ("control", study.control)):
        for name, rep in reports.items():
            rows.append([name, target] + [f"{rep.psr[f]:.2f}" for f in fmrs] + [f"{rep.mean_cosine:.6f}"])
    parts = [
        "# irreversibility attacks (evaluation split, key set 0)",
        f"mapper_training_pairs: {study.train_pairs + study.synthetic_pairs}",
        f"mapper_pairs_from_attacker_faces: {study.synthetic_pairs}",
        _table(["attack", "target"] + [f"PSR@{_pct(f)}" for f in fmrs] + ["mean cos"], rows),
    ]
    return "\n".join(parts) + "\n"
