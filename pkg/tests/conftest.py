"""Shared builders for keys, scores, and random evaluation sets."""

import numpy as np

from sveval.trialdata import ScoreSet, TrialId, TrialKey, TrialRecord


def record(model, segment, label, gender="female", source="Y", lang="Y",
           phone="NA", n_enroll=1, track="audio"):
    return TrialRecord(TrialId(model, segment), label, gender, source, lang,
                       phone, n_enroll, track)


def single_cell_key(targets, nontargets, model_prefix="m"):
    """Visual-track key with one gender: exactly one partition cell per class."""
    recs = []
    entries = {}
    for i, s in enumerate(targets):
        r = record(f"{model_prefix}{i:03d}", f"t{i:03d}", "target",
                   source="N", lang="N", track="visual")
        recs.append(r)
        entries[r.id] = float(s)
    for i, s in enumerate(nontargets):
        r = record(f"{model_prefix}{i:03d}", f"n{i:03d}", "nontarget",
                   source="N", lang="N", track="visual")
        recs.append(r)
        entries[r.id] = float(s)
    return TrialKey("visual", tuple(recs)), ScoreSet(entries)


def random_audio_key(seed, n_trials=400, n_models=12, target_fraction=0.3,
                     with_three_segment=False):
    """Random audio key populating all partition dimensions, plus scores."""
    rng = np.random.default_rng(seed)
    genders = ["male" if rng.random() < 0.5 else "female" for _ in range(n_models)]
    recs = []
    entries = {}
    for i in range(n_trials):
        m = int(rng.integers(n_models))
        target = rng.random() < target_fraction
        source = "Y" if rng.random() < 0.5 else "N"
        lang = "Y" if rng.random() < 0.5 else "N"
        if target and source == "Y" and rng.random() < 0.5:
            phone = "Y" if rng.random() < 0.5 else "N"
        else:
            phone = "NA" if rng.random() < 0.5 else "N"
        if phone == "Y" and not target:
            phone = "N"
        n_enroll = 3 if (with_three_segment and rng.random() < 0.1) else 1
        r = record(f"m{m:03d}", f"s{i:05d}", "target" if target else "nontarget",
                   gender=genders[m], source=source, lang=lang, phone=phone,
                   n_enroll=n_enroll)
        recs.append(r)
        entries[r.id] = float(rng.normal(1.5 if target else -1.5, 1.5))
    key = TrialKey("audio", tuple(recs))
    return key, ScoreSet(entries)
