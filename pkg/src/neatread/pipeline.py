"""Command implementations behind the CLI. Each takes a merged config dict
and writes its artifacts to ``paths.out_dir``.

Artifacts embed the config hash and seed: checkpoints in their JSON
header, TSV files in ``# key=value`` comment lines, JSON files in a
``meta`` object.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import __version__, baselines, corpus, evaluation, nn, synthetic
from .config import config_hash, model_config, train_config
from .model import ATTENTION_KEYS, NeatModel, run_reader, sequence_losses
from .nn import ConfigError
from .training import (
    JsonLineLogger,
    calibrate_value_bias,
    init_value_params,
    train_phase1,
    train_phase2,
)

log = logging.getLogger(__name__)

VOCAB_FILE = "vocab.tsv"
SEQUENCES_FILE = "sequences.json"
LM_CKPT = "lm.ckpt"
ATT_CKPT = "attention.ckpt"
SIM_FILE = "simulation.tsv"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
TOKENS_FILE = "eval_tokens.tsv"
HEATMAP_FILE = "heatmap.html"

SIM_COLUMNS = (
    "doc_id", "token_idx", "word", "seq_index", "position", "prob", "omega",
    "restricted_surprisal", "full_surprisal", "eval",
)

# independent random streams per command
STREAM_INIT, STREAM_LM, STREAM_ATT, STREAM_SIM, STREAM_EVAL = range(5)

BASELINE_PREDICTORS = (
    "word_length", "log_freq", "prev_log_freq", "prev_fixated", "launch_dist", "landing_pos",
    "sent_pos",
)


class AlignmentError(ValueError):
    pass


def stream(cfg, k):
    return np.random.default_rng([cfg["seed"], k])


def meta(cfg, **extra):
    out = {"config_hash": config_hash(cfg), "seed": cfg["seed"], "version": __version__}
    out.update(extra)
    return out


def out_dir(cfg):
    d = Path(cfg["paths"]["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require(path, hint):
    if not Path(path).is_file():
        raise ConfigError(f"{path} not found; {hint}")
    return Path(path)


def _fmt(x):
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_tsv(path, columns, rows, header):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(header):
            fh.write(f"# {key}={header[key]}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def _read_tsv(path):
    header, rows, columns = {}, [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                header[key] = value
            elif columns is None:
                columns = line.split("\t")
            elif line:
                rows.append(dict(zip(columns, line.split("\t"))))
    return header, columns, rows


def vocab_digest(vocab):
    blob = "\n".join(f"{w}\t{c}" for w, c in zip(vocab.words, vocab.counts)).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# --------------------------------------------------------------------------
# prepare


def _corpus_paths(cfg):
    paths = cfg["paths"]["corpus"]
    if not paths:
        raise ConfigError("paths.corpus is empty: give at least one text file")
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"corpus file not found: {p}")
    return paths


def cmd_prepare(cfg, echo=print):
    paths = _corpus_paths(cfg)
    docs = corpus.read_documents(paths, cfg["corpus"]["lowercase"])
    tokens = [t for _, toks in docs for t in toks]
    if not tokens:
        raise corpus.CorpusError("corpus is empty")
    vocab = corpus.build_vocab(tokens, cfg["corpus"]["vocab_size"])
    n = cfg["corpus"]["seq_len"]
    seqs = []
    for doc_id, toks in docs:
        for s in corpus.chunk_sequences(vocab.encode(toks), n, doc_id):
            seqs.append({"doc": doc_id, "start": s.positions[0][1], "ids": s.ids.tolist()})
    if not seqs:
        raise corpus.CorpusError(f"no document is at least {n} tokens long")
    d = out_dir(cfg)
    m = meta(cfg)
    vocab.save(d / VOCAB_FILE, header={**m, "vocab_digest": vocab_digest(vocab)})
    blob = {"meta": {**m, "vocab_digest": vocab_digest(vocab)}, "seq_len": n, "sequences": seqs}
    (d / SEQUENCES_FILE).write_text(
        json.dumps(blob, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    oov = vocab.counts[corpus.OOV_ID]
    stats = {
        "documents": len(docs),
        "tokens": len(tokens),
        "types": len(set(tokens)),
        "vocab_entries": len(vocab),
        "oov_rate": oov / len(tokens),
        "sequences": len(seqs),
        "dropped_tokens": len(tokens) - len(seqs) * n,
    }
    for k, v in stats.items():
        echo(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
    return stats


def load_prepared(cfg):
    d = Path(cfg["paths"]["out_dir"])
    hint = "run `neatread prepare` first"
    vocab = corpus.Vocabulary.load(_require(d / VOCAB_FILE, hint))
    blob = json.loads(_require(d / SEQUENCES_FILE, hint).read_text(encoding="utf-8"))
    if blob["seq_len"] != cfg["corpus"]["seq_len"]:
        raise ConfigError(
            f"sequences were prepared with seq_len {blob['seq_len']}, config says "
            f"{cfg['corpus']['seq_len']}; rerun `neatread prepare`"
        )
    data = np.array([s["ids"] for s in blob["sequences"]], dtype=np.int64)
    return vocab, data


# --------------------------------------------------------------------------
# training


def _check_vocab(ckpt_meta, vocab, path):
    want = ckpt_meta.get("vocab_digest")
    if want != vocab_digest(vocab):
        raise corpus.CorpusError(
            f"{path} was trained with a different vocabulary (digest {want}, "
            f"current {vocab_digest(vocab)})"
        )


def cmd_train_lm(cfg, echo=print):
    vocab, data = load_prepared(cfg)
    d = out_dir(cfg)
    mc = model_config(cfg, len(vocab))
    tc = train_config(cfg)
    model = NeatModel(mc, seed=int(stream(cfg, STREAM_INIT).integers(2**63)))
    logger = JsonLineLogger(d / "train-lm.jsonl", echo=None)
    base = meta(cfg, phase="lm", vocab_digest=vocab_digest(vocab), model=mc.to_dict(),
                train=tc.to_dict())
    logger.record(event="start", phase="lm", config_hash=base["config_hash"], seed=cfg["seed"],
                  mask_rate=tc.mask_rate, lr=tc.lr_lm, sequences=len(data))

    def on_epoch(epoch, loss):
        nn.save_checkpoint(d / f"lm-epoch{epoch + 1}.ckpt", model.params,
                           {**base, "epoch": epoch + 1, "mean_loss": loss})
        logger.record(event="epoch", phase="lm", epoch=epoch + 1, mean_loss=loss)
        echo(f"epoch {epoch + 1}: mean loss {loss:.4f}")

    try:
        history = train_phase1(model, data, tc, rng=stream(cfg, STREAM_LM), logger=logger,
                               on_epoch=on_epoch)
    finally:
        logger.close()
    nn.save_checkpoint(d / LM_CKPT, model.params, {**base, "epoch": tc.epochs_lm, "history": history})
    return history


def load_model(path, vocab, cfg, hint):
    params, m = nn.load_checkpoint(_require(path, hint))
    _check_vocab(m, vocab, path)
    mc = model_config(cfg, len(vocab))
    if mc.to_dict() != m.get("model"):
        raise ConfigError(f"{path} was trained with model settings {m.get('model')}, config has "
                          f"{mc.to_dict()}")
    value = {k: params.pop(k) for k in list(params) if k.startswith("val.")}
    return NeatModel(mc, params=params), value, m


def cmd_train_attention(cfg, echo=print):
    vocab, data = load_prepared(cfg)
    d = out_dir(cfg)
    model, _, _ = load_model(
        d / LM_CKPT, vocab, cfg,
        "attention training needs frozen phase-1 weights: run `neatread train-lm` first",
    )
    tc = train_config(cfg)
    frozen = {k: model.params[k].copy() for k in model.params if k not in ATTENTION_KEYS}
    logger = JsonLineLogger(d / "train-attention.jsonl", echo=None)
    base = meta(cfg, phase="attention", vocab_digest=vocab_digest(vocab),
                model=model.config.to_dict(), train=tc.to_dict())
    logger.record(event="start", phase="attention", config_hash=base["config_hash"],
                  seed=cfg["seed"], alpha=float(tc.alpha), gamma=float(tc.gamma),
                  lr=tc.lr_attention, sequences=len(data))
    echo(f"alpha={float(tc.alpha)} gamma={float(tc.gamma)}")
    vstate = {}

    def on_epoch(epoch, summary):
        nn.save_checkpoint(d / f"attention-epoch{epoch + 1}.ckpt",
                           {**model.params, **vstate["vp"]}, {**base, "epoch": epoch + 1})
        logger.record(event="epoch", phase="attention", epoch=epoch + 1, **summary)
        echo(f"epoch {epoch + 1}: " + " ".join(f"{k} {v:.4f}" for k, v in sorted(summary.items())))

    rng = stream(cfg, STREAM_ATT)
    vp = init_value_params(rng, model.params["emb"].shape[1], tc.value_cells, model.config.init_scale)
    calibrate_value_bias(model, vp, data[: max(tc.batch_size_attention, 64)], tc.alpha, rng)
    vstate["vp"] = vp
    try:
        vp, history = train_phase2(model, data, tc, vparams=vp, rng=rng, logger=logger,
                                   on_epoch=on_epoch)
    finally:
        logger.close()
    for k, v in frozen.items():
        if not np.array_equal(v, model.params[k]):
            raise RuntimeError(f"phase 2 modified frozen parameter {k}")
    nn.save_checkpoint(d / ATT_CKPT, {**model.params, **vp},
                       {**base, "epoch": tc.epochs_attention, "history": history})
    return history


# --------------------------------------------------------------------------
# simulation


def _eyetrack_records(cfg):
    path = cfg["paths"]["eyetrack"]
    if path is None:
        return None
    if not Path(path).is_file():
        raise ConfigError(f"eye-tracking file not found: {path}")
    return corpus.load_eyetrack(path)


def _corpus_records(cfg):
    """Corpus documents as records without reader data (for simulation only)."""
    recs = []
    for doc_id, toks in corpus.read_documents(_corpus_paths(cfg), cfg["corpus"]["lowercase"]):
        for k, w in enumerate(toks):
            recs.append(corpus.EyeTrackRecord(doc_id, k, w, [], None, None, None, None, None))
    return recs


def simulate_sequences(model, ids, rng):
    """Sampled ``(omega, probs, restricted nll, full nll)`` for a batch of sequences."""
    rd = run_reader(model.params, ids, rng=rng)
    full = run_reader(model.params, ids, mask=np.ones_like(ids, dtype=bool))
    return rd.mask.astype(np.int64), rd.att_probs, rd.nll, full.nll


def cmd_simulate(cfg, echo=print, batch=64):
    d = Path(cfg["paths"]["out_dir"])
    vocab = corpus.Vocabulary.load(_require(d / VOCAB_FILE, "run `neatread prepare` first"))
    model, _, ck = load_model(d / ATT_CKPT, vocab, cfg, "run `neatread train-attention` first")
    records = _eyetrack_records(cfg)
    with_readers = records is not None
    if records is None:
        records = _corpus_records(cfg)
    n = cfg["corpus"]["seq_len"]
    boundary = cfg["evaluate"]["boundary"]
    seqs, members = corpus.eval_sequences(records, vocab, n)
    if not seqs:
        raise corpus.CorpusError(f"no document has a full sequence of {n} tokens")
    keep = {id(r) for r in corpus.filter_eval_points(records, vocab, n, boundary)} if with_readers else None
    ids = np.stack([s.ids for s in seqs])
    rng = stream(cfg, STREAM_SIM)
    parts = [simulate_sequences(model, ids[i : i + batch], rng) for i in range(0, len(ids), batch)]
    omega, probs, restr, full = (np.concatenate(x) for x in zip(*parts))
    rows = []
    for k, mem in enumerate(members):
        for pos, r in enumerate(mem):
            if with_readers:
                ok = id(r) in keep
            else:
                ok = r.word in vocab and boundary <= pos < n - boundary
            rows.append((r.doc_id, r.token_idx, r.word, k, pos, probs[k, pos], omega[k, pos],
                         restr[k, pos], full[k, pos], int(ok)))
    _write_tsv(d / SIM_FILE, SIM_COLUMNS, rows, meta(cfg, checkpoint_hash=ck.get("config_hash")))
    evald = [r for r in rows if r[-1]]
    echo(f"tokens: {len(rows)} (evaluation points {len(evald)})")
    echo(f"mean probability: {float(probs.mean()):.4f}; sampled rate: {float(omega.mean()):.4f}")
    return rows


def load_simulation(path):
    header, columns, rows = _read_tsv(path)
    if columns is None or tuple(columns) != SIM_COLUMNS:
        raise corpus.CorpusError(f"{path}: unexpected columns {columns}")
    return header, rows


# --------------------------------------------------------------------------
# evaluation


def align(records_by_seq, sim_rows):
    """Check that simulation rows match the eye-tracking tokens one to one."""
    flat = [r for mem in records_by_seq for r in mem]
    for i, (r, s) in enumerate(zip(flat, sim_rows)):
        if s["doc_id"] != r.doc_id or int(s["token_idx"]) != r.token_idx or s["word"] != r.word:
            raise AlignmentError(
                f"simulation and eye-tracking data disagree at position {i} (simulation "
                f"{s['doc_id']}:{s['token_idx']} {s['word']!r} vs eye-tracking "
                f"{r.doc_id}:{r.token_idx} {r.word!r})"
            )
    if len(flat) != len(sim_rows):
        i = min(len(flat), len(sim_rows))
        raise AlignmentError(
            f"simulation has {len(sim_rows)} tokens, eye-tracking sequences have {len(flat)}; "
            f"first mismatching position {i}"
        )


def _human_masks(members, n_readers, n):
    S = len(members)
    out = np.full((n_readers, S, n), evaluation.MISSING, dtype=np.int64)
    for k, mem in enumerate(members):
        for pos, r in enumerate(mem):
            for j, f in enumerate(r.fixations):
                if f is not None:
                    out[j, k, pos] = f
    return out


def _fill_missing(mask, how, rate, rng):
    mask = mask.copy()
    miss = mask == evaluation.MISSING
    if how == "bernoulli":
        mask[miss] = (rng.random(int(miss.sum())) < rate).astype(np.int64)
    else:
        mask[miss] = 1
    return mask


def _regression_block(recs, extra, doc_effects, notes):
    """Baseline OLS plus one model per residualized extra predictor."""
    rows = [
        i for i, r in enumerate(recs)
        if r.first_pass_ms is not None and all(getattr(r, c) is not None for c in BASELINE_PREDICTORS)
    ]
    if len(rows) < len(BASELINE_PREDICTORS) + 10:
        notes.append("too few complete rows for the duration regression")
        return {}
    y = np.array([recs[i].first_pass_ms for i in rows])
    X = np.array([[float(getattr(recs[i], c)) for c in BASELINE_PREDICTORS] for i in rows])
    names = list(BASELINE_PREDICTORS)
    const = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) == 0]
    if const:
        notes.append(f"constant regression predictors dropped: {[names[j] for j in const]}")
        X = np.delete(X, const, axis=1)
        names = [c for j, c in enumerate(names) if j not in const]
    if doc_effects:
        docs = sorted({recs[i].doc_id for i in rows})
        if len(docs) > 1:
            D = np.array([[recs[i].doc_id == doc for doc in docs[1:]] for i in rows], dtype=float)
            X = np.column_stack([X, D])
            names += [f"doc[{doc}]" for doc in docs[1:]]
    base = evaluation.ols_regression(y, X, names)
    out = {"n": len(rows), "baseline": base.as_dict(), "baseline_loglik": base.loglik,
           "models": {}, "deviance": {}}
    for name, values in extra.items():
        v = np.asarray([values[i] for i in rows], dtype=float)
        if np.ptp(v) == 0:
            notes.append(f"predictor {name} is constant; no regression fitted")
            continue
        resid = evaluation.residualize(v, X)
        fit = evaluation.ols_regression(y, np.column_stack([X, resid]), names + [name])
        out["models"][name] = fit.as_dict()
        out["deviance"][name] = evaluation.deviance(fit.loglik, base.loglik)
    return out


def _type_level(keys, *cols):
    groups = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    return [np.array([np.mean([c[i] for i in idx]) for idx in groups.values()]) for c in cols]


def _correlation_block(cols, words, level):
    if level == "type":
        names = list(cols)
        vals = _type_level(words, *[cols[n] for n in names])
        cols = dict(zip(names, vals))
    out = {}
    for who in ("human", "neat"):
        row = {}
        for pred, v in cols.items():
            if pred == who:
                continue
            r, rho = evaluation.correlations(cols[who], v)
            row[pred] = {"pearson": r, "spearman": rho}
        out[who] = row
    return out


def cmd_evaluate(cfg, echo=print):
    d = Path(cfg["paths"]["out_dir"])
    ev = cfg["evaluate"]
    n = cfg["corpus"]["seq_len"]
    records = _eyetrack_records(cfg)
    if records is None:
        raise ConfigError("evaluation needs paths.eyetrack")
    vocab = corpus.Vocabulary.load(_require(d / VOCAB_FILE, "run `neatread prepare` first"))
    model, _, ck = load_model(d / ATT_CKPT, vocab, cfg, "run `neatread train-attention` first")
    _, sim_rows = load_simulation(_require(d / SIM_FILE, "run `neatread simulate` first"))
    corpus.annotate_predictors(records, vocab)
    seqs, members = corpus.eval_sequences(records, vocab, n)
    align(members, sim_rows)
    keep = {id(r) for r in corpus.filter_eval_points(records, vocab, n, ev["boundary"])}
    if not keep:
        raise evaluation.EvaluationError("no evaluation points left after filtering")
    S = len(seqs)
    ids = np.stack([s.ids for s in seqs])

    def grid(col, cast=float):
        return np.array([cast(r[col]) for r in sim_rows]).reshape(S, n)

    neat_omega = grid("omega", int)
    neat_prob = grid("prob")
    restr = grid("restricted_surprisal")
    full = grid("full_surprisal")
    include = np.array([[id(r) in keep for r in mem] for mem in members])
    flat_recs = [r for mem, inc in zip(members, include) for r, ok in zip(mem, inc) if ok]
    n_readers = len(records[0].fixations)
    human = _human_masks(members, n_readers, n)
    human_prob = np.array([r.fixation_prob for r in flat_recs])
    measured = float(human_prob.mean())
    target = measured if ev["target_rate"] is None else float(ev["target_rate"])
    rng = stream(cfg, STREAM_EVAL)
    notes = [
        f"target fixation rate {target:.4f} ({'measured human rate' if ev['target_rate'] is None else 'configured'})",
        f"accuracy/F1 gold standard: {ev['gold']}",
        "duration regressions are fixed-effects least squares, not mixed models",
    ]

    # intrinsic perplexities over every position of the evaluation sequences
    def ppl_row(mask):
        _, rd, dc = sequence_losses(model, ids, mask)
        return {"lm": evaluation.perplexity(rd.nll), "reconstruction": evaluation.perplexity(dc.nll),
                "rate": float(np.mean(mask))}

    neat_rate_all = float(neat_omega.mean())
    intrinsic = {"neat": ppl_row(neat_omega), "full": ppl_row(np.ones_like(ids))}
    if ev["baselines"]:
        intrinsic["random_matched"] = ppl_row(rng.random(ids.shape) < neat_rate_all)
        intrinsic["random_target"] = ppl_row(rng.random(ids.shape) < target)
    how = "one" if ev["human_missing"] == "drop" else ev["human_missing"]
    filled = [_fill_missing(h, how, target, rng) for h in human]
    hn = [sequence_losses(model, ids, m)[1:] for m in filled]
    intrinsic["human"] = {
        "lm": evaluation.perplexity(np.concatenate([rd.nll.ravel() for rd, _ in hn])),
        "reconstruction": evaluation.perplexity(np.concatenate([dc.nll.ravel() for _, dc in hn])),
        "rate": float(np.mean(filled)),
    }

    # human fixation sequences under each policy
    def fl(policy):
        return evaluation.fixation_likelihood_ppl(policy, ids, list(human), include)

    fix_ll = {"neat": fl(evaluation.NeatPolicy(model))}
    if ev["baselines"]:
        fix_ll["random_0.5"] = fl(evaluation.ConstantPolicy(0.5))
        fix_ll["random_target"] = fl(evaluation.ConstantPolicy(target))

    # predicted fixation sequences against human data, at evaluation points
    words = [r.word for r in flat_recs]
    logf = np.array([r.log_freq for r in flat_recs])
    length = np.array([r.word_length for r in flat_recs], dtype=float)
    full_e = full[include]
    prob_e = neat_prob[include]
    preds = {"neat": baselines.greedy_mask(baselines.rescale_probs(prob_e, target)).omega}
    if ev["baselines"]:
        preds["random"] = baselines.random_mask(len(prob_e), target, rng).omega
        preds["full"] = baselines.full_mask(len(prob_e)).omega
        for src, scores in (("log_freq", logf), ("length", length), ("surprisal", full_e)):
            preds[src] = baselines.ThresholdPredictor.fit(src, scores, target).predict(scores)
    human_e = human[:, include]
    prediction = {}
    for name, pm in preds.items():
        if ev["gold"] == "per_reader":
            acc, f1f, f1s = evaluation.accuracy_f1_per_reader(pm, list(human_e))
        else:
            acc, f1f, f1s = evaluation.accuracy_f1(pm, (human_prob >= 0.5).astype(int))
        prediction[name] = {"accuracy": acc, "f1_fix": f1f, "f1_skip": f1s, "rate": float(np.mean(pm))}

    regression = _regression_block(
        flat_recs,
        {"full_surprisal": full_e, "restricted_surprisal": restr[include], "fixation_prob": prob_e},
        ev["doc_effects"], notes,
    )
    corr = _correlation_block(
        {"human": human_prob, "neat": prob_e, "log_freq": logf, "word_length": length,
         "full_surprisal": full_e},
        words, ev["correlation_level"],
    )

    tags = [r.pos_tag for r in flat_recs]
    pos = {}
    tagged = np.array([t is not None for t in tags])
    if tagged.sum() >= 3:
        cols = {"human": human_prob[tagged], "neat": prob_e[tagged]}
        for name in ("log_freq", "length", "surprisal"):
            if name in preds:
                cols[name] = preds[name][tagged]
        pos = evaluation.pos_table(cols, [t for t in tags if t is not None], reference="human").as_dict()

    # successive fixations over whole sequences
    cond = {
        "human": evaluation.conditional_fixation_ratio(list(human)),
        "neat": evaluation.conditional_fixation_ratio([neat_omega]),
    }
    if ev["baselines"]:
        all_logf = np.array([[vocab.log_frequency(r.word) for r in mem] for mem in members])
        fpred = baselines.ThresholdPredictor.fit("log_freq", logf, target)
        cond["log_freq"] = evaluation.conditional_fixation_ratio([fpred.predict(all_logf.ravel()).reshape(S, n)])

    report = evaluation.EvalReport(
        lm_perplexity=intrinsic["neat"]["lm"],
        reconstruction_perplexity=intrinsic["neat"]["reconstruction"],
        fixation_rate=float(neat_omega[include].mean()),
        fixation_likelihood_ppl=fix_ll["neat"],
        accuracy=prediction["neat"]["accuracy"],
        f1_fix=prediction["neat"]["f1_fix"],
        f1_skip=prediction["neat"]["f1_skip"],
        intrinsic=intrinsic, fixation_likelihood=fix_ll, prediction=prediction,
        regression=regression, correlations=corr, pos=pos, conditional_fixation_ratio=cond,
        notes=notes,
        meta=meta(cfg, checkpoint_hash=ck.get("config_hash"), evaluation_points=len(flat_recs),
                  sequences=S, human_rate=measured, gold=ev["gold"]),
    )
    (d / REPORT_JSON).write_text(report.to_json(), encoding="utf-8")
    (d / REPORT_TXT).write_text(report.to_text(), encoding="utf-8")
    token_rows = [
        (r.doc_id, r.token_idx, r.word, r.pos_tag or "NA", hp, p, int(o), rs, fs, lf, r.word_length)
        for r, hp, p, o, rs, fs, lf in zip(flat_recs, human_prob, prob_e, neat_omega[include],
                                            restr[include], full_e, logf)
    ]
    _write_tsv(
        d / TOKENS_FILE,
        ("doc_id", "token_idx", "word", "pos_tag", "human_prob", "neat_prob", "neat_omega",
         "restricted_surprisal", "full_surprisal", "log_freq", "word_length"),
        token_rows, meta(cfg),
    )
    echo(report.to_text().rstrip("\n"))
    return report


# --------------------------------------------------------------------------
# heatmap


def cmd_heatmap(cfg, echo=print, source="model"):
    d = Path(cfg["paths"]["out_dir"])
    header, rows = load_simulation(_require(d / SIM_FILE, "run `neatread simulate` first"))
    doc = cfg["heatmap"]["doc"] or rows[0]["doc_id"]
    rows = [r for r in rows if r["doc_id"] == doc][: cfg["heatmap"]["max_tokens"]]
    if not rows:
        raise ConfigError(f"document {doc!r} not in {d / SIM_FILE}")
    if source == "human":
        records = _eyetrack_records(cfg)
        if records is None:
            raise ConfigError("--source human needs paths.eyetrack")
        probs_by_key = {(r.doc_id, r.token_idx): r.fixation_prob for r in records}
        probs = [probs_by_key.get((r["doc_id"], int(r["token_idx"]))) for r in rows]
    else:
        probs = [float(r["prob"]) for r in rows]
    excluded = [r["eval"] != "1" or p is None for r, p in zip(rows, probs)]
    path = d / HEATMAP_FILE
    evaluation.emit_heatmap(
        [r["word"] for r in rows], [0.0 if p is None else p for p in probs], path,
        excluded=excluded,
        title=f"{source} fixation probabilities, {doc} (config {header.get('config_hash')}, "
              f"seed {header.get('seed')})",
    )
    echo(f"wrote {path}")
    return path


# --------------------------------------------------------------------------
# toy data


def cmd_make_toy(directory, seed=0, train_tokens=40000, eval_tokens=4000, docs=4, echo=print):
    """Write a template-language corpus, a matching eye-tracking TSV and a config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lang = synthetic.toy_language(seed)
    rng = np.random.default_rng([seed, 99])
    paths = []
    for k in range(docs):
        words, _ = lang.generate(train_tokens // docs, rng)
        p = directory / f"train{k + 1:02d}.txt"
        p.write_text(" ".join(words) + "\n", encoding="utf-8")
        paths.append(p.name)
    eval_docs = []
    for k in range(2):
        words, tags = lang.generate(eval_tokens // 2, rng)
        eval_docs.append((f"text{k + 1:02d}", words, tags))
    recs = synthetic.synthetic_eyetrack(eval_docs, rng)
    et = directory / "eyetrack.tsv"
    corpus.write_eyetrack(et, recs)
    cfg = {"paths": {"corpus": paths, "eyetrack": et.name, "out_dir": "run"},
           "corpus": {"vocab_size": 500, "seq_len": 8},
           # short windows let the decoder use h_N within a few epochs
           "train": {"lr_lm": 0.5, "epochs_lm": 10, "epochs_attention": 12},
           "evaluate": {"boundary": 1}}
    (directory / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    echo(f"wrote {len(paths)} corpus files, {et} and {directory / 'config.json'}")
    return directory / "config.json"


__all__ = [
    "cmd_prepare", "cmd_train_lm", "cmd_train_attention", "cmd_simulate", "cmd_evaluate",
    "cmd_heatmap", "cmd_make_toy", "AlignmentError",
]
