"""Temporal-protocol evaluation: RMSE, per-user ranking AUC, the
minimum-sequence-length sweep, and attention-trace export.

Cold-start test pairs (user or item without a usable training sequence) are
skipped and counted rather than imputed, so the reported RMSE reflects the
model alone. The AUC protocol scores each user's positive test items against
seeded uniform samples of never-interacted items, counting ties as 0.5.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import min_length_filter
from .model import ColdStartError
from .numerics import ContractError


class ProtocolError(RuntimeError):
    """The evaluation protocol cannot be applied to this data."""


@dataclass
class AucProtocol:
    pos_threshold: float = 4.0
    n_negatives: int = 100
    seed: int = 0


@dataclass
class EvalReport:
    rmse: float = None
    auc: float = None
    n_pairs: int = 0
    n_skipped_cold_start: int = 0
    sweep: dict = None

    def to_dict(self):
        out = {"rmse": self.rmse, "auc": self.auc, "n_pairs": self.n_pairs,
               "n_skipped_cold_start": self.n_skipped_cold_start}
        if self.sweep is not None:
            out["sweep"] = {str(k): v for k, v in self.sweep.items()}
        return out


def rmse(predictions, targets):
    """Root mean squared error between two equal-length nonempty vectors."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise ContractError("rmse: mismatched or empty inputs %s vs %s"
                            % (predictions.shape, targets.shape))
    diff = predictions - targets
    return float(math.sqrt(np.mean(diff * diff)))


def evaluate_rmse(recommender, test_log):
    """Test-set RMSE with cold-start pairs skipped and counted."""
    preds = []
    targets = []
    skipped = 0
    for r in test_log.records:
        u = test_log.user_index[r.user_id]
        v = test_log.item_index[r.item_id]
        try:
            preds.append(recommender.predict(u, v))
        except ColdStartError:
            skipped += 1
            continue
        targets.append(r.rating)
    report = EvalReport(n_pairs=len(preds), n_skipped_cold_start=skipped)
    if preds:
        report.rmse = rmse(preds, targets)
    return report


def auc(recommender, test_log, protocol=None):
    """Mean per-user ranking AUC over the test set.

    For each user, positives are test items rated at or above the protocol
    threshold; negatives are sampled uniformly (seeded) from items the user
    never interacted with in train or test and that have a training
    sequence. A positive beats a negative when it scores strictly higher;
    ties count 0.5. Users without a scorable positive or any negative pool
    are skipped; no qualifying user at all is a :class:`ProtocolError`.
    """
    protocol = protocol or AucProtocol()
    rng = np.random.default_rng(protocol.seed)
    scorable_items = sorted(recommender.item_seqs.keys())
    interacted = {}
    positives = {}
    for r in test_log.records:
        u = test_log.user_index[r.user_id]
        v = test_log.item_index[r.item_id]
        interacted.setdefault(u, set()).add(v)
        if r.rating >= protocol.pos_threshold:
            positives.setdefault(u, []).append(v)
    user_aucs = []
    for u in sorted(positives.keys()):
        if u not in recommender.user_seqs:
            continue
        for v, _ts in recommender.user_seqs[u].steps:
            interacted.setdefault(u, set()).add(v)
        pos = [v for v in positives[u] if v in recommender.item_seqs]
        if not pos:
            continue
        pool = [v for v in scorable_items if v not in interacted[u]]
        if not pool:
            continue
        if len(pool) > protocol.n_negatives:
            chosen = rng.choice(len(pool), size=protocol.n_negatives, replace=False)
            neg = [pool[i] for i in sorted(chosen)]
        else:
            neg = pool
        pos_scores = [recommender.predict(u, v) for v in pos]
        neg_scores = [recommender.predict(u, v) for v in neg]
        wins = 0.0
        for ps in pos_scores:
            for ns in neg_scores:
                if ps > ns:
                    wins += 1.0
                elif ps == ns:
                    wins += 0.5
        user_aucs.append(wins / (len(pos_scores) * len(neg_scores)))
    if not user_aucs:
        raise ProtocolError("no user qualifies for the AUC protocol")
    return float(np.mean(user_aucs))


def sweep_min_length(model_factory, user_seqs, item_seqs, test_log, grid):
    """RMSE per minimum-sequence-length grid point.

    ``model_factory(l_min)`` returns the recommender to evaluate at that
    grid point (a factory ignoring its argument reuses one trained model).
    Test pairs are restricted to those whose user and item training
    sequences both reach the minimum length; a grid point whose restricted
    test set is empty gets a null entry rather than a zero.
    """
    grid = list(grid)
    if not grid or sorted(grid) != grid:
        raise ValueError("grid must be nonempty and ascending")
    sweep = {}
    total_pairs = 0
    total_skipped = 0
    for l_min in grid:
        restricted = min_length_filter(user_seqs, item_seqs, test_log, l_min)
        if not restricted.records:
            sweep[l_min] = None
            continue
        rec = model_factory(l_min)
        report = evaluate_rmse(rec, restricted)
        total_pairs += report.n_pairs
        total_skipped += report.n_skipped_cold_start
        sweep[l_min] = {"rmse": report.rmse, "n_pairs": report.n_pairs,
                        "n_skipped_cold_start": report.n_skipped_cold_start}
    return EvalReport(n_pairs=total_pairs, n_skipped_cold_start=total_skipped,
                      sweep=sweep)


def export_attention(recommender, pairs, user_names, item_names, ndjson_sink,
                     csv_sink=None):
    """Stream per-step attention records for a list of (user, item) pairs.

    Writes one JSON object per line per time step per side; the scores equal
    :func:`iarn.model.attention_trace` output exactly. Cold-start pairs emit
    a single record with a ``reason`` field instead (NDJSON only). When
    ``csv_sink`` is given, the same records are also written as plot-ready
    CSV with identical columns.
    """
    writer = None
    if csv_sink is not None:
        writer = csv.writer(csv_sink)
        writer.writerow(["user_id", "item_id", "side", "step",
                         "counterpart_id", "timestamp", "score"])
    n_records = 0
    for u, v in pairs:
        try:
            traces = recommender.trace(u, v)
        except ColdStartError as exc:
            ndjson_sink.write(json.dumps(
                {"user_id": user_names[u], "item_id": item_names[v],
                 "skipped": True, "reason": str(exc)}) + "\n")
            continue
        for trace in traces:
            names = item_names if trace.side == "user" else user_names
            for step, ((counterpart, ts), score) in enumerate(
                    zip(trace.steps, trace.scores), start=1):
                rec = {"user_id": user_names[u], "item_id": item_names[v],
                       "side": trace.side, "step": step,
                       "counterpart_id": names[counterpart],
                       "timestamp": ts, "score": score}
                ndjson_sink.write(json.dumps(rec) + "\n")
                if writer is not None:
                    writer.writerow([rec["user_id"], rec["item_id"], rec["side"],
                                     rec["step"], rec["counterpart_id"],
                                     rec["timestamp"], rec["score"]])
                n_records += 1
    return n_records
