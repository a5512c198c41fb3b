"""Interaction-log ingestion and sequence construction.

Raw logs are comma-separated ``user,item,rating,timestamp`` lines. This
module parses them, applies the minimum-rating entity filter, splits train
from test at a cutoff timestamp (strictly: records at or after the cutoff go
to test), and builds per-entity time-ordered sequences of counterpart
indices. Item features, optionally organized as a forest via parent links,
are loaded into a :class:`FeatureTaxonomy`.
"""

import math
from dataclasses import dataclass, field


class ParseError(ValueError):
    """Malformed input line; message carries the 1-based line number."""


class ValidationError(ValueError):
    """Inconsistent feature/hierarchy data."""


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float
    timestamp: int


@dataclass
class InteractionLog:
    """Ordered interaction records plus token -> dense index maps.

    Index maps assign dense 0-based integers in first-appearance order.
    Logs produced by :func:`temporal_split` share their parent's maps so
    that train and test agree on entity indices.
    """

    records: list = field(default_factory=list)
    user_index: dict = field(default_factory=dict)
    item_index: dict = field(default_factory=dict)

    @property
    def n_users(self):
        return len(self.user_index)

    @property
    def n_items(self):
        return len(self.item_index)

    def __len__(self):
        return len(self.records)

    def user_names(self):
        """Dense index -> token list (inverse of user_index)."""
        names = [None] * len(self.user_index)
        for tok, i in self.user_index.items():
            names[i] = tok
        return names

    def item_names(self):
        names = [None] * len(self.item_index)
        for tok, i in self.item_index.items():
            names[i] = tok
        return names


@dataclass
class EntitySequence:
    """Time-ordered counterpart steps for one user or item.

    ``steps`` holds ``(counterpart_index, timestamp)`` pairs sorted by
    (timestamp, counterpart_index); the index tie-break keeps runs with
    equal timestamps deterministic.
    """

    owner_id: int
    steps: list

    def __len__(self):
        return len(self.steps)


def parse_interactions(source):
    """Parse ``user,item,rating,timestamp`` lines into an InteractionLog.

    ``source`` is any iterable of text lines (an open file works). Blank
    lines are ignored; anything else malformed raises :class:`ParseError`
    naming the offending line.
    """
    log = InteractionLog()
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise ParseError("line %d: expected 4 comma-separated fields, got %d"
                             % (lineno, len(fields)))
        user, item, rating_s, ts_s = (f.strip() for f in fields)
        if not user or not item:
            raise ParseError("line %d: empty user or item token" % lineno)
        try:
            rating = float(rating_s)
        except ValueError:
            raise ParseError("line %d: non-numeric rating %r" % (lineno, rating_s))
        if not math.isfinite(rating):
            raise ParseError("line %d: non-finite rating %r" % (lineno, rating_s))
        try:
            ts = int(ts_s)
        except ValueError:
            raise ParseError("line %d: non-numeric timestamp %r" % (lineno, ts_s))
        if ts < 0:
            raise ParseError("line %d: negative timestamp %d" % (lineno, ts))
        if user not in log.user_index:
            log.user_index[user] = len(log.user_index)
        if item not in log.item_index:
            log.item_index[item] = len(log.item_index)
        log.records.append(Interaction(user, item, rating, ts))
    return log


def _reindexed(records):
    log = InteractionLog()
    for r in records:
        if r.user_id not in log.user_index:
            log.user_index[r.user_id] = len(log.user_index)
        if r.item_id not in log.item_index:
            log.item_index[r.item_id] = len(log.item_index)
        log.records.append(r)
    return log


def filter_min_ratings(log, k=3):
    """Drop interactions of users/items with total count <= k.

    Counts are taken over the input log in a single pass; removing a user
    may leave some item at or below the threshold afterwards, and such
    items are deliberately kept (no fixpoint iteration). Surviving records
    are re-indexed in first-appearance order.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    user_counts = {}
    item_counts = {}
    for r in log.records:
        user_counts[r.user_id] = user_counts.get(r.user_id, 0) + 1
        item_counts[r.item_id] = item_counts.get(r.item_id, 0) + 1
    kept = [r for r in log.records
            if user_counts[r.user_id] > k and item_counts[r.item_id] > k]
    return _reindexed(kept)


def temporal_split(log, cutoff):
    """Split records strictly before ``cutoff`` into train, the rest into test.

    A record stamped exactly at the cutoff lands in test. Both halves share
    the parent log's index maps.
    """
    train = InteractionLog(user_index=log.user_index, item_index=log.item_index)
    test = InteractionLog(user_index=log.user_index, item_index=log.item_index)
    for r in log.records:
        (train if r.timestamp < cutoff else test).records.append(r)
    return train, test


def build_sequences(train):
    """Per-user and per-item counterpart sequences ordered by rating time.

    Returns ``(user_seqs, item_seqs)``, dicts keyed by dense entity index.
    Equal timestamps are ordered by counterpart index.
    """
    if not train.records:
        raise ValueError("build_sequences requires a nonempty training log")
    user_steps = {}
    item_steps = {}
    for r in train.records:
        u = train.user_index[r.user_id]
        v = train.item_index[r.item_id]
        user_steps.setdefault(u, []).append((v, r.timestamp))
        item_steps.setdefault(v, []).append((u, r.timestamp))
    user_seqs = {}
    for u, steps in user_steps.items():
        steps.sort(key=lambda s: (s[1], s[0]))
        user_seqs[u] = EntitySequence(u, steps)
    item_seqs = {}
    for v, steps in item_steps.items():
        steps.sort(key=lambda s: (s[1], s[0]))
        item_seqs[v] = EntitySequence(v, steps)
    return user_seqs, item_seqs


def min_length_filter(user_seqs, item_seqs, test, l_min):
    """Restrict a test log to pairs whose train sequences are both long enough.

    A test record survives when both its user's and its item's training
    sequence contain at least ``l_min`` steps. The result shares the test
    log's index maps.
    """
    if l_min < 1:
        raise ValueError("l_min must be >= 1")
    out = InteractionLog(user_index=test.user_index, item_index=test.item_index)
    for r in test.records:
        u = test.user_index[r.user_id]
        v = test.item_index[r.item_id]
        useq = user_seqs.get(u)
        vseq = item_seqs.get(v)
        if useq is not None and vseq is not None \
                and len(useq) >= l_min and len(vseq) >= l_min:
            out.records.append(r)
    return out


class FeatureTaxonomy:
    """Item -> feature assignments plus optional parent links.

    Parent links form a forest; every feature reaches a root through a
    finite acyclic chain. ``item_features`` maps a dense item index to the
    feature indices assigned to it (the encoder treats each as the leaf of
    its root-to-leaf chain).
    """

    def __init__(self, feature_index, parent, item_features):
        self.feature_index = feature_index
        self.parent = parent
        self.item_features = item_features
        self.feature_names = [None] * len(feature_index)
        for tok, i in feature_index.items():
            self.feature_names[i] = tok

    @property
    def n_features(self):
        return len(self.feature_index)

    def features_of(self, item_idx):
        return self.item_features.get(item_idx, [])

    def root_path(self, feature_idx):
        """Chain of feature indices from the root down to ``feature_idx``."""
        path = [feature_idx]
        f = feature_idx
        while self.parent[f] is not None:
            f = self.parent[f]
            path.append(f)
        path.reverse()
        return path

    def max_depth(self):
        return max((len(self.root_path(f)) for f in range(self.n_features)),
                   default=0)


def _split_csv_line(raw, lineno, n_fields, what):
    fields = [f.strip() for f in raw.strip().split(",")]
    if len(fields) != n_fields:
        raise ParseError("line %d of %s: expected %d fields, got %d"
                         % (lineno, what, n_fields, len(fields)))
    return fields


def load_taxonomy(features_source, hierarchy_source=None, item_index=None):
    """Build a validated FeatureTaxonomy from assignment and hierarchy files.

    ``features_source`` yields ``item_id,feature_id`` lines;
    ``hierarchy_source`` (optional) yields ``feature_id,parent_feature_id``
    lines where an empty parent field marks a root. Without a hierarchy all
    features are roots (flat structure). When a hierarchy is given it
    defines the feature vocabulary, and an assignment naming a feature
    outside it is a :class:`ValidationError`. Assignments for items absent
    from ``item_index`` are ignored (the log may have been filtered).
    """
    item_index = item_index or {}
    feature_index = {}
    parent_tokens = {}

    hierarchy_given = hierarchy_source is not None
    if hierarchy_given:
        for lineno, raw in enumerate(hierarchy_source, start=1):
            if not raw.strip():
                continue
            feat, par = _split_csv_line(raw, lineno, 2, "hierarchy file")
            if not feat:
                raise ParseError("line %d of hierarchy file: empty feature token"
                                 % lineno)
            if feat in parent_tokens and parent_tokens[feat] != (par or None):
                raise ValidationError("feature %r assigned two different parents"
                                      % feat)
            if feat not in feature_index:
                feature_index[feat] = len(feature_index)
            parent_tokens[feat] = par or None
            if par and par not in feature_index:
                feature_index[par] = len(feature_index)

    item_features = {}
    n_skipped_items = 0
    for lineno, raw in enumerate(features_source, start=1):
        if not raw.strip():
            continue
        item, feat = _split_csv_line(raw, lineno, 2, "feature file")
        if not feat:
            raise ParseError("line %d of feature file: empty feature token"
                             % lineno)
        if feat not in feature_index:
            if hierarchy_given:
                raise ValidationError(
                    "item %r is assigned feature %r which is not in the hierarchy"
                    % (item, feat))
            feature_index[feat] = len(feature_index)
        if item not in item_index:
            n_skipped_items += 1
            continue
        idx = item_index[item]
        fidx = feature_index[feat]
        feats = item_features.setdefault(idx, [])
        if fidx not in feats:
            feats.append(fidx)

    parent = [None] * len(feature_index)
    for feat, par in parent_tokens.items():
        if par is not None:
            parent[feature_index[feat]] = feature_index[par]

    taxonomy = FeatureTaxonomy(feature_index, parent, item_features)
    taxonomy.n_skipped_items = n_skipped_items
    _check_acyclic(taxonomy)
    return taxonomy


def _check_acyclic(taxonomy):
    state = [0] * taxonomy.n_features  # 0 unseen, 1 on current path, 2 done
    for start in range(taxonomy.n_features):
        if state[start] == 2:
            continue
        path = []
        f = start
        while f is not None and state[f] == 0:
            state[f] = 1
            path.append(f)
            f = taxonomy.parent[f]
        if f is not None and state[f] == 1:
            cycle = path[path.index(f):]
            raise ValidationError(
                "cycle in feature parents: %s"
                % " -> ".join(taxonomy.feature_names[c] for c in cycle + [f]))
        for p in path:
            state[p] = 2
