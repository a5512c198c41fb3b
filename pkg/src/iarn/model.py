"""Forward computation for the attention-gated recommender and its backbones.

A prediction for a (user, item) pair runs two recurrent networks: the user
side consumes the embeddings of the items the user rated, the item side the
embeddings of the users who rated the item. For the attention backbones each
side first builds bi-directional summaries of its sequence, scores every
time step with a two-layer network fed by its own summaries plus the whole-
sequence summaries of the *other* side, and then folds the sequence with an
attention-gated recurrence. Final hidden states are projected through a
PReLU layer and combined by an inner product.

Backbones:
  rnn        plain ReLU recurrence, no gates
  lstm       standard LSTM cell, gates per hidden unit
  tagm       attention gate from own-side summaries only
  iarn_plain attention gate conditioned on the paired sequence
  iarn       iarn_plain plus the per-item feature encoder

Sequence recurrences run on the fused chain kernels of
:mod:`iarn.numerics`, one tape node per sequence pass.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import Tensor, ContractError

BACKBONES = ("rnn", "lstm", "tagm", "iarn_plain", "iarn")
ATTENTION_BACKBONES = ("tagm", "iarn_plain", "iarn")
ENCODER_MODES = ("none", "flat", "hier")


class ColdStartError(RuntimeError):
    """The entity has no usable training sequence for this prediction."""


@dataclass
class ModelConfig:
    n_users: int
    n_items: int
    backbone: str = "iarn"
    encoder_mode: str = "none"
    embed_dim: int = 25
    hidden_dim: int = 64
    att_dim: int = 64
    n_features: int = 0
    max_seq_len: int = 0      # 0 = unlimited; otherwise keep the most recent steps
    prefix_mode: bool = False  # train on strictly-earlier history only

    def validate(self):
        if self.backbone not in BACKBONES:
            raise ValueError("unknown backbone %r" % (self.backbone,))
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError("unknown encoder mode %r" % (self.encoder_mode,))
        if self.encoder_mode != "none" and self.backbone != "iarn":
            raise ValueError("feature encoder requires the iarn backbone")
        if self.encoder_mode != "none" and self.n_features <= 0:
            raise ValueError("encoder mode %r needs features" % (self.encoder_mode,))
        for name in ("n_users", "n_items", "embed_dim", "hidden_dim", "att_dim"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be >= 1" % name)
        return self


@dataclass
class BiSummary:
    """Forward/backward summary states of one sequence, each a (T, h) node."""
    forward_states: object
    backward_states: object

    def __len__(self):
        return self.forward_states.data.shape[0]


@dataclass
class AttentionTrace:
    """Attention scores of one side of a prediction, with step metadata."""
    side: str
    scores: list
    steps: list  # (counterpart_index, timestamp) per step


class ModelParameters:
    """All learnable tensors of one model, keyed by name.

    Which tensors exist depends on the backbone and encoder mode. Weights
    use uniform fan-in-scaled initialization; biases start at zero except
    the LSTM forget gate (one), and PReLU slopes start at 0.25.
    """

    def __init__(self, config, rng=None):
        self.config = config.validate()
        self.tensors = {}
        rng = rng if rng is not None else np.random.default_rng(0)

        def uniform(name, shape, fan_in):
            lim = 1.0 / np.sqrt(fan_in)
            self.tensors[name] = Tensor(rng.uniform(-lim, lim, size=shape))

        def zeros(name, shape):
            self.tensors[name] = Tensor(np.zeros(shape))

        d, h, p = config.embed_dim, config.hidden_dim, config.att_dim
        uniform("item_embeddings", (config.n_items, d), d)
        uniform("user_embeddings", (config.n_users, d), d)
        for side in ("user", "item"):
            if config.backbone == "lstm":
                uniform(side + ".lstm.Wx", (4 * h, d), d)
                uniform(side + ".lstm.Wh", (4 * h, h), h)
                b = np.zeros(4 * h)
                b[h:2 * h] = 1.0
                self.tensors[side + ".lstm.b"] = Tensor(b)
            else:
                uniform(side + ".rec.W", (h, h), h)
                uniform(side + ".rec.H", (h, d), d)
                zeros(side + ".rec.b", (h,))
            if config.backbone in ATTENTION_BACKBONES:
                for direction in ("fwd", "bwd"):
                    uniform("%s.%s.W" % (side, direction), (h, d), d)
                    uniform("%s.%s.H" % (side, direction), (h, h), h)
                    zeros("%s.%s.b" % (side, direction), (h,))
                uniform(side + ".att.L", (p, 4 * h), 4 * h)
                zeros(side + ".att.b", (p,))
                uniform(side + ".att.M", (p,), p)
            uniform(side + ".proj.W", (d, h), h)
            zeros(side + ".proj.b", (d,))
            self.tensors[side + ".proj.slope"] = Tensor(np.asarray(0.25))
        if config.encoder_mode != "none":
            for k in range(config.n_features):
                uniform("feat.M%d" % k, (d, d), d)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors.keys())

    def all_finite(self):
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


# ---------------------------------------------------------------------------
# feature encoders
# ---------------------------------------------------------------------------

def encode_user_input(x, tape=None):
    """User-side encoder: identity (no user features in any dataset)."""
    return x


def encode_item_input(item, x, taxonomy, params, mode, tape=None):
    """Apply item ``item``'s feature maps to one of its input vectors.

    flat: sum of per-feature linear maps of ``x``. hier: for every assigned
    feature, map ``x`` along the root-to-leaf chain (root applied first,
    leaf last) and sum the results. Items with no assigned features pass
    through unchanged in either mode.
    """
    if mode == "none":
        return x
    feats = taxonomy.features_of(item) if taxonomy is not None else []
    if not feats:
        return x
    total = None
    for f in feats:
        if mode == "flat":
            y = nm.matvec(params["feat.M%d" % f], x, tape)
        else:
            y = x
            for g in taxonomy.root_path(f):
                y = nm.matvec(params["feat.M%d" % g], y, tape)
        total = y if total is None else nm.add(total, y, tape)
    return total


def encode_steps(steps, side, owner, params, taxonomy, tape=None):
    """Embed and encode a sequence into one (T, d) input matrix node.

    User-side steps index into the item embeddings, item-side steps into the
    user embeddings; only the item side applies the owner's feature encoder
    (the same per-item maps for every row).
    """
    mode = params.config.encoder_mode
    table = params["item_embeddings" if side == "user" else "user_embeddings"]
    x = nm.gather_rows(table, [c for c, _ts in steps], tape)
    if side == "user" or mode == "none" or taxonomy is None:
        return x
    feats = taxonomy.features_of(owner)
    if not feats:
        return x
    total = None
    for f in feats:
        if mode == "flat":
            y = nm.rows_matvec(params["feat.M%d" % f], x, tape)
        else:
            y = x
            for g in taxonomy.root_path(f):
                y = nm.rows_matvec(params["feat.M%d" % g], y, tape)
        total = y if total is None else nm.add(total, y, tape)
    return total


# ---------------------------------------------------------------------------
# sequence networks
# ---------------------------------------------------------------------------

def bi_summaries(inputs, side, params, tape=None):
    """Bi-directional ReLU summaries of an encoded (T, d) input matrix.

    Forward states scan left to right from a zero state, backward states
    right to left; both are (T, h) nodes whose rows align with the input.
    """
    if inputs.data.shape[0] == 0:
        raise ContractError("bi_summaries requires a nonempty sequence")
    fwd = nm.relu_chain(params[side + ".fwd.W"], params[side + ".fwd.H"],
                        params[side + ".fwd.b"], inputs, reverse=False,
                        tape=tape)
    bwd = nm.relu_chain(params[side + ".bwd.W"], params[side + ".bwd.H"],
                        params[side + ".bwd.b"], inputs, reverse=True,
                        tape=tape)
    return BiSummary(fwd, bwd)


def attention_scores(own, other, side, params, tape=None):
    """Per-step attention scores for one side of a pair: a (T,) node.

    ``other`` carries the paired sequence's summaries; its whole-sequence
    forward (last row) and backward (first row) states join every fusion
    input. Pass ``None`` to zero those cross terms (the tagm backbone's
    own-side-only attention).
    """
    h = params.config.hidden_dim
    if other is None:
        cross_f = nm.zeros(h)
        cross_b = nm.zeros(h)
    else:
        cross_f = nm.gather_row(other.forward_states, len(other) - 1, tape)
        cross_b = nm.gather_row(other.backward_states, 0, tape)
    return nm.attention_block(params[side + ".att.M"], params[side + ".att.L"],
                              params[side + ".att.b"], own.forward_states,
                              own.backward_states, cross_f, cross_b, tape)


def gated_recurrence(inputs, scores, side, params, tape=None, drop_mask=None,
                     states_out=None):
    """Fold a (T, d) input matrix into its final hidden state.

    Attention backbones blend the previous state with a ReLU candidate state
    under the per-step gates in ``scores`` (a (T,) node, entries strictly in
    (0, 1)); the rnn backbone ignores ``scores``; lstm runs a standard LSTM
    and returns the final hidden state. ``drop_mask`` (T, h) applies to each
    step's hidden output. ``states_out`` (a list) collects per-step
    ``(prev, candidate, blended)`` arrays on the attention path.
    """
    if inputs.data.shape[0] == 0:
        raise ContractError("gated_recurrence requires a nonempty sequence")
    backbone = params.config.backbone
    if backbone == "lstm":
        return nm.lstm_chain(params[side + ".lstm.Wx"], params[side + ".lstm.Wh"],
                             params[side + ".lstm.b"], inputs, drop_mask, tape)
    w, hh, b = params[side + ".rec.W"], params[side + ".rec.H"], params[side + ".rec.b"]
    if backbone == "rnn":
        return nm.gated_chain(w, hh, b, inputs, None, drop_mask, tape)
    if scores is None:
        raise ContractError("attention backbone needs per-step scores")
    return nm.gated_chain(w, hh, b, inputs, scores, drop_mask, tape,
                          states_out=states_out)


def project(state, side, params, tape=None):
    """PReLU projection of a final hidden state to the representation space."""
    z = nm.add(nm.matvec(params[side + ".proj.W"], state, tape),
               params[side + ".proj.b"], tape)
    return nm.prelu(z, params[side + ".proj.slope"], tape)


# ---------------------------------------------------------------------------
# pair-level forward
# ---------------------------------------------------------------------------

def _resolve_steps(seqs, entity, n_entities, other, side, exclude_timestamp,
                   prefix_cutoff, max_len):
    """Positions of the usable steps of an entity's full sequence."""
    if not 0 <= entity < n_entities:
        raise LookupError("unknown %s index %d" % (side, entity))
    seq = seqs.get(entity)
    full = seq.steps if seq is not None else []
    keep = list(range(len(full)))
    if exclude_timestamp is not None:
        keep = [i for i in keep
                if not (full[i][0] == other and full[i][1] == exclude_timestamp)]
    if prefix_cutoff is not None:
        keep = [i for i in keep if full[i][1] < prefix_cutoff]
    if max_len and len(keep) > max_len:
        keep = keep[-max_len:]
    if not keep:
        raise ColdStartError("%s %d has no usable training sequence" % (side, entity))
    return full, keep


@dataclass
class PairForward:
    prediction: object          # scalar Tensor
    user_scores: object = None  # (T,) attention score node, None for rnn/lstm
    item_scores: object = None
    user_steps: list = field(default_factory=list)
    item_steps: list = field(default_factory=list)


def forward_pair(user, item, user_seqs, item_seqs, params, taxonomy=None,
                 tape=None, exclude_timestamp=None, prefix_cutoff=None,
                 mask_fn=None, cache=None):
    """Run both networks for one pair and return the prediction node.

    ``exclude_timestamp`` removes the pair's own interaction from both
    sequences (training-time leakage guard); ``prefix_cutoff`` additionally
    restricts history to strictly earlier steps. ``mask_fn(t_len)`` supplies
    a per-step dropout mask matrix during training. ``cache`` (a dict)
    reuses encoded inputs and bi-summaries across pairs; cached summaries
    are only consulted for unmodified sequences.
    """
    cfg = params.config
    full_user, keep_user = _resolve_steps(
        user_seqs, user, cfg.n_users, item, "user",
        exclude_timestamp, prefix_cutoff, cfg.max_seq_len)
    full_item, keep_item = _resolve_steps(
        item_seqs, item, cfg.n_items, user, "item",
        exclude_timestamp, prefix_cutoff, cfg.max_seq_len)
    user_steps = [full_user[i] for i in keep_user]
    item_steps = [full_item[i] for i in keep_item]

    def encoded(side, owner, full, keep):
        key = ("enc", side, owner)
        if cache is not None and key in cache:
            nodes = cache[key]
        else:
            nodes = encode_steps(full, side, owner, params, taxonomy, tape)
            if cache is not None:
                cache[key] = nodes
        if len(keep) == len(full):
            return nodes
        return nm.gather_rows(nodes, keep, tape)

    user_inputs = encoded("user", user, full_user, keep_user)
    item_inputs = encoded("item", item, full_item, keep_item)

    def summaries(side, owner, full, keep, inputs):
        key = ("sum", side, owner)
        pristine = len(keep) == len(full)
        if cache is not None and pristine and key in cache:
            return cache[key]
        out = bi_summaries(inputs, side, params, tape)
        if cache is not None and pristine:
            cache[key] = out
        return out

    user_scores = item_scores = None
    if cfg.backbone in ATTENTION_BACKBONES:
        user_sum = summaries("user", user, full_user, keep_user, user_inputs)
        item_sum = summaries("item", item, full_item, keep_item, item_inputs)
        if cfg.backbone == "tagm":
            user_scores = attention_scores(user_sum, None, "user", params, tape)
            item_scores = attention_scores(item_sum, None, "item", params, tape)
        else:
            user_scores = attention_scores(user_sum, item_sum, "user", params, tape)
            item_scores = attention_scores(item_sum, user_sum, "item", params, tape)

    user_mask = mask_fn(len(keep_user)) if mask_fn is not None else None
    item_mask = mask_fn(len(keep_item)) if mask_fn is not None else None
    u_final = gated_recurrence(user_inputs, user_scores, "user", params, tape,
                               user_mask)
    v_final = gated_recurrence(item_inputs, item_scores, "item", params, tape,
                               item_mask)
    u_repr = project(u_final, "user", params, tape)
    v_repr = project(v_final, "item", params, tape)
    pred = nm.dot(u_repr, v_repr, tape)
    return PairForward(pred, user_scores, item_scores, user_steps, item_steps)


def predict(user, item, user_seqs, item_seqs, params, taxonomy=None,
            exclude_timestamp=None, cache=None):
    """Rating estimate for one pair (evaluation mode, no tape)."""
    fw = forward_pair(user, item, user_seqs, item_seqs, params, taxonomy,
                      exclude_timestamp=exclude_timestamp, cache=cache)
    return float(fw.prediction.data)


def attention_trace(user, item, user_seqs, item_seqs, params, taxonomy=None,
                    cache=None):
    """The exact attention scores a prediction used, for both sides."""
    if params.config.backbone not in ATTENTION_BACKBONES:
        raise ContractError("backbone %r has no attention scores"
                            % params.config.backbone)
    fw = forward_pair(user, item, user_seqs, item_seqs, params, taxonomy,
                      cache=cache)
    return (AttentionTrace("user", [float(s) for s in fw.user_scores.data],
                           list(fw.user_steps)),
            AttentionTrace("item", [float(s) for s in fw.item_scores.data],
                           list(fw.item_steps)))


class Recommender:
    """Read-only prediction facade with per-entity caching.

    Bi-summaries and encoded inputs depend only on the owner's sequence, so
    they are computed once per entity and shared across all paired
    predictions; results are bitwise identical to uncached computation.
    """

    def __init__(self, params, user_seqs, item_seqs, taxonomy=None, cache=True):
        self.params = params
        self.user_seqs = user_seqs
        self.item_seqs = item_seqs
        self.taxonomy = taxonomy
        self.cache = {} if cache else None

    def predict(self, user, item):
        return predict(user, item, self.user_seqs, self.item_seqs, self.params,
                       self.taxonomy, cache=self.cache)

    def trace(self, user, item):
        return attention_trace(user, item, self.user_seqs, self.item_seqs,
                               self.params, self.taxonomy, cache=self.cache)
