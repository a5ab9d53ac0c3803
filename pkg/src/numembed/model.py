"""DeepFM-lite CTR predictor with a pluggable numerical encoder.

Per instance: categorical table lookups and per-field numerical
embeddings are concatenated and fed through a Leaky-ReLU MLP tower to a
scalar logit; an optional second-order factorization-machine term over
the field embeddings is added before the sigmoid. Backward is manual
reverse-mode over the cached forward intermediates.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodis, data, encoders, nn

AUTODIS = "autodis"
FIELD = "field"
YOUTUBE = "youtube"
DLRM = "dlrm"
ENCODERS = (AUTODIS, FIELD, YOUTUBE, DLRM) + encoders.HARD_KINDS

PROB_CLIP = 1e-7


class ModelError(ValueError):
    """Configuration/schema mismatch."""


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 8
    hidden_dims: tuple = (64, 32)
    encoder: str = AUTODIS
    use_fm: bool = True
    l2: float = 0.0
    # Encoder hyperparameters.
    buckets: int = 20  # H: meta-embedding / bucket count per field
    alpha: float = 0.2
    tau: float = 1e-3
    epsilon: float | None = None  # defaults to tau/2
    aggregation: str = autodis.WEIGHTED_AVERAGE
    topk: int = 2
    slope: float = 0.01
    tnet_hidden: int = 64
    shared_tnet: bool = False
    project_bias: bool = False
    dlrm_hidden: tuple = (512, 256)

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ModelError(f"unknown encoder {self.encoder!r}")
        if self.aggregation not in autodis.AGGREGATIONS:
            raise ModelError(f"unknown aggregation {self.aggregation!r}")
        if not self.hidden_dims:
            raise ModelError("hidden_dims must be non-empty")
        if self.embed_dim < 1 or self.buckets < 1:
            raise ModelError("embed_dim and buckets must be >= 1")
        if self.l2 < 0:
            raise ModelError("l2 must be non-negative")

    @property
    def eps_value(self):
        return self.tau / 2.0 if self.epsilon is None else self.epsilon


def _is_bias(name):
    return name.endswith(".b") or name.endswith(".bw") or name.endswith(".bW")


def param_group(name):
    """Reporting group for the gradient checker output."""
    if name.startswith("cat"):
        return "cat_table"
    if name.startswith("mlp."):
        return "mlp"
    if name.startswith("dlrm."):
        return "dlrm"
    for suffix, group in ((".me", "me"), (".w", "w"), (".W", "W"),
                          (".tw1", "W1"), (".tw2", "W2"),
                          (".table", "table"), (".fe", "fe"),
                          (".bw", "w"), (".bW", "W")):
        if name.endswith(suffix):
            return group
    if name in ("tnet.w1",):
        return "W1"
    if name in ("tnet.w2",):
        return "W2"
    return "other"


class Model:
    """Parameters plus the schema/stats context needed to run them."""

    def __init__(self, schema, config, stats_by_field, rng=None,
                 train_dataset=None, discretizers=None):
        data.validate_schema(schema)
        self.schema = list(schema)
        self.config = config
        self.stats = stats_by_field
        self.cat_fields = data.cat_fields(schema)
        self.num_fields = data.num_fields(schema)
        for f in self.num_fields:
            if f.field_id not in stats_by_field:
                raise ModelError(f"missing stats for numerical field {f.field_id}")
        self.stats_vecs = {
            f.field_id: stats_by_field[f.field_id].stats_vector()
            for f in self.num_fields
        }
        self.discretizers = {}
        if config.encoder in encoders.HARD_KINDS:
            if discretizers is not None:
                self.discretizers = dict(discretizers)
            elif train_dataset is not None:
                for f in self.num_fields:
                    values = train_dataset.numeric_values(f.field_id)
                    values = values[~np.isnan(values)]
                    self.discretizers[f.field_id] = encoders.fit_hard(
                        config.encoder, values, stats_by_field[f.field_id],
                        config.buckets,
                    )
            else:
                raise ModelError("hard encoders need a training split or "
                                 "fitted discretizers")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = self._init_params(rng)

    # -- construction --------------------------------------------------

    def _numeric_block_dim(self):
        cfg, N = self.config, len(self.num_fields)
        if cfg.encoder == YOUTUBE:
            return 3 * N
        if cfg.encoder == DLRM:
            return cfg.embed_dim if N else 0
        return N * cfg.embed_dim

    def mlp_input_dim(self):
        return len(self.cat_fields) * self.config.embed_dim + self._numeric_block_dim()

    def _init_params(self, rng):
        cfg = self.config
        d = cfg.embed_dim
        params = {}
        for f in self.cat_fields:
            params[f"cat{f.field_id}"] = encoders.init_embedding(f.vocab_size, d, rng)
        stats_len = data.CDF_GRID_POINTS + 1
        if cfg.encoder == AUTODIS and cfg.shared_tnet and self.num_fields:
            shared = autodis.init_field_params(
                cfg.buckets, d, stats_len, cfg.tnet_hidden, rng)
            params["tnet.w1"] = shared.w1
            params["tnet.w2"] = shared.w2
        for f in self.num_fields:
            j = f.field_id
            if cfg.encoder == AUTODIS:
                fp = autodis.init_field_params(
                    cfg.buckets, d, stats_len, cfg.tnet_hidden, rng,
                    use_bias=cfg.project_bias)
                params[f"num{j}.me"] = fp.me
                params[f"num{j}.w"] = fp.w
                params[f"num{j}.W"] = fp.W
                if not cfg.shared_tnet:
                    params[f"num{j}.tw1"] = fp.w1
                    params[f"num{j}.tw2"] = fp.w2
                if cfg.project_bias:
                    params[f"num{j}.bw"] = fp.bw
                    params[f"num{j}.bW"] = fp.bW
            elif cfg.encoder == FIELD:
                params[f"num{j}.fe"] = encoders.init_embedding(1, d, rng)[0]
            elif cfg.encoder in encoders.HARD_KINDS:
                rows = self.discretizers[j].n_buckets
                params[f"num{j}.table"] = encoders.init_embedding(rows, d, rng)
        if cfg.encoder == DLRM and self.num_fields:
            widths = [len(self.num_fields), *cfg.dlrm_hidden, d]
            for k in range(len(widths) - 1):
                fan_in = widths[k]
                bound = 1.0 / np.sqrt(fan_in)
                params[f"dlrm.{k}.W"] = rng.uniform(-bound, bound,
                                                    size=(widths[k + 1], fan_in))
                params[f"dlrm.{k}.b"] = np.zeros(widths[k + 1])
        D = self.mlp_input_dim()
        if D == 0:
            raise ModelError("model has no input fields")
        widths = [D, *cfg.hidden_dims, 1]
        for k in range(len(widths) - 1):
            bound = 1.0 / np.sqrt(widths[k])
            params[f"mlp.{k}.W"] = rng.uniform(-bound, bound,
                                               size=(widths[k + 1], widths[k]))
            params[f"mlp.{k}.b"] = np.zeros(widths[k + 1])
        return params

    def _field_autodis(self, j):
        p = self.params
        cfg = self.config
        return autodis.AutoDisParams(
            me=p[f"num{j}.me"], w=p[f"num{j}.w"], W=p[f"num{j}.W"],
            w1=p["tnet.w1"] if cfg.shared_tnet else p[f"num{j}.tw1"],
            w2=p["tnet.w2"] if cfg.shared_tnet else p[f"num{j}.tw2"],
            bw=p.get(f"num{j}.bw"), bW=p.get(f"num{j}.bW"),
        )

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    # -- forward -------------------------------------------------------

    def normalized_numeric(self, num_block):
        """Min-max normalize a raw (B, N) numeric block; missing cells
        fall back to the field mean before scaling."""
        out = np.empty_like(num_block, dtype=np.float64)
        for i, f in enumerate(self.num_fields):
            s = self.stats[f.field_id]
            col = num_block[:, i].copy()
            mask = np.isnan(col)
            if mask.any():
                col[mask] = s.mean
            out[:, i] = data.normalize_column(col, s)
        return out

    def forward(self, batch):
        """Predicted click probabilities plus the backward cache."""
        cfg = self.config
        B = batch.size
        if batch.cat.shape[1] != len(self.cat_fields) or \
                batch.num.shape[1] != len(self.num_fields):
            raise ModelError("batch does not conform to the model schema")
        xn = self.normalized_numeric(batch.num)
        blocks, fm_vecs, fm_tags = [], [], []
        cache = {"batch": batch, "xn": xn, "num": {}}

        for i, f in enumerate(self.cat_fields):
            ids = batch.cat[:, i]
            e = self.params[f"cat{f.field_id}"][ids]
            blocks.append(e)
            fm_vecs.append(e)
            fm_tags.append(("cat", i))

        enc = cfg.encoder
        if enc == YOUTUBE and self.num_fields:
            blocks.append(encoders.youtube_encode_batch(xn))
        elif enc == DLRM and self.num_fields:
            h = xn
            acts = [h]
            k = 0
            while f"dlrm.{k}.W" in self.params:
                z = h @ self.params[f"dlrm.{k}.W"].T + self.params[f"dlrm.{k}.b"]
                last = f"dlrm.{k + 1}.W" not in self.params
                h = z if last else nn.leaky_relu(z, cfg.slope)
                acts.append(z)
                k += 1
            cache["dlrm_acts"] = acts
            blocks.append(h)
            fm_vecs.append(h)
            fm_tags.append(("dlrm", None))
        else:
            for i, f in enumerate(self.num_fields):
                j = f.field_id
                xj = xn[:, i]
                if enc == AUTODIS:
                    fp = self._field_autodis(j)
                    e, c = autodis.forward_batch(
                        xj, fp, self.stats_vecs[j], cfg.aggregation,
                        cfg.alpha, cfg.tau, cfg.eps_value, cfg.slope, cfg.topk)
                    cache["num"][j] = c
                elif enc == FIELD:
                    e = xj[:, None] * self.params[f"num{j}.fe"][None, :]
                elif enc in encoders.HARD_KINDS:
                    raw = batch.num[:, i]
                    raw = np.where(np.isnan(raw), self.stats[j].mean, raw)
                    idx = self.discretizers[j].bucket(raw)
                    cache["num"][j] = idx
                    e = self.params[f"num{j}.table"][idx]
                else:
                    raise ModelError(f"unknown encoder {enc!r}")
                blocks.append(e)
                fm_vecs.append(e)
                fm_tags.append(("num", i))

        X = np.concatenate(blocks, axis=1) if blocks else np.zeros((B, 0))
        cache["block_dims"] = [b.shape[1] for b in blocks]

        h = X
        mlp_zs = []
        k = 0
        while f"mlp.{k}.W" in self.params:
            z = h @ self.params[f"mlp.{k}.W"].T + self.params[f"mlp.{k}.b"]
            mlp_zs.append((h, z))
            last = f"mlp.{k + 1}.W" not in self.params
            h = z if last else nn.leaky_relu(z, cfg.slope)
            k += 1
        logit = h[:, 0]

        if cfg.use_fm and len(fm_vecs) >= 2:
            S = np.sum(fm_vecs, axis=0)  # (B, d)
            sq = np.sum([(e**2).sum(axis=1) for e in fm_vecs], axis=0)
            logit = logit + 0.5 * ((S**2).sum(axis=1) - sq)
            cache["fm_sum"] = S
        cache["fm_vecs"] = fm_vecs
        cache["fm_tags"] = fm_tags
        cache["mlp_zs"] = mlp_zs
        cache["logit"] = logit
        probs = nn.sigmoid(logit)
        cache["probs"] = probs
        return probs, cache

    # -- loss / backward ----------------------------------------------

    def loss(self, probs, labels, lam=None):
        """Mean LogLoss on clipped probabilities plus squared-L2 weight
        decay over all non-bias parameters."""
        lam = self.config.l2 if lam is None else lam
        if len(probs) == 0:
            raise ModelError("empty batch")
        p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
        y = np.asarray(labels, dtype=np.float64)
        ll = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
        if lam:
            reg = sum((v**2).sum() for n, v in self.params.items()
                      if not _is_bias(n))
            ll = ll + lam * reg
        return float(ll)

    def loss_on_batch(self, batch, lam=None):
        probs, _ = self.forward(batch)
        return self.loss(probs, batch.labels, lam)

    def zero_grads(self):
        return {n: np.zeros_like(v) for n, v in self.params.items()}

    def backward(self, cache, labels):
        """Gradients of loss() w.r.t. every parameter."""
        cfg = self.config
        grads = self.zero_grads()
        probs = cache["probs"]
        y = np.asarray(labels, dtype=np.float64)
        B = len(y)
        # Through sigmoid+logloss: d/dlogit = (p - y)/B; clipped samples
        # contribute no gradient.
        active = (probs > PROB_CLIP) & (probs < 1.0 - PROB_CLIP)
        dlogit = np.where(active, (probs - y) / B, 0.0)

        fm_vecs, fm_tags = cache["fm_vecs"], cache["fm_tags"]
        d_fm = None
        if cfg.use_fm and len(fm_vecs) >= 2:
            S = cache["fm_sum"]
            d_fm = [dlogit[:, None] * (S - e) for e in fm_vecs]

        # MLP tower backward.
        up = dlogit[:, None]  # (B, 1) gradient at final linear output
        mlp_zs = cache["mlp_zs"]
        for k in range(len(mlp_zs) - 1, -1, -1):
            h_in, z = mlp_zs[k]
            if k < len(mlp_zs) - 1:
                up = up * nn.leaky_relu_grad(z, cfg.slope)
            grads[f"mlp.{k}.W"] += up.T @ h_in
            grads[f"mlp.{k}.b"] += up.sum(axis=0)
            up = up @ self.params[f"mlp.{k}.W"]
        dX = up  # (B, D)

        # Split the concat gradient back into field blocks and add the
        # FM contribution on the way.
        offset = 0
        block_grads = []
        for dim in cache["block_dims"]:
            block_grads.append(dX[:, offset:offset + dim])
            offset += dim

        fm_by_tag = {}
        if d_fm is not None:
            for tag, g in zip(fm_tags, d_fm):
                fm_by_tag[tag] = g

        bi = 0
        for i, f in enumerate(self.cat_fields):
            g = block_grads[bi]
            extra = fm_by_tag.get(("cat", i))
            if extra is not None:
                g = g + extra
            np.add.at(grads[f"cat{f.field_id}"], cache["batch"].cat[:, i], g)
            bi += 1

        enc = cfg.encoder
        if enc == YOUTUBE and self.num_fields:
            bi += 1  # parameter-free
        elif enc == DLRM and self.num_fields:
            g = block_grads[bi]
            extra = fm_by_tag.get(("dlrm", None))
            if extra is not None:
                g = g + extra
            acts = cache["dlrm_acts"]
            n_layers = len(acts) - 1
            up2 = g
            for k in range(n_layers - 1, -1, -1):
                z = acts[k + 1]
                h_in = acts[k] if k == 0 else nn.leaky_relu(acts[k], cfg.slope)
                if k < n_layers - 1:
                    up2 = up2 * nn.leaky_relu_grad(z, cfg.slope)
                grads[f"dlrm.{k}.W"] += up2.T @ h_in
                grads[f"dlrm.{k}.b"] += up2.sum(axis=0)
                up2 = up2 @ self.params[f"dlrm.{k}.W"]
            bi += 1
        else:
            for i, f in enumerate(self.num_fields):
                j = f.field_id
                g = block_grads[bi]
                extra = fm_by_tag.get(("num", i))
                if extra is not None:
                    g = g + extra
                if enc == AUTODIS:
                    fp = self._field_autodis(j)
                    view = {
                        "me": grads[f"num{j}.me"],
                        "w": grads[f"num{j}.w"],
                        "W": grads[f"num{j}.W"],
                        "w1": grads["tnet.w1" if cfg.shared_tnet else f"num{j}.tw1"],
                        "w2": grads["tnet.w2" if cfg.shared_tnet else f"num{j}.tw2"],
                    }
                    if cfg.project_bias:
                        view["bw"] = grads[f"num{j}.bw"]
                        view["bW"] = grads[f"num{j}.bW"]
                    autodis.backward_batch(g, cache["num"][j], fp, view,
                                           cfg.aggregation, cfg.alpha, cfg.slope)
                elif enc == FIELD:
                    grads[f"num{j}.fe"] += (cache["xn"][:, i][:, None] * g).sum(axis=0)
                elif enc in encoders.HARD_KINDS:
                    np.add.at(grads[f"num{j}.table"], cache["num"][j], g)
                bi += 1

        if cfg.l2:
            for n in grads:
                if not _is_bias(n):
                    grads[n] += 2.0 * cfg.l2 * self.params[n]
        return grads


# ----------------------------------------------------------------------
# Checkpoint serialization: versioned text manifest of named tensors.
# ----------------------------------------------------------------------

CKPT_MAGIC = "NUMEMBED_CKPT"
CKPT_VERSION = 1


def _config_lines(cfg):
    eps = "" if cfg.epsilon is None else repr(cfg.epsilon)
    return [
        f"config embed_dim {cfg.embed_dim}",
        "config hidden_dims " + ",".join(str(h) for h in cfg.hidden_dims),
        f"config encoder {cfg.encoder}",
        f"config use_fm {int(cfg.use_fm)}",
        f"config l2 {cfg.l2!r}",
        f"config buckets {cfg.buckets}",
        f"config alpha {cfg.alpha!r}",
        f"config tau {cfg.tau!r}",
        f"config epsilon {eps}",
        f"config aggregation {cfg.aggregation}",
        f"config topk {cfg.topk}",
        f"config slope {cfg.slope!r}",
        f"config tnet_hidden {cfg.tnet_hidden}",
        f"config shared_tnet {int(cfg.shared_tnet)}",
        f"config project_bias {int(cfg.project_bias)}",
        "config dlrm_hidden " + ",".join(str(h) for h in cfg.dlrm_hidden),
    ]


def _config_from_kv(kv):
    eps = kv.get("epsilon", "")
    return ModelConfig(
        embed_dim=int(kv["embed_dim"]),
        hidden_dims=tuple(int(t) for t in kv["hidden_dims"].split(",") if t),
        encoder=kv["encoder"],
        use_fm=bool(int(kv["use_fm"])),
        l2=float(kv["l2"]),
        buckets=int(kv["buckets"]),
        alpha=float(kv["alpha"]),
        tau=float(kv["tau"]),
        epsilon=None if eps == "" else float(eps),
        aggregation=kv["aggregation"],
        topk=int(kv["topk"]),
        slope=float(kv["slope"]),
        tnet_hidden=int(kv["tnet_hidden"]),
        shared_tnet=bool(int(kv["shared_tnet"])),
        project_bias=bool(int(kv["project_bias"])),
        dlrm_hidden=tuple(int(t) for t in kv["dlrm_hidden"].split(",") if t),
    )


def save_checkpoint(model, path):
    """Write schema, stats, fitted discretizers, config and all tensors
    as round-trip-exact text."""
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}"]
    lines.append("schema " + data.schema_to_string(model.schema))
    lines += _config_lines(model.config)
    for fid in sorted(model.stats):
        s = model.stats[fid]
        cdf = " ".join(repr(c) for c in s.cdf_samples)
        lines.append(
            f"stats {fid} {s.x_min!r} {s.x_max!r} {s.mean!r} {s.count} {cdf}"
        )
    for fid in sorted(model.discretizers):
        disc = model.discretizers[fid]
        bnd = " ".join(repr(b) for b in disc.boundaries)
        lines.append(f"disc {fid} {disc.kind} {disc.H} {disc.n_buckets} {bnd}".rstrip())
    for name in sorted(model.params):
        t = model.params[name]
        dims = " ".join(str(s) for s in t.shape)
        lines.append(f"tensor {name} {t.ndim} {dims}")
        lines.append(" ".join(repr(float(v)) for v in t.reshape(-1)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int(lines[0].split()[1])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    schema = None
    kv = {}
    stats = {}
    discs = {}
    tensors = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip():
            continue
        head, _, rest = line.partition(" ")
        if head == "schema":
            schema = data.schema_from_string(rest)
        elif head == "config":
            key, _, val = rest.partition(" ")
            kv[key] = val
        elif head == "stats":
            parts = rest.split()
            fid = int(parts[0])
            cdf = tuple(float(v) for v in parts[5:])
            stats[fid] = data.FieldStats(
                float(parts[1]), float(parts[2]), float(parts[3]), cdf,
                int(parts[4]))
        elif head == "disc":
            parts = rest.split()
            fid = int(parts[0])
            discs[fid] = encoders.HardDiscretizer(
                parts[1], int(parts[2]), None,
                boundaries=tuple(float(b) for b in parts[4:]),
                n_buckets=int(parts[3]))
        elif head == "tensor":
            parts = rest.split()
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(s) for s in parts[2:2 + ndim])
            values = np.array([float(v) for v in lines[i].split()],
                              dtype=np.float64)
            i += 1
            tensors[name] = values.reshape(shape)
        else:
            raise CheckpointError(f"unknown checkpoint line {head!r}")
    if schema is None:
        raise CheckpointError("checkpoint missing schema")
    cfg = _config_from_kv(kv)
    # Re-attach stats references to discretizers (not serialized inline).
    discs = {
        fid: dataclasses.replace(d, stats=stats.get(fid))
        for fid, d in discs.items()
    }
    model = Model(schema, cfg, stats, rng=np.random.default_rng(0),
                  discretizers=discs if discs else None)
    for name, t in tensors.items():
        if name not in model.params or model.params[name].shape != t.shape:
            raise CheckpointError(f"tensor {name} does not fit the model")
        model.params[name] = t
    return model
