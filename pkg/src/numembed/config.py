"""Declarative run configuration: a flat ``section.key = value`` text
file with ``--section.key=value`` command-line overrides, validated
against a closed key schema (unknown keys are an error)."""

from __future__ import annotations

from . import autodis, data, model as model_mod


class ConfigError(ValueError):
    pass


def _parse_bool(v):
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_int_list(v):
    return tuple(int(t) for t in v.split(",") if t.strip())


def _parse_delim(v):
    return {"tab": "\t", "comma": ",", "space": " "}.get(v, v)


def _opt_float(v):
    return None if v == "" else float(v)


# key -> (parser, default). Defaults are the desk-scale regime.
CONFIG_KEYS = {
    "data.train": (str, ""),
    "data.valid": (str, ""),
    "data.test": (str, ""),
    "data.schema": (str, ""),
    "data.delimiter": (_parse_delim, "\t"),
    "data.cat_mode": (str, "dict"),
    "data.cat_maps": (str, ""),
    "data.stats": (str, ""),
    "data.valid_fraction": (float, 0.2),
    "synth.n": (int, 0),
    "synth.num_fields": (int, 1),
    "synth.cat_vocabs": (_parse_int_list, ()),
    "synth.a": (float, 4.0),
    "synth.b": (float, 6.0),
    "synth.c": (float, -1.0),
    "synth.seed": (int, 0),
    "encoder.kind": (str, model_mod.AUTODIS),
    "encoder.buckets": (int, 20),
    "encoder.alpha": (float, 0.2),
    "encoder.tau": (float, 1e-3),
    "encoder.epsilon": (_opt_float, None),
    "encoder.aggregation": (str, autodis.WEIGHTED_AVERAGE),
    "encoder.topk": (int, 2),
    "encoder.slope": (float, 0.01),
    "encoder.tnet_hidden": (int, 64),
    "encoder.shared_tnet": (_parse_bool, False),
    "encoder.project_bias": (_parse_bool, False),
    "encoder.dlrm_hidden": (_parse_int_list, (512, 256)),
    "model.dim": (int, 8),
    "model.hidden_dims": (_parse_int_list, (64, 32)),
    "model.use_fm": (_parse_bool, True),
    "model.l2": (float, 0.0),
    "train.epochs": (int, 5),
    "train.batch_size": (int, 256),
    "train.lr": (float, 1e-3),
    "train.seed": (int, 0),
    "train.patience": (int, 3),
    "output.dir": (str, "out"),
}


class RunConfig:
    """Validated flat key-value configuration."""

    def __init__(self, values=None):
        self.raw = {k: None for k in CONFIG_KEYS}
        self.values = {k: d for k, (_, d) in CONFIG_KEYS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, text):
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = CONFIG_KEYS[key]
        try:
            self.values[key] = parser(text)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
        self.raw[key] = text

    def __getitem__(self, key):
        return self.values[key]

    def schema(self):
        if not self.values["data.schema"]:
            raise ConfigError("data.schema is required")
        return data.schema_from_string(self.values["data.schema"])

    def model_config(self):
        v = self.values
        try:
            return model_mod.ModelConfig(
                embed_dim=v["model.dim"],
                hidden_dims=v["model.hidden_dims"],
                encoder=v["encoder.kind"],
                use_fm=v["model.use_fm"],
                l2=v["model.l2"],
                buckets=v["encoder.buckets"],
                alpha=v["encoder.alpha"],
                tau=v["encoder.tau"],
                epsilon=v["encoder.epsilon"],
                aggregation=v["encoder.aggregation"],
                topk=v["encoder.topk"],
                slope=v["encoder.slope"],
                tnet_hidden=v["encoder.tnet_hidden"],
                shared_tnet=v["encoder.shared_tnet"],
                project_bias=v["encoder.project_bias"],
                dlrm_hidden=v["encoder.dlrm_hidden"],
            )
        except model_mod.ModelError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self):
        from .training import TrainConfig

        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            seed=v["train.seed"],
            patience=v["train.patience"],
        )

    def synth_spec(self):
        v = self.values
        return data.SyntheticSpec(
            n=v["synth.n"],
            n_numerical=v["synth.num_fields"],
            cat_vocabs=v["synth.cat_vocabs"],
            a=v["synth.a"],
            b=v["synth.b"],
            c=v["synth.c"],
        )

    def snapshot(self, path):
        """Write the fully resolved configuration; loading it back
        reproduces this run exactly."""
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(CONFIG_KEYS):
                fh.write(f"{key} = {self._render(key)}\n")

    def _render(self, key):
        v = self.values[key]
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, tuple):
            return ",".join(str(t) for t in v)
        if v == "\t":
            return "tab"
        return repr(v) if isinstance(v, float) else str(v)


def load_config(path, overrides=()):
    """Parse a config file, then apply ``section.key=value`` overrides
    (later wins)."""
    cfg = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            cfg.set(key.strip(), val.strip())
    apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg, overrides):
    for ov in overrides:
        item = ov[2:] if ov.startswith("--") else ov
        if "=" not in item:
            raise ConfigError(f"bad override {ov!r}: expected key=value")
        key, _, val = item.partition("=")
        cfg.set(key.strip(), val.strip())
