"""Run configuration: strict schema, defaults, stage hashing.

The config file is YAML with two levels (section.key). Unknown sections
or keys are hard errors naming the offending field; silent typos in an
operator config are worse than a failed run. Leaf types are checked
here, value-range invariants by the owning constructors.

Stage artifacts are content-addressed: each pipeline stage hashes the
config sections it reads plus the digest of its upstream stage, so
editing, say, the co-training weights never invalidates the fitted
geometry, while editing the mesh invalidates everything.
"""

import hashlib
import json

import yaml

from .errors import IoError, ValidationError

DEFAULTS = {
    "run": {
        "mesh": "",
        "out": "out",
        "seed": 0,
        "name": "",
    },
    "material": {
        "E": 1.0,
        "nu": 0.3,
    },
    "boundary": {
        "dirichlet_band": [2, -1.0, -0.95],
        "load_band": [2, 0.95, 1.0],
        "u_bar": [0.0, 0.0, 0.0],
        "pressure": 0.01,
    },
    "density": {
        "tau": 0.02,
    },
    "fit": {
        "epochs": 50,
        "steps_per_epoch": 200,
        "batch": 16384,
        "lr": 5e-4,
        "n_samples": 200000,
        "widths": [3, 256, 256, 256, 256, 256, 256, 256, 1],
    },
    "sampling": {
        "N_domain": 8192,
        "N_u": 512,
        "N_f": 1024,
        "N_gc": 2048,
        "sparse_fraction": 0.3,
        "dense_threshold": 0.1,
        "gc_margin": 0.1,
    },
    "fem": {
        "resolution": 64,
        "n_anchors": 7000,
        "holdout_fraction": 0.3,
        "tol": 1e-8,
    },
    "displacement": {
        "widths": [3, 125, 125, 125, 125, 125, 3],
    },
    "pretrain": {
        "epochs": 10000,
        "lr": 5e-3,
        "w_pde": 1.0,
        "w_bc": 50.0,
        "w_fem": 1.0,
    },
    "cotrain": {
        "epoch_max": 500,
        "t": 10,
        "alpha": 1e-6,
        "beta": 1e-3,
        "w_design": 25.0,
        "w_gc": 100000.0,
        "w_vr": 10000.0,
        "w_eikonal": 10.0,
        "M_v": None,
        "two_phase": True,
        "extract_resolution": 64,
    },
}

# leaf type tags: i int, f float, s str, b bool, if int list, ff float
# list, of optional float
_SCHEMA = {
    "run": {"mesh": "s", "out": "s", "seed": "i", "name": "s"},
    "material": {"E": "f", "nu": "f"},
    "boundary": {"dirichlet_band": "band", "load_band": "band",
                 "u_bar": "ff", "pressure": "f"},
    "density": {"tau": "f"},
    "fit": {"epochs": "i", "steps_per_epoch": "i", "batch": "i",
            "lr": "f", "n_samples": "i", "widths": "if"},
    "sampling": {"N_domain": "i", "N_u": "i", "N_f": "i", "N_gc": "i",
                 "sparse_fraction": "f", "dense_threshold": "f",
                 "gc_margin": "f"},
    "fem": {"resolution": "i", "n_anchors": "i", "holdout_fraction": "f",
            "tol": "f"},
    "displacement": {"widths": "if"},
    "pretrain": {"epochs": "i", "lr": "f", "w_pde": "f", "w_bc": "f",
                 "w_fem": "f"},
    "cotrain": {"epoch_max": "i", "t": "i", "alpha": "f", "beta": "f",
                "w_design": "f", "w_gc": "f", "w_vr": "f",
                "w_eikonal": "f", "M_v": "of", "two_phase": "b",
                "extract_resolution": "i"},
}


def _coerce(field, kind, v):
    try:
        if kind == "i":
            if isinstance(v, bool) or v != int(v):
                raise ValueError
            return int(v)
        if kind == "f":
            if isinstance(v, bool):
                raise ValueError
            return float(v)
        if kind == "s":
            if not isinstance(v, str):
                raise ValueError
            return v
        if kind == "b":
            if not isinstance(v, bool):
                raise ValueError
            return v
        if kind == "if":
            return [int(x) for x in v]
        if kind == "ff":
            return [float(x) for x in v]
        if kind == "band":
            if len(v) != 3:
                raise ValueError
            return [int(v[0]), float(v[1]), float(v[2])]
        if kind == "of":
            return None if v is None else float(v)
    except (TypeError, ValueError):
        pass
    else:
        raise AssertionError("unhandled schema kind %r" % kind)
    names = {"i": "an integer", "f": "a number", "s": "a string",
             "b": "a boolean", "if": "a list of integers",
             "ff": "a list of numbers",
             "band": "[axis, lo, hi] with integer axis",
             "of": "a number or null"}
    raise ValidationError("config field %s must be %s, got %r"
                          % (field, names[kind], v))


class RunConfig:
    """Validated two-level config; sections are attribute dicts."""

    def __init__(self, data=None):
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ValidationError("config root must be a mapping of "
                                  "sections")
        merged = {}
        for sec, keys in DEFAULTS.items():
            merged[sec] = dict(keys)
        for sec, body in data.items():
            if sec not in _SCHEMA:
                raise ValidationError(
                    "unknown config section %r; known sections: %s"
                    % (sec, ", ".join(sorted(_SCHEMA))))
            if body is None:
                continue
            if not isinstance(body, dict):
                raise ValidationError("config section %r must be a "
                                      "mapping" % sec)
            for key, v in body.items():
                if key not in _SCHEMA[sec]:
                    raise ValidationError(
                        "unknown config key %s.%s; known keys: %s"
                        % (sec, key, ", ".join(sorted(_SCHEMA[sec]))))
                merged[sec][key] = _coerce("%s.%s" % (sec, key),
                                           _SCHEMA[sec][key], v)
        self.sections = merged

    def __getitem__(self, sec):
        return self.sections[sec]

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as e:
            raise IoError("cannot read config %s: %s" % (path, e))
        except yaml.YAMLError as e:
            raise ValidationError("config %s is not valid YAML: %s"
                                  % (path, e))
        return cls(raw if raw is not None else {})

    def canonical(self, sections=None):
        """Deterministic JSON of the chosen sections (all by default)."""
        keys = sorted(self.sections) if sections is None else sections
        body = {k: self.sections[k] for k in keys}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))


def digest(*parts):
    """Short content hash over strings/bytes."""
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:12]


def file_digest(path):
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as e:
        raise IoError("cannot read %s: %s" % (path, e))
    return h.hexdigest()[:12]


def stage_digests(cfg, mesh_hash, pretrain_ablation="",
                  cotrain_ablation=""):
    """Content addresses for the four pipeline stages. Each stage mixes
    in only what it reads, so unrelated edits keep upstream artifacts
    valid."""
    seed = "seed=%d" % cfg["run"]["seed"]
    fit = digest(mesh_hash, cfg.canonical(["fit", "density"]), seed)
    fem = digest(fit, cfg.canonical(["fem", "boundary", "material"]))
    pre = digest(fem, cfg.canonical(["sampling", "pretrain",
                                     "displacement"]), pretrain_ablation)
    cot = digest(pre, cfg.canonical(["cotrain"]), cotrain_ablation)
    return {"fit": fit, "fem": fem, "pretrain": pre, "cotrain": cot}
