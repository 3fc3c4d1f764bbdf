#!/usr/bin/env python3
"""
File utilities for output directories and the lab's CSV/JSON artifacts
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from datagen import CounterexampleBundle, DatasetBundle, marginal_ks
from errors import ConfigError, InvalidInputError
from graph_core import BinaryGraph

logger = logging.getLogger(__name__)

# 17 significant digits round-trip every float64 exactly
FLOAT_FORMAT = "%.17g"

BUNDLE_FILES = ("factors.csv", "observations.csv", "nuisance.csv", "graph.json", "pairs.json", "meta.json")
COUNTEREXAMPLE_FILES = ("original.csv", "constructed.csv", "meta.json")
MODEL_FILE = "model.json"
TRAIN_LOG_FILE = "train_log.csv"
REPORT_FILE = "metrics.json"
ADEQUACY_FILES = ("rows.csv", "correlations.csv", "plot_data.csv")


def validate_output_dir(path):
    """Create the output directory if needed; (ok, error message)"""
    if not path:
        return False, "No output directory given"
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        return False, f"Cannot create output directory {path}: {e}"
    if not os.access(path, os.W_OK):
        return False, f"Output directory {path} is not writable"
    return True, None


def ensure_output_dir(path):
    ok, error = validate_output_dir(path)
    if not ok:
        raise OSError(error)
    return path


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, default=_to_builtin)
        f.write("\n")
    return path


def read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{path} is not valid JSON: {e}") from e


def read_config(path):
    """Flat JSON object of scalar values"""
    if not path:
        return {}
    try:
        data = read_json(path)
    except InvalidInputError as e:
        raise ConfigError(str(e)) from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError(f"Config must be flat; nested values under: {', '.join(sorted(nested))}")
    return data


def write_csv(path, frame: pd.DataFrame, index=False):
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_matrix(path, columns=None):
    frame = pd.read_csv(path, float_precision="round_trip")
    if columns is not None and list(frame.columns) != list(columns):
        raise InvalidInputError(f"{path} has columns {list(frame.columns)}, expected {list(columns)}")
    return frame.to_numpy(dtype=float)


def _numbered(prefix, count):
    return [f"{prefix}{i}" for i in range(count)]


def save_bundle(bundle: DatasetBundle, out_dir):
    """Write the six bundle files"""
    ensure_output_dir(out_dir)
    write_csv(os.path.join(out_dir, "factors.csv"), pd.DataFrame(bundle.factors, columns=bundle.factor_names))
    write_csv(os.path.join(out_dir, "observations.csv"),
              pd.DataFrame(bundle.observations, columns=_numbered("x", bundle.m)))
    write_csv(os.path.join(out_dir, "nuisance.csv"),
              pd.DataFrame(bundle.nuisance, columns=_numbered("u", bundle.m_u)))
    write_json(os.path.join(out_dir, "graph.json"), bundle.truth.to_json())
    write_json(os.path.join(out_dir, "pairs.json"), {"pair_index": [int(p) for p in bundle.pair_index]})
    write_json(os.path.join(out_dir, "meta.json"), {
        "dataset": bundle.name,
        "n": bundle.n,
        "k": bundle.k,
        "m": bundle.m,
        "m_u": bundle.m_u,
        "seed": bundle.seed,
        "noise_sd": bundle.noise_sd,
        "noise_fraction": bundle.noise_fraction,
        "factor_names": list(bundle.factor_names),
        "factor_ranges": [list(r) for r in bundle.factor_ranges],
        "factor_mean": bundle.factor_mean,
        "factor_std": bundle.factor_std,
        "mixing": bundle.mixing,
    })
    logger.info("Saved %s bundle to %s", bundle.name, out_dir)
    return [os.path.join(out_dir, name) for name in BUNDLE_FILES]


def load_bundle(data_dir) -> DatasetBundle:
    missing = [name for name in BUNDLE_FILES if not os.path.isfile(os.path.join(data_dir, name))]
    if missing:
        raise InvalidInputError(f"{data_dir} is not a dataset bundle; missing {', '.join(missing)}")
    meta = read_json(os.path.join(data_dir, "meta.json"))
    if not isinstance(meta, dict):
        raise InvalidInputError(f"{data_dir}/meta.json must contain a JSON object")
    if meta.get("dataset") == "counterexample":
        raise InvalidInputError(f"{data_dir} holds a counterexample, not a trainable bundle")
    try:
        return _bundle_from_files(data_dir, meta)
    except KeyError as e:
        raise InvalidInputError(f"{data_dir} bundle is missing field {e}") from e
    except (TypeError, AttributeError) as e:
        raise InvalidInputError(f"{data_dir} bundle has a malformed field: {e}") from e


def _bundle_from_files(data_dir, meta) -> DatasetBundle:
    n, m_u = int(meta["n"]), int(meta["m_u"])
    factors = read_matrix(os.path.join(data_dir, "factors.csv"), meta["factor_names"])
    observations = read_matrix(os.path.join(data_dir, "observations.csv"), _numbered("x", int(meta["m"])))
    if m_u > 0:
        nuisance = read_matrix(os.path.join(data_dir, "nuisance.csv"), _numbered("u", m_u))
    else:
        nuisance = np.zeros((n, 0))
    return DatasetBundle(
        name=meta["dataset"],
        factor_names=list(meta["factor_names"]),
        factors=factors,
        observations=observations,
        nuisance=nuisance,
        truth=BinaryGraph.from_json(read_json(os.path.join(data_dir, "graph.json"))),
        pair_index=np.asarray(read_json(os.path.join(data_dir, "pairs.json"))["pair_index"], dtype=int),
        factor_ranges=[tuple(r) for r in meta["factor_ranges"]],
        mixing=np.asarray(meta["mixing"], dtype=float),
        factor_mean=np.asarray(meta["factor_mean"], dtype=float),
        factor_std=np.asarray(meta["factor_std"], dtype=float),
        seed=int(meta["seed"]),
        noise_sd=float(meta["noise_sd"]),
        noise_fraction=float(meta["noise_fraction"]),
    )


def save_counterexample(bundle: CounterexampleBundle, out_dir, n, seed):
    ensure_output_dir(out_dir)
    write_csv(os.path.join(out_dir, "original.csv"), pd.DataFrame(bundle.original, columns=bundle.columns))
    write_csv(os.path.join(out_dir, "constructed.csv"), pd.DataFrame(bundle.constructed, columns=bundle.columns))
    ks = marginal_ks(bundle)
    write_json(os.path.join(out_dir, "meta.json"), {
        "dataset": "counterexample",
        "n": n,
        "seed": seed,
        "literal": bundle.literal,
        "means": list(bundle.params.means),
        "sds": list(bundle.params.sds),
        "rho": bundle.params.rho,
        "ks": ks,
    })
    return ks


def save_train_log(log, path, columns):
    write_csv(path, pd.DataFrame.from_records(log, columns=list(columns)))
    return path


def save_adequacy(result, out_dir):
    ensure_output_dir(out_dir)
    rows_path, corr_path, plot_path = (os.path.join(out_dir, name) for name in ADEQUACY_FILES)
    write_csv(rows_path, result.rows)
    write_csv(corr_path, result.correlations, index=True)
    write_csv(plot_path, result.plot_data)
    return [rows_path, corr_path, plot_path]
