import json
import os
import numpy as np
import pandas as pd
from .fixtures import example, fixture
from .model import LoadingStructure, ModelParams, UnrestrictedRhoParams
from .simulate import Dataset


class SpecError(ValueError):
    """Malformed model spec, dataset CSV or sidecar."""

    pass


def load_model(source):
    source = str(source)
    if source.startswith("case:"):
        return _builtin_case(source)
    if source.startswith("example:"):
        try:
            return example(source[len("example:") :])
        except ValueError as e:
            raise SpecError(str(e))
    if source.lower().endswith(".csv"):
        document = _read_json(sidecar_path(source))
        try:
            document["A"] = pd.read_csv(source).to_numpy(dtype=float).tolist()
        except (OSError, ValueError) as e:
            raise SpecError("Invalid loadings CSV {}: {}".format(source, e))
        return get_model_from_document(document, source)
    return get_model_from_document(_read_json(source), source)


def sidecar_path(path):
    return "{}.json".format(path)


def _builtin_case(source):
    parts = source.split(":")
    try:
        case_id = int(parts[1])
    except (IndexError, ValueError):
        raise SpecError("Invalid case reference {!r}".format(source))
    link = parts[2] if len(parts) > 2 else "probit"
    try:
        return fixture(case_id, link)
    except ValueError as e:
        raise SpecError(str(e))


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise SpecError("Invalid JSON in {}: {}".format(path, e))
    except OSError as e:
        raise SpecError("Cannot read {}: {}".format(path, e.strerror))


def has_model(document):
    """Return True if the document holds the fields of a model spec."""
    return isinstance(document, dict) and all(key in document for key in ("A", "assignment", "d"))


def get_model_from_document(document, source="<document>"):
    """Build the parameter set described by a model-spec document."""
    if not has_model(document):
        raise SpecError("Invalid model spec {}: needs A, assignment and d".format(source))
    kind = document.get("kind", "standard")
    link = document.get("link", "linear")
    try:
        structure = LoadingStructure(
            np.array(document["A"], dtype=float),
            document["assignment"],
            int(document.get("L", 1)),
        )
        if "G" in document and int(document["G"]) != structure.n_testlets:
            raise ValueError(
                "G = {} but A has {} testlet columns".format(document["G"], structure.n_testlets)
            )
        if "rho" in document:
            base = ModelParams(
                structure,
                document["d"],
                document.get("Sigma"),
                document.get("lambda"),
                kind="extended",
                link=link,
            )
            return UnrestrictedRhoParams.from_params(base, document["rho"])
        return ModelParams(
            structure,
            document["d"],
            document.get("Sigma"),
            document.get("lambda"),
            kind=kind,
            link=link,
        )
    except (TypeError, ValueError) as e:
        raise SpecError("Invalid model spec {}: {}".format(source, e))


def dump_model(params):
    """Return the model-spec document of a parameter set."""
    return params.to_document()


def load_dataset(path):
    """
    Read a dataset CSV and its '.json' sidecar. Without a sidecar the link
    is inferred from the values (0/1 means probit) and the seed is unknown.
    """
    try:
        values = pd.read_csv(path).to_numpy()
    except (OSError, ValueError) as e:
        raise SpecError("Invalid dataset {}: {}".format(path, e))
    if os.path.exists(sidecar_path(path)):
        sidecar = _read_json(sidecar_path(path))
    else:
        binary = np.all((values == 0) | (values == 1))
        sidecar = {"link": "probit" if binary else "linear", "seed": -1}
    link = sidecar.get("link")
    if link not in ("linear", "probit"):
        raise SpecError("Invalid sidecar for {}: unknown link {!r}".format(path, link))
    truth = None
    if "truth" in sidecar:
        truth = get_model_from_document(sidecar["truth"], sidecar_path(path))
    values = values.astype(np.int8 if link == "probit" else float)
    return Dataset(values=values, link=link, seed=int(sidecar.get("seed", -1)), truth=truth)
