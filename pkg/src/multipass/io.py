"""JSON readers and writers for molecules, rotations, configurations, models and toy systems."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .mountainpass import ConstantCvdw, ModelEnergy, PolynomialCvdw
from .multipole import ChargeDistribution, MultipoleSet, compute_multipoles
from .so3 import Config, Rotation
from .toyquantum import HermitianFamily, ToyCvdw, ToyMolecule


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, full float precision)."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    if not np.isfinite(value):
        raise ParseError(f"{where}: must be finite")
    return float(value)


def _vector(value, where, n=3):
    if not isinstance(value, list) or len(value) != n:
        raise ParseError(f"{where}: expected a list of {n} numbers")
    return [_number(v, f"{where}[{i}]") for i, v in enumerate(value)]


def _field(obj, key, where):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object")
    if key not in obj:
        raise ParseError(f"{where}: missing field '{key}'")
    return obj[key]


# ---------------------------------------------------------------------------
# molecules and multipoles


def molecule_from_dict(obj, where="molecule") -> ChargeDistribution:
    points = _field(obj, "points", where)
    if not isinstance(points, list) or not points:
        raise ParseError(f"{where}.points: expected a non-empty list")
    pts = []
    for i, p in enumerate(points):
        q = _number(_field(p, "q", f"{where}.points[{i}]"), f"{where}.points[{i}].q")
        x = _vector(_field(p, "x", f"{where}.points[{i}]"), f"{where}.points[{i}].x")
        pts.append((q, x))
    label = obj.get("label", "")
    if not isinstance(label, str):
        raise ParseError(f"{where}.label: expected a string")
    declared = _number(obj.get("declared_charge", 0.0), f"{where}.declared_charge")
    return ChargeDistribution.from_points(pts, label=label, declared_charge=declared)


def molecule_to_dict(dist: ChargeDistribution):
    return {"label": dist.label, "declared_charge": dist.declared_charge,
            "points": [{"q": float(q), "x": [float(v) for v in x]} for q, x in zip(dist.charges, dist.positions)]}


def load_molecule(path) -> ChargeDistribution:
    return molecule_from_dict(read_json(path), str(path))


def multipoles_from_dict(obj, where="multipoles") -> MultipoleSet:
    shapes = {"D": (3,), "Q": (3, 3), "O": (3, 3, 3), "H": (3, 3, 3, 3)}
    tensors = {}
    for key, shape in shapes.items():
        if key in obj:
            try:
                arr = np.asarray(obj[key], dtype=float)
            except (TypeError, ValueError):
                raise ParseError(f"{where}.{key}: expected nested numbers") from None
            if arr.shape != shape:
                raise ParseError(f"{where}.{key}: expected shape {shape}, got {arr.shape}")
            tensors[key] = arr
    charge = _number(obj.get("total_charge", 0.0), f"{where}.total_charge")
    return MultipoleSet.from_tensors(total_charge=charge, **tensors)


def multipoles_from_any(obj, base=None, where="molecule") -> MultipoleSet:
    """A multipole set from a molecule object, a tensor object or a path to either."""
    if isinstance(obj, str):
        path = Path(obj) if base is None or Path(obj).is_absolute() else Path(base) / obj
        return multipoles_from_any(read_json(path), path.parent, str(path))
    if isinstance(obj, dict) and "points" in obj:
        return compute_multipoles(molecule_from_dict(obj, where), 4)
    if isinstance(obj, dict):
        return multipoles_from_dict(obj, where)
    raise ParseError(f"{where}: expected a molecule, a multipole object or a file path")


# ---------------------------------------------------------------------------
# rotations and configurations


def rotation_from_json(value, where="rotation") -> Rotation:
    if isinstance(value, str):
        return Rotation.parse(value)
    if isinstance(value, list) and len(value) == 4:
        return Rotation(np.array(_vector(value, where, 4)))
    if isinstance(value, list) and len(value) == 3:
        try:
            return Rotation.from_matrix(np.asarray(value, dtype=float))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from None
    raise ParseError(f"{where}: expected [w,x,y,z], a 3x3 matrix or 'ax:ay:az:theta'")


def config_from_dict(obj, where="config", default_L=None) -> Config:
    U = rotation_from_json(obj.get("U", [1.0, 0.0, 0.0, 0.0]), f"{where}.U")
    V = rotation_from_json(obj.get("V", [1.0, 0.0, 0.0, 0.0]), f"{where}.V")
    if "L" in obj:
        L = _number(obj["L"], f"{where}.L")
    elif default_L is not None:
        L = float(default_L)
    else:
        raise ParseError(f"{where}: missing field 'L'")
    return Config(L, U, V)


def load_config(path, default_L=None) -> Config:
    return config_from_dict(read_json(path), str(path), default_L)


# ---------------------------------------------------------------------------
# complex matrices and toy systems


def complex_matrix(value, where):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: expected a matrix of numbers or [re, im] pairs") from None
    if arr.ndim == 3 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == 2:
        return arr.astype(complex)
    raise ParseError(f"{where}: expected a square matrix, got shape {arr.shape}")


def complex_vector(value, where):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 2 and arr.shape[-1] == 2:
        return arr[:, 0] + 1j * arr[:, 1]
    if arr.ndim == 1:
        return arr.astype(complex)
    raise ParseError(f"{where}: expected a vector of numbers or [re, im] pairs")


def toy_from_dict(obj, where="toy molecule") -> ToyMolecule:
    H = complex_matrix(_field(obj, "H", where), f"{where}.H")
    dip = _field(obj, "dipoles", where)
    if not isinstance(dip, list) or len(dip) != 3:
        raise ParseError(f"{where}.dipoles: expected three matrices")
    D = np.array([complex_matrix(d, f"{where}.dipoles[{k}]") for k, d in enumerate(dip)])
    return ToyMolecule(H, D, obj.get("label", ""))


def load_toy(path) -> ToyMolecule:
    return toy_from_dict(read_json(path), str(path))


def family_from_dict(obj, where="family"):
    """(HermitianFamily, x0 or None, x1 or None)."""
    if "coeffs" in obj:
        fam = HermitianFamily(coeffs=[complex_matrix(c, f"{where}.coeffs[{k}]")
                                      for k, c in enumerate(obj["coeffs"])])
    elif "samples" in obj:
        fam = HermitianFamily(times=obj.get("times"),
                              samples=[complex_matrix(c, f"{where}.samples[{k}]")
                                       for k, c in enumerate(obj["samples"])])
    else:
        raise ParseError(f"{where}: needs 'coeffs' or 'samples'")
    x0 = complex_vector(obj["x0"], f"{where}.x0") if "x0" in obj else None
    x1 = complex_vector(obj["x1"], f"{where}.x1") if "x1" in obj else None
    return fam, x0, x1


# ---------------------------------------------------------------------------
# model energy


def model_from_dict(obj, base=None, where="model") -> ModelEnergy:
    m1 = multipoles_from_any(_field(obj, "m1", where), base, f"{where}.m1")
    m2 = multipoles_from_any(_field(obj, "m2", where), base, f"{where}.m2")
    cv = obj.get("cvdw", {"kind": "constant", "value": 1.0})
    kind = cv.get("kind") if isinstance(cv, dict) else None
    if kind == "constant":
        cvdw = ConstantCvdw(_number(cv.get("value", 1.0), f"{where}.cvdw.value"))
    elif kind == "polynomial":
        cvdw = PolynomialCvdw(_number(_field(cv, "c0", f"{where}.cvdw"), f"{where}.cvdw.c0"),
                              np.asarray(_field(cv, "coeffs", f"{where}.cvdw"), float),
                              _vector(_field(cv, "D1", f"{where}.cvdw"), f"{where}.cvdw.D1"),
                              _vector(_field(cv, "D2", f"{where}.cvdw"), f"{where}.cvdw.D2"))
    elif kind == "toy":
        def toy(v, name):
            if isinstance(v, str):
                p = Path(v) if base is None or Path(v).is_absolute() else Path(base) / v
                return load_toy(p)
            return toy_from_dict(v, f"{where}.cvdw.{name}")
        cvdw = ToyCvdw(toy(_field(cv, "a", f"{where}.cvdw"), "a"), toy(_field(cv, "b", f"{where}.cvdw"), "b"))
    else:
        raise ParseError(f"{where}.cvdw.kind: expected 'constant', 'polynomial' or 'toy'")
    kw = {}
    for key in ("E1", "E2", "kappa", "repulsion", "L_min"):
        if key in obj:
            kw[key] = _number(obj[key], f"{where}.{key}")
    if "order" in obj:
        order = obj["order"]
        if not isinstance(order, int) or isinstance(order, bool):
            raise ParseError(f"{where}.order: expected an integer")
        kw["order"] = order
    try:
        return ModelEnergy(m1, m2, cvdw=cvdw, **kw)
    except InvalidInputError as exc:
        raise ParseError(f"{where}: {exc}") from None


def load_model(path) -> ModelEnergy:
    path = Path(path)
    return model_from_dict(read_json(path), path.parent, str(path))
