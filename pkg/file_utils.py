import os
import re
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config import BASE_DIR, RESULTS_DIR, RECIPES_DIR, CSV_FLOAT_FORMAT, TOOL_VERSION, DEFAULT_SLIT_WEIGHT
from imaging_engine import ImageProfile, SlitKind, SlitObject
from optics_core import OpticalConfig, OpticsDomainError, PumpKind, PumpProfile, QuadratureSpec
from resolution import SearchSpec, SweepTable, ratio_map
from spdc_state import JointAmplitudeMap, Representation, angular_grid, momentum_grid

ALLOWED_FORMATS = ("csv", "json")

# Noms courts des recettes embarquées
RECIPE_ALIASES = {
    "fig2a": "map_thin_degenerate",
    "fig2b": "map_thin_nondegenerate",
    "fig2c": "map_thick_degenerate",
    "fig2d": "map_thick_nondegenerate",
    "fig3": "image_thin_crystal",
    "fig3g": "image_thick_crystal",
    "fig4": "sweep_thickness",
    "fig5": "sweep_pump_width",
    "fig6": "sweep_wavelengths",
}

_LENGTH_UNITS = {
    "pm": 1e-12,
    "nm": 1e-9,
    "um": 1e-6,
    "μm": 1e-6,
    "µm": 1e-6,
    "mm": 1e-3,
    "cm": 1e-2,
    "m": 1.0,
}
_LENGTH_PATTERN = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-zA-Zμµ]*)\s*$")


class ConfigError(ValueError):
    """Erreur de configuration ; field_path désigne le champ fautif (ex. 'optical.L_A')"""

    def __init__(self, message: str, field_path: Optional[str] = None):
        super().__init__(f"{field_path} : {message}" if field_path else message)
        self.field_path = field_path


def parse_length(value: Any, field_path: str = "") -> float:
    """'530nm', '10um', '1m' ou un nombre (mètres) vers une longueur en mètres"""
    if isinstance(value, bool):
        raise ConfigError(f"longueur attendue, reçu {value!r}", field_path)
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"longueur attendue, reçu {value!r}", field_path)
    match = _LENGTH_PATTERN.match(value)
    if not match:
        raise ConfigError(f"longueur illisible {value!r}", field_path)
    number, unit = match.groups()
    unit = unit or "m"
    if unit not in _LENGTH_UNITS:
        raise ConfigError(f"unité inconnue {unit!r} (attendu : {', '.join(_LENGTH_UNITS)})", field_path)
    return float(number) * _LENGTH_UNITS[unit]


def _length(tree: Dict, key: str, section: str, positive: bool = True) -> float:
    path = f"{section}.{key}"
    value = parse_length(tree[key], path)
    if not np.isfinite(value) or value < 0 or (positive and value == 0):
        qualifier = "strictement positive" if positive else "positive ou nulle"
        raise ConfigError(f"longueur {qualifier} attendue, reçu {tree[key]!r}", path)
    return value


def _lengths(tree: Dict, key: str, section: str) -> List[float]:
    values = tree[key]
    if not isinstance(values, list) or not values:
        raise ConfigError("liste non vide attendue", f"{section}.{key}")
    return [_length({key: v}, key, section) for v in values]


def _section(raw: Dict, name: str, required: bool = False) -> Dict:
    tree = raw.get(name)
    if tree is None:
        if required:
            raise ConfigError("section manquante", name)
        return {}
    if not isinstance(tree, dict):
        raise ConfigError("objet JSON attendu", name)
    return tree


@dataclass
class RunConfig:
    optical: OpticalConfig
    pump: PumpProfile
    object: Optional[SlitObject]
    quadrature: QuadratureSpec
    output_dir: str
    formats: List[str]
    sections: Dict[str, Dict] = field(default_factory=dict)
    name: str = "run"
    source: Optional[str] = None

    def to_manifest(self) -> Dict:
        return {
            "name": self.name,
            "source": self.source,
            "optical": self.optical.to_dict(),
            "pump": self.pump.to_dict(),
            "object": None if self.object is None else self.object.to_dict(),
            "quadrature": self.quadrature.to_dict(),
            "sections": self.sections,
            "output": {"directory": self.output_dir, "formats": self.formats},
        }


def _parse_optical(tree: Dict) -> OpticalConfig:
    given = {key: _length(tree, key, "optical") for key in ("lambda_pump", "lambda_signal", "lambda_idler") if key in tree}
    if len(given) != 2:
        raise ConfigError(f"exactement deux longueurs d'onde attendues, reçu {sorted(given) or 'aucune'}", "optical")
    if "L" in tree:
        if "L_A" in tree or "L_B" in tree:
            raise ConfigError("donner soit L, soit L_A et L_B", "optical.L")
        L_A = L_B = _length(tree, "L", "optical", positive=False)
    else:
        for key in ("L_A", "L_B"):
            if key not in tree:
                raise ConfigError("épaisseur manquante", f"optical.{key}")
        L_A = _length(tree, "L_A", "optical", positive=False)
        L_B = _length(tree, "L_B", "optical", positive=False)
    try:
        if "lambda_pump" in given and "lambda_signal" in given:
            return OpticalConfig.from_pump_signal(given["lambda_pump"], given["lambda_signal"], L_A, L_B)
        if "lambda_signal" in given and "lambda_idler" in given:
            return OpticalConfig.from_signal_idler(given["lambda_signal"], given["lambda_idler"], L_A, L_B)
        signal = 1.0 / (1.0 / given["lambda_pump"] - 1.0 / given["lambda_idler"])
        return OpticalConfig(given["lambda_pump"], signal, given["lambda_idler"], L_A, L_B)
    except (OpticsDomainError, ZeroDivisionError) as e:
        raise ConfigError(str(e), "optical") from e


def _parse_pump(tree: Dict) -> PumpProfile:
    try:
        kind = PumpKind(tree.get("kind", "gaussian"))
    except ValueError as e:
        raise ConfigError(f"type de pompe inconnu {tree.get('kind')!r}", "pump.kind") from e
    if kind == PumpKind.PLANE_WAVE:
        return PumpProfile.plane_wave()
    if "sigma_p" not in tree:
        raise ConfigError("largeur requise pour une pompe gaussienne", "pump.sigma_p")
    return PumpProfile.gaussian(_length(tree, "sigma_p", "pump"))


def _parse_object(tree: Dict) -> Optional[SlitObject]:
    if not tree:
        return None
    weight = DEFAULT_SLIT_WEIGHT
    if "transmission_weight" in tree:
        weight = _length(tree, "transmission_weight", "object", positive=False)
    kind = tree.get("kind", "double_slit")
    if kind == "none":
        return SlitObject.opaque()
    try:
        kind = SlitKind(kind)
    except ValueError as e:
        raise ConfigError(f"type d'objet inconnu {kind!r}", "object.kind") from e
    if kind == SlitKind.SINGLE_SLIT:
        return SlitObject.single_slit(weight)
    if "separation_d" not in tree:
        raise ConfigError("séparation requise pour une double fente", "object.separation_d")
    return SlitObject.double_slit(_length(tree, "separation_d", "object"), weight)


def _parse_quadrature(tree: Dict) -> QuadratureSpec:
    values = {key: tree[key] for key in ("n_theta", "n_refine_max", "rel_tol") if key in tree}
    try:
        return QuadratureSpec(**values)
    except (OpticsDomainError, TypeError) as e:
        raise ConfigError(str(e), "quadrature") from e


def ensure_output_dir(directory: str, formats: List[str]) -> str:
    unknown = [f for f in formats if f not in ALLOWED_FORMATS]
    if unknown or not formats:
        raise ConfigError(f"formats autorisés : {', '.join(ALLOWED_FORMATS)} (reçu {formats})", "output.formats")
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"impossible de créer {directory} : {e}", "output.directory") from e
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"dossier non accessible en écriture : {directory}", "output.directory")
    return directory


def resolve_config_path(path: str) -> str:
    """Chemin direct, nom de recette embarquée ('image_thin_crystal' -> recipes/image_thin_crystal.json)
    ou nom court de RECIPE_ALIASES ('fig3' -> recipes/image_thin_crystal.json)"""
    if os.path.exists(path):
        return path
    name = path[:-5] if path.endswith(".json") else path
    name = RECIPE_ALIASES.get(name, name)
    candidate = os.path.join(RECIPES_DIR, f"{name}.json")
    if os.path.exists(candidate):
        logging.info(f"📁 Recette embarquée : {os.path.basename(candidate)}")
        return candidate
    raise ConfigError(f"fichier de configuration introuvable : {path}")


def load_run_config(path: str) -> RunConfig:
    """Charge et valide un fichier de configuration JSON"""
    path = resolve_config_path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON invalide ligne {e.lineno}, colonne {e.colno} : {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError("objet JSON attendu à la racine")
    return build_run_config(raw, source=path)


def build_run_config(raw: Dict, source: Optional[str] = None) -> RunConfig:
    try:
        optical = _parse_optical(_section(raw, "optical", required=True))
        pump = _parse_pump(_section(raw, "pump", required=True))
        obj = _parse_object(_section(raw, "object"))
        quadrature = _parse_quadrature(_section(raw, "quadrature"))
    except OpticsDomainError as e:
        raise ConfigError(str(e)) from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), "object") from e
    output = _section(raw, "output")
    name = raw.get("name") or (os.path.splitext(os.path.basename(source))[0] if source else "run")
    directory = output.get("directory") or os.path.join(RESULTS_DIR, name)
    if not os.path.isabs(directory):
        directory = os.path.join(BASE_DIR, directory)
    formats = output.get("formats", list(ALLOWED_FORMATS))
    sections = {key: _section(raw, key) for key in ("map", "image", "search", "sweep", "broadband")}
    logging.info(f"📁 Configuration chargée : {name}")
    return RunConfig(optical=optical, pump=pump, object=obj, quadrature=quadrature,
                     output_dir=directory, formats=list(formats), sections=sections,
                     name=name, source=source)


def image_axis(run: RunConfig, obj: SlitObject) -> np.ndarray:
    tree = run.sections.get("image", {})
    n_points = int(tree.get("n_points", 201))
    if n_points < 3:
        raise ConfigError("au moins 3 points", "image.n_points")
    if "x_range" in tree:
        bounds = tree["x_range"]
        if not isinstance(bounds, list) or len(bounds) != 2:
            raise ConfigError("paire [x_min, x_max] attendue", "image.x_range")
        x_min, x_max = parse_length(bounds[0], "image.x_range"), parse_length(bounds[1], "image.x_range")
    elif "x_max" in tree:
        x_max = _length(tree, "x_max", "image")
        x_min = -x_max
    else:
        scale = obj.separation_d if obj.separation_d else run.optical.lambda_max
        x_min, x_max = -3.0 * scale, 3.0 * scale
    if not x_max > x_min:
        raise ConfigError(f"intervalle vide [{x_min}, {x_max}]", "image")
    return np.linspace(x_min, x_max, n_points)


def search_spec(run: RunConfig) -> SearchSpec:
    tree = run.sections.get("search", {})
    return SearchSpec(
        d_lo=_length(tree, "d_lo", "search") if "d_lo" in tree else None,
        d_hi=_length(tree, "d_hi", "search") if "d_hi" in tree else None,
        tol_d=_length(tree, "tol_d", "search") if "tol_d" in tree else None,
    )


def sweep_axis(tree: Dict, key: str, section: str = "sweep") -> Optional[List[float]]:
    """Valeurs explicites ('values') ou grille {start, stop, num, spacing: log|linear}"""
    if key in tree:
        return _lengths(tree, key, section)
    grid = tree.get(f"{key}_grid")
    if grid is None:
        return None
    path = f"{section}.{key}_grid"
    try:
        start, stop = parse_length(grid["start"], path), parse_length(grid["stop"], path)
        num = int(grid.get("num", 25))
    except KeyError as e:
        raise ConfigError(f"clé manquante {e}", path) from e
    if grid.get("spacing", "log") == "log":
        if start <= 0 or stop <= 0:
            raise ConfigError("bornes strictement positives requises en échelle log", path)
        return list(np.logspace(np.log10(start), np.log10(stop), num))
    return list(np.linspace(start, stop, num))


def map_axes(run: RunConfig) -> Tuple[Representation, np.ndarray, np.ndarray]:
    tree = run.sections.get("map", {})
    try:
        representation = Representation(tree.get("representation", "angular"))
    except ValueError as e:
        raise ConfigError(f"représentation inconnue {tree.get('representation')!r}", "map.representation") from e
    n_s = int(tree.get("n_theta_s", 512))
    n_i = int(tree.get("n_theta_i", 512))
    if n_s < 2 or n_i < 2:
        raise ConfigError("au moins deux points par axe", "map")
    if representation == Representation.MOMENTUM:
        axis_s, axis_i = momentum_grid(run.optical, n_s, n_i)
        return representation, axis_s, axis_i
    theta_s_max = np.radians(float(tree.get("theta_s_max_deg", 90.0)))
    theta_i_max = np.radians(float(tree.get("theta_i_max_deg", 90.0)))
    if not (0 < theta_s_max <= np.pi / 2) or not (0 < theta_i_max <= np.pi / 2):
        raise ConfigError("angles maximaux attendus dans ]0, 90] degrés", "map")
    axis_s, axis_i = angular_grid(n_s, n_i, theta_s_max, theta_i_max)
    return representation, axis_s, axis_i


def image_frame(profile: ImageProfile, extra: Optional[Dict[str, np.ndarray]] = None) -> pd.DataFrame:
    columns = {"x_S[m]": profile.x_axis, "I_norm": profile.values}
    if profile.background is not None:
        constructive, destructive = profile.port_rates()
        columns["background_norm"] = profile.background
        columns["rate_constructive_norm"] = constructive
        columns["rate_destructive_norm"] = destructive
    for name, values in (extra or {}).items():
        columns[name] = values
    return pd.DataFrame(columns)


def map_frame(amap: JointAmplitudeMap) -> pd.DataFrame:
    """Matrice des valeurs : une ligne par échantillon signal, une colonne par échantillon idler"""
    unit = "rad" if amap.representation == Representation.ANGULAR else "1/m"
    frame = pd.DataFrame(amap.values, columns=[CSV_FLOAT_FORMAT % v for v in amap.axis_i])
    frame.insert(0, f"axis_s[{unit}] \\ axis_i[{unit}]", amap.axis_s)
    return frame


_SWEEP_UNITS = {
    "L": "L[m]",
    "sigma_p": "sigma_p[m]",
    "lambda_signal": "lambda_signal[m]",
    "lambda_idler": "lambda_idler[m]",
    "d_min": "d_min[m]",
    "paraxial_d_min": "paraxial_d_min[m]",
}


def sweep_frame(table: SweepTable) -> pd.DataFrame:
    return table.to_frame().rename(columns=_SWEEP_UNITS)


def ratio_map_frame(table: SweepTable) -> pd.DataFrame:
    """Carte d_min / max(λ_S, λ_I) à plat : λ_S en première colonne, une colonne par λ_I"""
    pivot = ratio_map(table)
    frame = pd.DataFrame(pivot.to_numpy(), columns=[CSV_FLOAT_FORMAT % v for v in pivot.columns])
    frame.insert(0, "lambda_signal[m] \\ lambda_idler[m]", pivot.index.to_numpy())
    return frame


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"Type non sérialisable : {type(value).__name__}")


def save_csv(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding='utf-8')
    logging.info(f"💾 CSV écrit : {path}")
    return path


def save_json(data: Dict, path: str) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=_json_default)
    logging.info(f"💾 JSON écrit : {path}")
    return path


def build_manifest(command: str, run: Optional[RunConfig], results: Dict, argv: Optional[List[str]] = None) -> Dict:
    """Manifeste suffisant pour relancer exactement le calcul (nœuds fixés inclus)"""
    return {
        "tool": "qiup-simulator",
        "version": TOOL_VERSION,
        "command": command,
        "argv": argv or [],
        "run_config": None if run is None else run.to_manifest(),
        "results": results,
    }


def write_outputs(directory: str, stem: str, frame: Optional[pd.DataFrame], manifest: Dict,
                  formats: List[str]) -> List[str]:
    """CSV + manifeste JSON voisin, et/ou export JSON des données avec le manifeste"""
    written = []
    if "csv" in formats and frame is not None:
        written.append(save_csv(frame, os.path.join(directory, f"{stem}.csv")))
    written.append(save_json(manifest, os.path.join(directory, f"{stem}.manifest.json")))
    if "json" in formats and frame is not None:
        payload = {"manifest": manifest, "data": frame.to_dict(orient="list")}
        written.append(save_json(payload, os.path.join(directory, f"{stem}.json")))
    return written
