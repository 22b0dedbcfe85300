#!/usr/bin/env python3
"""
Orchestrateur du simulateur QIUP
Charge une configuration JSON (ou une recette embarquée), lance le calcul demandé
et écrit les tables CSV accompagnées de leur manifeste JSON.
"""

import os
import sys
import logging
import argparse
from dataclasses import replace
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config import MAX_WORKERS_CPU
from file_utils import (
    ConfigError,
    RunConfig,
    build_manifest,
    ensure_output_dir,
    image_axis,
    image_frame,
    load_run_config,
    map_axes,
    map_frame,
    parse_length,
    ratio_map_frame,
    save_csv,
    save_json,
    search_spec,
    sweep_axis,
    sweep_frame,
    write_outputs,
)
from imaging_engine import (
    MalformedProfileError,
    QuadratureConvergenceError,
    SlitKind,
    SlitObject,
    WindowTooSmallError,
    broadband_image,
    counting_rate,
    image_direct,
    image_plane_wave,
)
from optics_core import OpticsDomainError, UnsupportedProfileError, log_config
from quadrature import max_norm_difference
from resolution import (
    DEFAULT_THICKNESS_GRID,
    BracketError,
    dip_ratio,
    min_resolvable_distance,
    paraxial_dmin,
    psf,
    sweep_pump_width,
    sweep_thickness,
    sweep_wavelengths,
)
from spdc_state import (
    Representation,
    angular_probability_map,
    momentum_probability_map,
    signal_angle_cutoff,
    signal_mass_beyond,
)

EXIT_OK = 0
EXIT_INTERRUPTED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_BRACKET = 4

# L'ordre compte : ConfigError et MalformedProfileError dérivent aussi de ValueError
EXIT_CODES = [
    (BracketError, EXIT_BRACKET),
    ((QuadratureConvergenceError, WindowTooSmallError, MalformedProfileError), EXIT_NUMERICAL),
    ((ConfigError, OpticsDomainError, UnsupportedProfileError), EXIT_CONFIG),
]

SWEEP_KINDS = ("thickness", "pump-width", "wavelengths")


def exit_code_for(error: BaseException) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(error, kinds):
            return code
    return EXIT_INTERRUPTED


def failure_report(error: BaseException) -> Dict:
    report = {"error": type(error).__name__, "message": str(error), "exit_code": exit_code_for(error)}
    if isinstance(error, QuadratureConvergenceError):
        report.update({"achieved_tol": error.achieved_tol, "n_theta": error.n_theta})
    if isinstance(error, WindowTooSmallError):
        report["diagnostics"] = error.diagnostics
    if isinstance(error, BracketError):
        report["scan"] = error.scan
    if isinstance(error, ConfigError):
        report["field"] = error.field_path
    return report


def _jobs(args) -> int:
    return args.jobs or MAX_WORKERS_CPU


def _slit_object(run: RunConfig, args) -> SlitObject:
    weight = run.object.transmission_weight if run.object is not None else SlitObject.single_slit().transmission_weight
    if getattr(args, "single_slit", False):
        return SlitObject.single_slit(weight)
    if getattr(args, "d", None):
        d = parse_length(args.d, "--d")
        if d <= 0:
            raise ConfigError(f"séparation strictement positive attendue (reçu {args.d})", "--d")
        return SlitObject.double_slit(d, weight)
    if run.object is None:
        raise ConfigError("objet requis (section object, --d ou --single-slit)", "object")
    return run.object


def apply_overrides(run: RunConfig, args) -> RunConfig:
    """Les options de ligne de commande priment sur le fichier"""
    if args.out:
        run.output_dir = os.path.abspath(args.out)
    if args.format:
        run.formats = [f.strip() for f in args.format.split(",") if f.strip()]
    changes = {}
    if args.quad_n is not None:
        changes["n_theta"] = args.quad_n
    if args.quad_tol is not None:
        changes["rel_tol"] = args.quad_tol
    if changes:
        try:
            run.quadrature = replace(run.quadrature, **changes)
        except OpticsDomainError as e:
            raise ConfigError(str(e), "quadrature") from e
    return run


def cmd_state_map(run: RunConfig, args) -> int:
    """Carte de probabilité conjointe |φ|² d'une source (cristal A)"""
    representation, axis_s, axis_i = map_axes(run)
    cfg = run.optical
    print(f"🚀 Carte {representation.value} {axis_s.size}x{axis_i.size}, L = {cfg.L_A:.3e} m")
    if representation == Representation.MOMENTUM:
        amap = momentum_probability_map(axis_s, axis_i, cfg, run.pump, cfg.L_A)
    else:
        amap = angular_probability_map(axis_s, axis_i, cfg, run.pump, cfg.L_A)
    results = {"map": amap.meta, "representation": representation.value,
               "shape": [int(axis_s.size), int(axis_i.size)]}
    if representation == Representation.ANGULAR:
        cutoff = signal_angle_cutoff(cfg.lambda_signal, cfg.lambda_idler)
        results["signal_angle_cutoff"] = cutoff
        results["signal_mass_beyond_cutoff"] = signal_mass_beyond(amap, cutoff)
        print(f"📊 Angle signal maximal : {np.degrees(cutoff):.3f}°, "
              f"masse au-delà : {results['signal_mass_beyond_cutoff']:.2e}")
    manifest = build_manifest("state-map", run, results, args.argv)
    write_outputs(run.output_dir, f"{run.name}_state_map", map_frame(amap), manifest, run.formats)
    return EXIT_OK


def _oracle_comparison(run: RunConfig, args, profile, obj: SlitObject) -> Dict:
    cfg = run.optical
    oracle = image_direct(profile.x_axis, cfg, run.pump, obj, cfg.L_A, cfg.L_B, run.quadrature)
    difference = max_norm_difference(profile.values, oracle.values)
    frame = pd.DataFrame({
        "x_S[m]": profile.x_axis,
        "I_reduced_norm": profile.values,
        "I_direct_norm": oracle.values,
        "abs_difference": np.abs(profile.values - oracle.values),
    })
    results = {"max_norm_difference": difference, "reduced": profile.meta, "direct": oracle.meta}
    manifest = build_manifest("image --direct-oracle", run, results, args.argv)
    write_outputs(run.output_dir, f"{run.name}_oracle", frame, manifest, run.formats)
    print(f"📊 Oracle direct : écart max normalisé = {difference:.3e}")
    return {"max_norm_difference": difference, "window_criterion_met": oracle.meta["quadrature"]["window_criterion_met"]}


def _broadband(run: RunConfig, args, x: np.ndarray, obj: SlitObject) -> Optional[Dict]:
    tree = run.sections.get("broadband", {})
    values = sweep_axis(tree, "lambda_signal_values", "broadband")
    if not values:
        return None
    cfg = run.optical
    profile = broadband_image(x, cfg.lambda_pump, values, cfg.L_A, cfg.L_B, run.pump, obj,
                              run.quadrature, jobs=_jobs(args))
    manifest = build_manifest("image (broadband)", run, profile.meta, args.argv)
    write_outputs(run.output_dir, f"{run.name}_broadband", image_frame(profile), manifest, run.formats)
    return {"components": len(values)}


def cmd_image(run: RunConfig, args) -> int:
    obj = _slit_object(run, args)
    x = image_axis(run, obj)
    cfg = run.optical
    print(f"🚀 Image {obj.kind.value} sur {x.size} points")
    if run.pump.is_gaussian:
        profile = counting_rate(x, cfg, run.pump, obj, cfg.L_A, cfg.L_B, run.quadrature, jobs=_jobs(args))
    else:
        profile = image_plane_wave(x, cfg, obj, cfg.L_A, cfg.L_B, run.quadrature)
    results = {"image": profile.meta}
    if obj.kind == SlitKind.DOUBLE_SLIT:
        results["dip_ratio"] = dip_ratio(profile)
        print(f"📊 Rapport de creux : {results['dip_ratio']:.4f}")
    if args.direct_oracle:
        results["oracle"] = _oracle_comparison(run, args, profile, obj)
    broadband = _broadband(run, args, x, obj)
    if broadband:
        results["broadband"] = broadband
    manifest = build_manifest("image", run, results, args.argv)
    write_outputs(run.output_dir, f"{run.name}_image", image_frame(profile), manifest, run.formats)
    return EXIT_OK


def cmd_psf(run: RunConfig, args) -> int:
    cfg = run.optical
    x = image_axis(run, SlitObject.single_slit())
    profile = psf(cfg, run.pump, cfg.L_A, cfg.L_B, x, run.quadrature, jobs=_jobs(args))
    manifest = build_manifest("psf", run, {"image": profile.meta}, args.argv)
    write_outputs(run.output_dir, f"{run.name}_psf", image_frame(profile), manifest, run.formats)
    return EXIT_OK


def cmd_dmin(run: RunConfig, args) -> int:
    cfg = run.optical
    result = min_resolvable_distance(cfg, run.pump, cfg.L_A, cfg.L_B, run.quadrature,
                                     search_spec(run), jobs=_jobs(args))
    results = result.to_dict()
    results["ratio"] = result.d_min / cfg.lambda_max
    if cfg.L_A > 0 and cfg.L_B > 0:
        results["paraxial_d_min"] = paraxial_dmin(cfg.lambda_signal, cfg.lambda_idler, cfg.L_A, cfg.L_B)
    print(f"✅ d_min = {result.d_min:.4e} m ({results['ratio']:.3f} × max(λ_S, λ_I))")
    scan = pd.DataFrame(result.scan).rename(columns={"d": "d[m]"})
    manifest = build_manifest("dmin", run, results, args.argv)
    write_outputs(run.output_dir, f"{run.name}_dmin", scan, manifest, run.formats)
    return EXIT_OK


def cmd_sweep(run: RunConfig, args) -> int:
    tree = run.sections.get("sweep", {})
    kind = args.kind or tree.get("kind")
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"type de balayage attendu parmi {', '.join(SWEEP_KINDS)} (reçu {kind!r})", "sweep.kind")
    cfg = run.optical
    search = search_spec(run)
    L = parse_length(tree["L"], "sweep.L") if "L" in tree else cfg.L_A

    if kind == "thickness":
        values = sweep_axis(tree, "L_values") or list(DEFAULT_THICKNESS_GRID)
        table = sweep_thickness(cfg, run.pump, values, run.quadrature, search, jobs=_jobs(args))
    elif kind == "pump-width":
        values = sweep_axis(tree, "sigma_p_values")
        if not values:
            raise ConfigError("valeurs de sigma_p requises", "sweep.sigma_p_values")
        table = sweep_pump_width(cfg, L, values, run.quadrature, search, jobs=_jobs(args))
    else:
        lambda_s = sweep_axis(tree, "lambda_signal_values")
        lambda_i = sweep_axis(tree, "lambda_idler_values")
        if not lambda_s or not lambda_i:
            raise ConfigError("valeurs de λ_S et de λ_I requises", "sweep")
        if "sigma_p" in tree:
            sigma_p = parse_length(tree["sigma_p"], "sweep.sigma_p")
        elif run.pump.is_gaussian:
            sigma_p = run.pump.sigma_p
        else:
            raise ConfigError("sigma_p requis pour le balayage en longueurs d'onde", "sweep.sigma_p")
        table = sweep_wavelengths(lambda_s, lambda_i, run.quadrature, L=L, sigma_p=sigma_p,
                                  search=search, jobs=_jobs(args))

    results = {"kind": kind, "meta": table.meta, "failed": table.failed, "points": len(table.points)}
    manifest = build_manifest(f"sweep {kind}", run, results, args.argv)
    stem = f"{run.name}_sweep_{kind.replace('-', '_')}"
    write_outputs(run.output_dir, stem, sweep_frame(table), manifest, run.formats)
    if kind == "wavelengths" and "csv" in run.formats:
        save_csv(ratio_map_frame(table), os.path.join(run.output_dir, f"{stem}_ratio_map.csv"))

    if table.failed == len(table.points):
        print(f"❌ Tous les points du balayage ont échoué")
        return EXIT_BRACKET
    if table.failed:
        print(f"⚠️ {table.failed}/{len(table.points)} points en échec (voir la colonne status)")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "state-map": cmd_state_map,
    "image": cmd_image,
    "psf": cmd_psf,
    "dmin": cmd_dmin,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', required=True,
                        help='Fichier JSON de configuration ou nom de recette (map_thin_degenerate, fig2a, fig4...)')
    common.add_argument('--out', '-o', help='Dossier de sortie (défaut: section output ou results/<nom>)')
    common.add_argument('--jobs', '-j', type=int, help=f'Nombre de workers (défaut: {MAX_WORKERS_CPU})')
    common.add_argument('--format', help='Formats de sortie séparés par des virgules: csv,json')
    common.add_argument('--quad-n', type=int, help='Nombre de nœuds initial par axe angulaire')
    common.add_argument('--quad-tol', type=float, help='Tolérance relative du raffinement')
    common.add_argument('--verbose', '-v', action='store_true', help='Mode verbose')

    parser = argparse.ArgumentParser(
        description="Simulateur d'imagerie quantique à photons non détectés (QIUP) hors régime paraxial",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exemples d'utilisation:
  python orchestrator.py state-map --config map_thin_degenerate
  python orchestrator.py image --config image_thin_crystal --direct-oracle
  python orchestrator.py image --config image_thin_crystal --d 6um --jobs 8
  python orchestrator.py psf --config image_thin_crystal --out results/psf
  python orchestrator.py dmin --config image_thin_crystal
  python orchestrator.py sweep thickness --config sweep_thickness --jobs 8
        """
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    subparsers.add_parser('state-map', parents=[common], help='Carte de probabilité conjointe')
    image = subparsers.add_parser('image', parents=[common], help='Image et taux de comptage')
    image.add_argument('--d', help="Séparation des fentes (ex: 4.5um), remplace la section object")
    image.add_argument('--single-slit', action='store_true', help='Fente unique au lieu de la double fente')
    image.add_argument('--direct-oracle', action='store_true', help="Compare à l'intégrale directe sur x_I")
    subparsers.add_parser('psf', parents=[common], help="Fonction d'étalement du point")
    subparsers.add_parser('dmin', parents=[common], help='Distance minimale résolvable')
    sweep = subparsers.add_parser('sweep', parents=[common], help='Balayage de paramètres')
    sweep.add_argument('kind', nargs='?', choices=SWEEP_KINDS, help='Type de balayage (défaut: section sweep)')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    output_ready = None
    try:
        run = apply_overrides(load_run_config(args.config), args)
        output_ready = ensure_output_dir(run.output_dir, run.formats)
        log_config(run.optical, run.pump)
        code = COMMANDS[args.command](run, args)
    except KeyboardInterrupt:
        print(f"\n❌ Calcul interrompu par l'utilisateur")
        sys.exit(EXIT_INTERRUPTED)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_INTERRUPTED:
            logging.exception("Erreur inattendue")
        print(f"\n❌ Erreur ({type(e).__name__}) : {e}")
        if output_ready:
            report = failure_report(e)
            save_json(build_manifest(args.command, run, {"failure": report}, argv),
                      os.path.join(output_ready, f"{run.name}_{args.command}.failure.json"))
        sys.exit(code)

    if code != EXIT_OK:
        sys.exit(code)
    print(f"\n✅ Calcul terminé, résultats dans {run.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    main()
