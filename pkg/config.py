import os
import logging

# Configuration logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

# Chemins et constantes
BASE_DIR = os.path.dirname(__file__)
RESULTS_DIR = os.path.join(BASE_DIR, "results")
RECIPES_DIR = os.path.join(BASE_DIR, "recipes")

# Configuration parallélisation
MAX_WORKERS_CPU = os.cpu_count() or 2

# Quadrature angulaire
DEFAULT_N_THETA = 128
DEFAULT_N_REFINE_MAX = 4
DEFAULT_REL_TOL = 1e-3
MIN_N_THETA = 64
# Taille max (en complexes) des tableaux temporaires d'un bloc x_S
X_CHUNK_ELEMENTS = 4_000_000

# Fenêtre de la pompe gaussienne : |q_P| <= PUMP_WINDOW_SIGMAS / sigma_P
PUMP_WINDOW_SIGMAS = 9.0

# Objet à fentes : poids intégré de chaque fente delta (m)
DEFAULT_SLIT_WEIGHT = 1e-9

# Critère de Rayleigh (creux de 20 %) et forme paraxiale
DIP_THRESHOLD = 0.8
# Écart toléré du creux à d_min et nombre max de pas de fausse position
DIP_TOLERANCE = 0.005
DIP_REFINE_MAX = 24
PARAXIAL_GAMMA = 0.8
DIP_AXIS_SAMPLES = 201
COARSE_SCAN_STEPS = 16
MONOTONICITY_TOL = 0.01

# Oracle par intégrale directe sur x_I
DIRECT_BOUNDARY_RATIO = 1e-4
DIRECT_WINDOW_CAP_WAVELENGTHS = 512

# Export CSV : 9 chiffres significatifs
CSV_FLOAT_FORMAT = '%.8e'
TOOL_VERSION = "1.0.0"
