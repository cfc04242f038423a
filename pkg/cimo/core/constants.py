"""
cimo/core/constants.py
======================
Central configuration constants for CIMO (Causal Influence Maximization Operator)
"""

from __future__ import annotations
import os

# ────────────────────────────────
# 📦 Project Info
# ────────────────────────────────
PROJECT_NAME = "CIMO"
PROJECT_VERSION = "1.0.0"
PROJECT_AUTHOR = "AXID.ONE"
PROJECT_LICENSE = "MIT"

# Major.minor of every file format we write; readers reject a newer major
FORMAT_VERSION = "1.0"

# ────────────────────────────────
# ⚙️ Operational Settings
# ────────────────────────────────
CONCURRENCY = int(os.getenv("CIMO_THREADS", str(os.cpu_count() or 4)))

# Enumeration guards
EXACT_EDGE_GUARD = int(os.getenv("CIMO_EXACT_EDGE_GUARD", "20"))
PATH_COUNT_CAP = int(os.getenv("CIMO_PATH_CAP", str(10**6)))
SUBSET_CAP = int(os.getenv("CIMO_SUBSET_CAP", str(10**6)))

# ────────────────────────────────
# 🧮 Numerics
# ────────────────────────────────
SHAPE_TOL = 1e-9
PROB_SUM_TOL = 1e-12
FIT_TOL = float(os.getenv("CIMO_FIT_TOL", "1e-9"))
FIT_MAX_ITER = int(os.getenv("CIMO_FIT_MAX_ITER", str(10**4)))
LAZY_TIE_TOL = 1e-9

# Error-budget reporting
ERROR_BUDGET_DELTA = float(os.getenv("CIMO_DELTA", "0.05"))
JACKKNIFE_GROUPS = 10

# Warn when the effective sample size of a fit falls below this
MIN_EFFECTIVE_SAMPLES = 10.0

# Clip fraction above which synthetic data generation warns
CLIP_WARN_FRACTION = 0.05

# ────────────────────────────────
# 📁 File naming
# ────────────────────────────────
MANIFEST_FILENAME = "manifest.json"
GRAPH_FILENAME = "graph.txt"
SPEC_FILENAME = "exposure.json"
MODEL_FILENAME = "model.json"
DATASET_FILENAME = "dataset.jsonl"
FITTED_FILENAME = "fitted.json"
SELECTION_FILENAME = "selection.json"
TRACE_FILENAME = "trace.csv"
REPORT_FILENAME = "report.json"
SWEEP_FILENAME = "sweep.csv"
REPRO_DIRNAME = "repro"

# ────────────────────────────────
# 🧩 CLI Emoji Theme
# ────────────────────────────────
CLI_ICONS = {
    "gen": "🧬",
    "fit": "📈",
    "select": "🎯",
    "evaluate": "🧾",
    "verify": "🧪",
    "sweep": "🧹",
    "shape": "📐",
    "success": "✅",
    "warning": "⚠️",
    "error": "❌",
}

# Exit codes
EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_GUARD = 3
