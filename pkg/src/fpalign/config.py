'''
Runtime configuration loaded from environment variables with defaults.

Import this module instead of constants.py for any configurable value.
Physical and numerical parameters of a run do not live here; they come from
the JSON run configuration (see run_config.py). For isolated test runs, set
environment variables before running:

    export FPA_LOG_DIR=/tmp/fpalign_test/logs
    export FPA_THREADS=1
'''

import os
from pathlib import Path

# Project paths
PROJECT_ROOT = Path(os.getenv('FPA_PROJECT_ROOT', str(Path(__file__).parent.parent.parent)))
STATE_DIR    = Path(os.getenv('FPA_STATE_DIR', str(PROJECT_ROOT / 'state')))
LOG_DIR      = Path(os.getenv('FPA_LOG_DIR', str(PROJECT_ROOT / 'logs')))

# Parallelism: fallback for the --threads flag
THREADS = os.getenv('FPA_THREADS')

# Sample run configurations
CONFIG_EQUILIBRIUM = str(STATE_DIR / 'equilibrium.json')
CONFIG_TWO_BUMP    = str(STATE_DIR / 'two_bump.json')
CONFIG_PARTICLES   = str(STATE_DIR / 'particles.json')
