# numerical floors
DENSITY_FLOOR      = 1e-30   # below this a density value counts as vacuum
STRENGTH_FLOOR     = 1e-30   # minimum admissible s_rho / s_i
NEGATIVE_FLOOR     = -1e-14  # values above this are clipped silently
ENTROPY_FLOOR      = 1e-14   # decay fits stop at this entropy level
NORM_FLOOR         = 1e-14   # kappa-norms below this count as zero
MASK_RELATIVE      = 1e-30   # support mask: f >= MASK_RELATIVE * max f
ENTROPY_NOISE      = 1e-12   # negative entropy above -ENTROPY_NOISE is clipped to 0

# quadrature and search
QUAD_ABS_TOL       = 1e-12
QUAD_LIMIT         = 200
QUAD_FAIL_TOL      = 1e-9    # quadrature warnings with a larger error estimate are fatal
COERCIVITY_POINTS  = 10_000
COERCIVITY_TAIL_POINTS = 2_000
COERCIVITY_TAIL_FACTOR = 1e3
TAIL_RATIO         = 1e-12   # f_inf(Vmax) / max f_inf must stay below this
SUGGEST_TAIL_RATIO = 1e-14

# iteration
EIGEN_TOL          = 1e-8
GAP_EIGEN_TOL      = 1e-12
EIGEN_MAX_ITER     = 1_000   # Lanczos restarts
DENSE_EIGEN_LIMIT  = 1024

# assumption checks
GAP_TOL            = 1e-3
ASSUMPTION_I_FLOOR = 1e-8
MONOTONE_TOL       = 1e-8
FIT_MIN_SAMPLES    = 10

# grid defaults
DEFAULT_NX   = 64
DEFAULT_NV   = 128
DEFAULT_L    = 6.283185307179586
DEFAULT_VMAX = 6.0
DEFAULT_DT   = 1e-3

# file formats
MAGIC_SNAPSHOT = 'FPA1'
MAGIC_ENSEMBLE = 'FPP1'
FLOAT_FORMAT   = '{:.17g}'

SERIES_COLUMNS = ['t', 'mass', 'H', 'Ivv_w', 'Ivv', 'Ixv', 'Ixx', 'Dvv', 'Dxv',
                  'uV_norm2', 'pairing', 'gap_sup', 'force_ratio', 'ck_slack',
                  'logsob_ratio', 'dHdt_formula', 'dHdt_fd']
MOMENT_COLUMNS = ['t', 'momentum', 'kinetic_energy', 'max_speed']

# output file names
FILE_SERIES      = 'series.csv'
FILE_ASSUMPTIONS = 'assumptions.json'
FILE_FIT         = 'fit.json'
FILE_LEMMAS      = 'lemmas.json'
FILE_MODIFIED    = 'modified.json'
FILE_MOMENTS     = 'moments.csv'
FILE_CONFIG      = 'config.json'
FILE_LAST_GOOD   = 'last_good.fpa'
FILE_SNAPSHOT    = 'snapshot_{index:04d}.fpa'
FILE_ENSEMBLE    = 'ensemble_{index:04d}.fpp'
FILE_HISTOGRAM   = 'histogram_{index:04d}.fpa'

# exit codes
EXIT_OK       = 0
EXIT_CONFIG   = 1
EXIT_GATE     = 2
EXIT_NUMERIC  = 3
