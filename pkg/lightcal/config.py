MANIFEST_VERSION = 1
REPORT_VERSION = 1

# Levenberg-Marquardt
MAX_ITERATIONS = 200
COST_TOLERANCE = 1e-10
GRADIENT_TOLERANCE = 1e-12
PARAMETER_TOLERANCE = 1e-12
INITIAL_DAMPING = 1e-3
DAMPING_FACTOR = 10.0
MAX_DAMPING = 1e16
MAX_CONDITION = 1e15

# numeric Jacobian steps
POSITION_STEP = 1e-5
ANGLE_STEP = 1e-5
LOG_SCALE_STEP = 1e-6

# pixel selection
PIXELS_PER_IMAGE = 100
SATURATION_THRESHOLD = 1.0
FLOOR_THRESHOLD = 1e-3
SEED = 0

# geometry
UNDISTORT_MAX_ITERATIONS = 50
UNDISTORT_TOLERANCE_PX = 1e-9
RAY_PARALLEL_TOLERANCE = 1e-12
DIRECTION_DOT_TOLERANCE = 1e-12
ROTATION_TOLERANCE = 1e-10
MANIFEST_ROTATION_TOLERANCE = 1e-6

# photometry
MIN_LIGHT_HEIGHT = 1e-9
MIN_DISTANCE = 1e-9
GRID_THETA_MAX_DEG = 90.0

# residual value used for samples whose render fails, times max intensity
SENTINEL_FACTOR = 10.0
ZERO_RENDER_WARNING_FRACTION = 0.5
# a Jacobian column below this fraction of |measured| carries no information
FLAT_COLUMN_FRACTION = 1e-12
