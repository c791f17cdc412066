"""Structural constants shared across modules.

These are load-bearing: the invariant suite asserts them, and several
serialized artifacts bake them into their schema.
"""

DRIVELET_LEN = 5              # consecutive predictions optimized jointly
EGO_FRAMES = 3                # ego-state history depth (frames)
MAP_HISTORY_SAMPLES = 20      # 2 s of slow map features at 10 Hz
MAP_BLOCK_FEATURES = 8        # slow map features per history sample
MAP_HISTORY_LEN = MAP_HISTORY_SAMPLES * MAP_BLOCK_FEATURES  # 160
HEADING_VEC_LEN = 7           # junction/route heading features, current step only
EGO_VEC_LEN = 3 * EGO_FRAMES  # (speed, steering, heading rate) per ego frame
DISC_INPUT_LEN = 2 * DRIVELET_LEN  # discriminator sees s-block + v-block

N_CLUSTERS = 75               # maneuver clusters behind the human-likeness score

ATTRIBUTE_CAP_M = 250.0       # road attributes beyond this count as absent
NEAR_M = 40.0                 # "near a light / crossing" threshold
INTERSECTION_NEAR_M = 20.0    # "approaching an intersection" threshold
INSIDE_NODE_M = 10.0          # "inside intersection" half-width (diagnosis only)
STEER_ERR_DEG = 10.0          # diagnosis: steering prediction counts as an error
SPEED_ERR_KMH = 5.0           # diagnosis: speed prediction counts as an error
BEND_CURVATURE = 0.002        # signed curvature separating bends from straight

STEER_RANGE_DEG = 720.0       # steering wheel angle is in [-720, 720]
SPEED_RANGE_KMH = 180.0       # speed is in [0, 180]
SPEED_LIMITS = (30, 50, 80, 120)
LAT_ACCEL_MAX = 2.5           # m/s^2; caps cornering speed and free-flow speed

RATE_HZ = 10.0                # sample rate of logs, traces and features
HORIZON_STEPS = 5             # predictions target 0.5 s ahead at 10 Hz
GRU_HIDDEN = 20               # recurrent encoder width

SCENARIO_NAMES = ("lights_or_crossings", "winding_80", "near_intersection")
