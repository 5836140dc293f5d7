# Defaults shared by the simulator, the pipeline and the CLI
DESCRIPTOR_DIM = 32
NODE_EMBEDDING_DIM = 32
EDGE_EMBEDDING_DIM = 16
EDGE_FEATURE_DIM = 4
DEFAULT_HIDDEN_WIDTH = 64

LANE_WIDTH_M = 3.5
VEHICLE_HEIGHT_M = 1.5
RADAR_POINT_HEIGHT_M = 0.5
MIN_VEHICLE_SPEED = 8.0
MAX_VEHICLE_SPEED = 20.0
SPEED_LIMIT = 30.0

VEHICLE_EDGE_SPACING_M = 0.5
BACKGROUND_SPACING_M = 1.0
WORLD_EXTENT_M = 150.0
MAX_PLACEMENT_ATTEMPTS = 1000

RAW_POINT_BYTES = 16

FRAME_MAGIC = b'CVFM'
PAIR_MAGIC = b'CVFP'
CHECKPOINT_MAGIC = b'RMNT'
FRAME_FORMAT_VERSION = 1
CHECKPOINT_VERSION = 1

ENV_PREFIX = 'COVIS_'
MANIFEST_NAME = 'manifest.json'
FRAMES_DIR = 'frames'
