"""
Constants used throughout the ocunet package
"""

# Optimizer
DEFAULT_LR = 3e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Schedules. Patience values count epochs.
PLATEAU_FACTOR = 0.5
PLATEAU_PATIENCE = 5
PLATEAU_MIN_LR = 1e-7
EARLY_STOP_PATIENCE = 15
IMPROVEMENT_THRESHOLD = 1e-4

# Layers
LEAKY_SLOPE = 0.3
BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99
SE_MAX_RATIO = 16
ASPP_RATES = (1, 6, 12, 18)
CHANNEL_SCHEDULE = (32, 64, 128, 256)
ENCODER_LEVELS = 4
SPATIAL_ATTENTION_THRESHOLD = 128 * 128
SPATIAL_KERNEL_LARGE = 7
SPATIAL_KERNEL_SMALL = 5

# Losses
CLAMP_EPS = 1e-7
DICE_SMOOTH = 1e-6
DEFAULT_ALPHA = 0.5

# Masks: intensity code per class index, nearest code wins within the tolerance.
ORCA_CODES = (0, 128, 255)
BINARY_CODES = (0, 255)
CODE_TOLERANCE = 40
ORCA_CLASS_NAMES = ("non-tissue", "non-carcinoma", "carcinoma")
BINARY_CLASS_NAMES = ("background", "carcinoma")

# Augmentation
BLUR_SIGMA = 1.0
SHARPEN_AMOUNT = 1.0
AUGMENT_OPS = ("hflip", "vflip", "gaussian_blur", "sharpen")

# Data
VAL_FRACTION = 0.1
MANIFEST_NAME = "manifest.csv"

# (max patch area, batch size): first row whose area bound fits wins.
BATCH_SIZE_RULE = [
    (512 * 512, 8),
    (float("inf"), 4),
]

# Checkpoints
CHECKPOINT_MAGIC = b"OCUN"
CHECKPOINT_VERSION = 1

# Gradient checks
GRADCHECK_STEP = 1e-5
GRADCHECK_FLOOR = 1e-4
GRADCHECK_TOLERANCE = 1e-4
# Tiny model, and the exit status of the gradcheck command
GRADCHECK_SUITE_TOLERANCE = 1e-3
GRADCHECK_PROBES = 100

# Overlay
OVERLAY_OPACITY = 0.5
