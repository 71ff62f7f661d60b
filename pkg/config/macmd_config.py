"""
MACMD Configuration
Numeric defaults for the numerics core, decoder blocks, loss and training loop
"""

# Numerics
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
LN_EPSILON = 1e-6
GRADCHECK_STEP = 1e-6

# HDConv
HDCONV_DILATIONS = (1, 2, 3, 5)
HDCONV_BRANCHES = 4
HDCONV_GROUP_MULTIPLE = 16   # 4 branches x 4 sub-groups

# Decoder blocks
APM_ATTN_REDUCTION = 8       # attn1 maps C -> C/8
MEAB_REDUCTION = 16          # channel-attention MLP ratio r
MEAB_SPATIAL_KERNEL = 7
CHANNEL_MIX_HIDDEN_RATIO = 2 # W_k: D -> 2D
CHANNEL_MIX_INIT_MU = 0.5
SEGHEAD_DW_KERNEL = 9

# Channel widths (C1..C4)
TOY_CHANNELS = (32, 64, 128, 256)
REFERENCE_CHANNELS = (64, 128, 320, 512)
REFERENCE_INPUT_SIZE = 224
IMAGE_CHANNELS = 3
SIZE_MULTIPLE = 32

# Loss
DICE_SMOOTH = 1.0
MULTICLASS_ALPHA = 0.4
MULTICLASS_BETA = 0.6
BINARY_ALPHA = 1.0
BINARY_BETA = 1.0

# Optimizer / schedule
LEARNING_RATE = 1e-3
LEARNING_RATE_MIN = 1e-6
WEIGHT_DECAY = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Training loop
DEFAULT_EPOCHS = 300
DEFAULT_BATCH_SIZE = 8
DEFAULT_IMAGE_SIZE = 64
DEFAULT_SEED = 7
DEFAULT_VAL_FRACTION = 0.0

# Synthetic data
SYNTH_DEFAULT_COUNT = 16
SYNTH_DEFAULT_CLASSES = 3
SYNTH_MIN_SHAPES = 1
SYNTH_MAX_SHAPES = 4
SYNTH_NOISE_LEVEL = 8.0          # std of additive noise in gray levels
SYNTH_BACKGROUND_LEVEL = 30
SYNTH_BAND_WIDTH = 20            # per-class intensity jitter range
MAX_MASK_CLASSES = 255

# File formats
MANIFEST_NAME = "manifest.tsv"
IMAGE_PATTERN = "img_{:05d}.pgm"
MASK_PATTERN = "msk_{:05d}.pgm"
CHECKPOINT_MAGIC = b"MACMDCK1"

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA_ERROR = 3
EXIT_CHECKPOINT_ERROR = 4

# Logging Configuration
LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
