"""Default constants of the two-stage pipeline.

Every default used elsewhere in the package is defined here once, so a
configuration snapshot can be compared against a golden copy.
"""

# proposal stage anchors
ANCHOR_BINS = 8
ANCHOR_ASPECT_RATIO = 0.41  # width / height
FEATURE_STRIDE = 8
ANCHOR_POS_IOU = 0.5

# classification stage
PROPOSAL_POS_IOU = 0.7
PROPOSAL_SCORE_THRESHOLD = 0.01
PROPOSAL_PAD_FACTOR = 0.2
TOP_K = 50
MCN_INPUT_SIZE = (112, 56)  # (height, width)
MPN_IMAGE_SCALE = 600

# minibatch sampling: (total, positive fraction)
ANCHOR_BATCH = 120
ANCHOR_POS_FRACTION = 1 / 6  # 1:5
PROPOSAL_BATCH = 60
PROPOSAL_POS_FRACTION = 1 / 3  # 1:2

# NMS placement (not fixed by the method itself; Faster R-CNN habits)
PROPOSAL_NMS_IOU = 0.7
DETECTION_NMS_IOU = 0.5

# training-frame protocol
TRAIN_FRAME_STEP = 2
TRAIN_MIN_HEIGHT = 50.0
TRUNCATION_CLIP_FRACTION = 0.3

# evaluation
MATCH_IOU = 0.5
FPPI_RANGE = (1e-2, 1e0)
FPPI_POINTS = 9
MISS_FLOOR = 1e-10
REASONABLE_MIN_HEIGHT = 55.0

# losses
LOSS_WEIGHT = 1.0
PROB_CLAMP = 1e-12

# sanitization
MISALIGNMENT_IOU = 0.5
DIFF_IDENTITY_IOU = 0.3

IMAGE_SIZE = (640, 512)  # KAIST (width, height)

STREAMS = ("mpn", "color", "thermal", "merged")


def snapshot():
    """Return every default as a plain dict (used by the golden config test)."""
    return {
        name: value
        for name, value in sorted(globals().items())
        if name.isupper()
    }
