"""Keypoint streaming toolkit: low-bandwidth video calling via pose/face
keypoints, a bit-exact wire codec, throttled relay transport, and 2D puppet
playback."""

from .keypoints import (
    FACE_POINT_COUNT,
    FACE_POINT_NAMES,
    POSE_KEYPOINT_COUNT,
    POSE_KEYPOINT_NAMES,
    FaceFrame,
    Keypoint2D,
    KeypointError,
    KeypointFrame,
    PoseFrame,
    Stabilizer,
    SynthParams,
    dequantize_coord,
    quantize_coord,
    synth_frame,
    validate_frame,
)
from .codec import (
    FACE_BLOCK_LEN,
    FULL_PAYLOAD_LEN,
    HEADER_LEN,
    MAX_FRAME_LEN,
    POSE_BLOCK_LEN,
    FrameHeader,
    QuantizedFrame,
    StreamDecoder,
    StreamEncoder,
    WireError,
    decode_face,
    decode_frame,
    decode_pose,
    delta_decode,
    delta_encode,
    encode_face,
    encode_frame,
    encode_pose,
    quantize_frame,
)
from .metrics import LatencyLedger, Report, export_report, report
from .puppet import AnimGate, BoundPuppet, PuppetError, PuppetSpec, animate, bind, emit_svg, load_puppet
from .trace import TraceError, record, replay
from .transport import ChannelConfig, PeerSession, SignalingServer, ThrottledChannel

__version__ = "0.1.0"
