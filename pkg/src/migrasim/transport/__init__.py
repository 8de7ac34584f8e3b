from .codec import Barrier, Bundle, CodecError, MsgType, StreamDecoder, decode, encode
from .local import LocalTransport

__all__ = ["Barrier", "Bundle", "CodecError", "LocalTransport", "MsgType", "StreamDecoder", "decode", "encode"]
