"""Minimal ctypes binding to the system libcrypto for ed25519.

ctypes releases the GIL for the duration of each foreign call, so sign and
verify here run genuinely in parallel across validation worker threads.
The common Python crypto packages hold the GIL through their native calls,
which would serialize the validation pipeline and hide the effect of the
concurrency parameters this framework exists to measure.
"""

from __future__ import annotations

import ctypes
import ctypes.util

_EVP_PKEY_ED25519 = 1087  # NID_ED25519
SIG_LEN = 64
KEY_LEN = 32


def _load_libcrypto() -> ctypes.CDLL:
    candidates = []
    found = ctypes.util.find_library("crypto")
    if found:
        candidates.append(found)
    candidates += ["libcrypto.so.3", "libcrypto.so.1.1", "libcrypto.so"]
    for name in candidates:
        try:
            lib = ctypes.CDLL(name)
            lib.EVP_MD_CTX_new  # probe for the EVP interface
            return lib
        except (OSError, AttributeError):
            continue
    raise OSError("no usable libcrypto found; ed25519 signature mode unavailable")


_lc = _load_libcrypto()

_c_void_p = ctypes.c_void_p
_c_int = ctypes.c_int
_c_char_p = ctypes.c_char_p
_c_size_t = ctypes.c_size_t

for _name, _restype, _argtypes in (
    ("EVP_PKEY_new_raw_private_key", _c_void_p, [_c_int, _c_void_p, _c_char_p, _c_size_t]),
    ("EVP_PKEY_new_raw_public_key", _c_void_p, [_c_int, _c_void_p, _c_char_p, _c_size_t]),
    ("EVP_PKEY_get_raw_public_key", _c_int, [_c_void_p, _c_char_p, ctypes.POINTER(_c_size_t)]),
    ("EVP_PKEY_free", None, [_c_void_p]),
    ("EVP_MD_CTX_new", _c_void_p, []),
    ("EVP_MD_CTX_free", None, [_c_void_p]),
    ("EVP_DigestSignInit", _c_int, [_c_void_p, _c_void_p, _c_void_p, _c_void_p, _c_void_p]),
    ("EVP_DigestSign", _c_int, [_c_void_p, _c_char_p, ctypes.POINTER(_c_size_t), _c_char_p, _c_size_t]),
    ("EVP_DigestVerifyInit", _c_int, [_c_void_p, _c_void_p, _c_void_p, _c_void_p, _c_void_p]),
    ("EVP_DigestVerify", _c_int, [_c_void_p, _c_char_p, _c_size_t, _c_char_p, _c_size_t]),
):
    _fn = getattr(_lc, _name)
    _fn.restype = _restype
    _fn.argtypes = _argtypes


class Ed25519PrivateKey:
    """Holds an EVP_PKEY; frees it with the object."""

    __slots__ = ("_pkey", "public_bytes")

    def __init__(self, private_bytes: bytes):
        if len(private_bytes) != KEY_LEN:
            raise ValueError("ed25519 private key must be 32 bytes")
        self._pkey = _lc.EVP_PKEY_new_raw_private_key(
            _EVP_PKEY_ED25519, None, private_bytes, KEY_LEN
        )
        if not self._pkey:
            raise OSError("EVP_PKEY_new_raw_private_key failed")
        buf = ctypes.create_string_buffer(KEY_LEN)
        blen = _c_size_t(KEY_LEN)
        if _lc.EVP_PKEY_get_raw_public_key(self._pkey, buf, ctypes.byref(blen)) != 1:
            raise OSError("EVP_PKEY_get_raw_public_key failed")
        self.public_bytes = buf.raw[: blen.value]

    def sign(self, message: bytes) -> bytes:
        ctx = _lc.EVP_MD_CTX_new()
        try:
            if _lc.EVP_DigestSignInit(ctx, None, None, None, self._pkey) != 1:
                raise OSError("EVP_DigestSignInit failed")
            siglen = _c_size_t(SIG_LEN)
            sig = ctypes.create_string_buffer(SIG_LEN)
            if _lc.EVP_DigestSign(ctx, sig, ctypes.byref(siglen), message, len(message)) != 1:
                raise OSError("EVP_DigestSign failed")
            return sig.raw[: siglen.value]
        finally:
            _lc.EVP_MD_CTX_free(ctx)

    def __del__(self):
        pkey = getattr(self, "_pkey", None)
        if pkey:
            _lc.EVP_PKEY_free(pkey)


class Ed25519PublicKey:
    __slots__ = ("_pkey",)

    def __init__(self, public_bytes: bytes):
        if len(public_bytes) != KEY_LEN:
            raise ValueError("ed25519 public key must be 32 bytes")
        self._pkey = _lc.EVP_PKEY_new_raw_public_key(
            _EVP_PKEY_ED25519, None, public_bytes, KEY_LEN
        )
        if not self._pkey:
            raise OSError("EVP_PKEY_new_raw_public_key failed")

    def verify(self, message: bytes, signature: bytes) -> bool:
        ctx = _lc.EVP_MD_CTX_new()
        try:
            if _lc.EVP_DigestVerifyInit(ctx, None, None, None, self._pkey) != 1:
                raise OSError("EVP_DigestVerifyInit failed")
            return _lc.EVP_DigestVerify(ctx, signature, len(signature), message, len(message)) == 1
        finally:
            _lc.EVP_MD_CTX_free(ctx)

    def __del__(self):
        pkey = getattr(self, "_pkey", None)
        if pkey:
            _lc.EVP_PKEY_free(pkey)
