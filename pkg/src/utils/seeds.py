import hashlib


def derive_seed(master: int, label: str) -> int:
    """Stable per-stage seed from a master seed and a stage label."""
    digest = hashlib.blake2b(f"{master}/{label}".encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "big")
