import hashlib

SEED_BYTES = 8


def derive_seed(master, label):
    """First 8 bytes (little-endian) of BLAKE2b("{master}:{label}")."""
    digest = hashlib.blake2b(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:SEED_BYTES], "little")


def derived_seeds(master, labels):
    return {label: derive_seed(master, label) for label in labels}
