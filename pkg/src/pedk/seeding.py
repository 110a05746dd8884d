import hashlib


def derive_seed(master, *tags):
    """Stable 63-bit seed from a master seed and any number of string/int tags.

    Independent of PYTHONHASHSEED, so runs reproduce across processes.
    """
    text = "/".join([str(int(master))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1
