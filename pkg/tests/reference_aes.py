"""Independent AES-128 reference used as a cross-check oracle.

Deliberately shares nothing with the package implementation: the S-box is
generated from GF(2^8) arithmetic instead of a table, key expansion works
on big-endian 32-bit words, and encryption runs the textbook round
structure.
"""


def _xtime(a: int) -> int:
    a <<= 1
    return (a ^ 0x1B) & 0xFF if a & 0x100 else a


def _gf_mul(a: int, b: int) -> int:
    acc = 0
    while b:
        if b & 1:
            acc ^= a
        a = _xtime(a)
        b >>= 1
    return acc


def _build_sbox() -> list[int]:
    # multiplicative inverse via exp/log tables over generator 3
    exp = [0] * 256
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _gf_mul(x, 3)
    sbox = [0] * 256
    for v in range(256):
        inv = 0 if v == 0 else exp[(255 - log[v]) % 255]
        s = inv
        for shift in (1, 2, 3, 4):
            s ^= ((inv << shift) | (inv >> (8 - shift))) & 0xFF
        sbox[v] = s ^ 0x63
    return sbox


SBOX = _build_sbox()
RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def _sub_word(w: int) -> int:
    return (SBOX[(w >> 24) & 0xFF] << 24 | SBOX[(w >> 16) & 0xFF] << 16
            | SBOX[(w >> 8) & 0xFF] << 8 | SBOX[w & 0xFF])


def _rot_word(w: int) -> int:
    return ((w << 8) | (w >> 24)) & 0xFFFFFFFF


def expand_key(key: bytes) -> bytes:
    """176-byte AES-128 schedule via word-oriented expansion."""
    assert len(key) == 16
    w = [int.from_bytes(key[4 * i:4 * i + 4], "big") for i in range(4)]
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = _sub_word(_rot_word(t)) ^ (RCON[i // 4 - 1] << 24)
        w.append(w[i - 4] ^ t)
    return b"".join(x.to_bytes(4, "big") for x in w)


def encrypt_block(key: bytes, block: bytes) -> bytes:
    """Textbook AES-128 single-block encryption."""
    assert len(key) == 16 and len(block) == 16
    ks = expand_key(key)
    state = [list(block[r::4]) for r in range(4)]  # state[row][col]

    def add_round_key(rnd: int) -> None:
        for c in range(4):
            for r in range(4):
                state[r][c] ^= ks[16 * rnd + 4 * c + r]

    def sub_bytes() -> None:
        for r in range(4):
            for c in range(4):
                state[r][c] = SBOX[state[r][c]]

    def shift_rows() -> None:
        for r in range(1, 4):
            state[r] = state[r][r:] + state[r][:r]

    def mix_columns() -> None:
        for c in range(4):
            col = [state[r][c] for r in range(4)]
            state[0][c] = _gf_mul(col[0], 2) ^ _gf_mul(col[1], 3) ^ col[2] ^ col[3]
            state[1][c] = col[0] ^ _gf_mul(col[1], 2) ^ _gf_mul(col[2], 3) ^ col[3]
            state[2][c] = col[0] ^ col[1] ^ _gf_mul(col[2], 2) ^ _gf_mul(col[3], 3)
            state[3][c] = _gf_mul(col[0], 3) ^ col[1] ^ col[2] ^ _gf_mul(col[3], 2)

    add_round_key(0)
    for rnd in range(1, 10):
        sub_bytes()
        shift_rows()
        mix_columns()
        add_round_key(rnd)
    sub_bytes()
    shift_rows()
    add_round_key(10)
    return bytes(state[r][c] for c in range(4) for r in range(4))
