"""Reed-Solomon coding over GF(256) with the QR field polynomial 0x11D.

Codewords are most-significant-first: ``data + parity`` where the generator
has roots alpha^0 .. alpha^(ec-1), as in ISO/IEC 18004.
"""

from .errors import DomainError, UncorrectableError

PRIM = 0x11D

EXP = [0] * 512
LOG = [0] * 256
_x = 1
for _i in range(255):
    EXP[_i] = _x
    LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= PRIM
for _i in range(255, 512):
    EXP[_i] = EXP[_i - 255]
del _x, _i


def gf_mul(a, b):
    if a == 0 or b == 0:
        return 0
    return EXP[LOG[a] + LOG[b]]


def gf_div(a, b):
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(256)")
    if a == 0:
        return 0
    return EXP[(LOG[a] - LOG[b]) % 255]


def gf_pow(a, n):
    if a == 0:
        return 0
    return EXP[(LOG[a] * n) % 255]


def gf_inv(a):
    return gf_div(1, a)


def poly_mul(p, q):
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        for j, b in enumerate(q):
            out[i + j] ^= gf_mul(a, b)
    return out


def poly_eval(p, x):
    """Evaluate a highest-degree-first polynomial at ``x`` (Horner)."""
    y = 0
    for c in p:
        y = gf_mul(y, x) ^ c
    return y


_GEN_CACHE = {}


def generator_poly(n):
    if n not in _GEN_CACHE:
        g = [1]
        for i in range(n):
            g = poly_mul(g, [1, EXP[i]])
        _GEN_CACHE[n] = g
    return _GEN_CACHE[n]


def rs_encode(data, ec_codewords):
    """Return ``data`` followed by ``ec_codewords`` parity bytes."""
    if ec_codewords < 2:
        raise DomainError("need at least 2 error-correction codewords")
    data = [int(b) for b in data]
    if any(not 0 <= b <= 255 for b in data):
        raise DomainError("data bytes must be in [0, 255]")
    if len(data) + ec_codewords > 255:
        raise DomainError("codeword length exceeds 255")
    gen = generator_poly(ec_codewords)
    rem = data + [0] * ec_codewords
    for i in range(len(data)):
        coef = rem[i]
        if coef:
            for j in range(1, len(gen)):
                rem[i + j] ^= gf_mul(gen[j], coef)
    return data + rem[len(data):]


def _syndromes(msg, nsym):
    return [poly_eval(msg, EXP[i]) for i in range(nsym)]


def rs_correct(codewords, ec_codewords):
    """Correct up to ``ec_codewords // 2`` symbol errors and return the data part.

    Raises :class:`UncorrectableError` when the error pattern is detectably
    beyond capacity.
    """
    msg = [int(b) for b in codewords]
    n = len(msg)
    if ec_codewords < 2 or n <= ec_codewords:
        raise DomainError("codeword block shorter than its parity")
    synd = _syndromes(msg, ec_codewords)
    if not any(synd):
        return msg[:n - ec_codewords]

    # Berlekamp-Massey; polynomials lowest-degree-first here
    err_loc = [1]
    prev_loc = [1]
    L, m, b = 0, 1, 1
    for i in range(ec_codewords):
        delta = synd[i]
        for j in range(1, L + 1):
            if j < len(err_loc):
                delta ^= gf_mul(err_loc[j], synd[i - j])
        if delta == 0:
            m += 1
            continue
        coef = gf_div(delta, b)
        shifted = [0] * m + [gf_mul(coef, c) for c in prev_loc]
        updated = _poly_add(err_loc, shifted)
        if 2 * L <= i:
            prev_loc, b, L, m = err_loc, delta, i + 1 - L, 1
        else:
            m += 1
        err_loc = updated
    while len(err_loc) > 1 and err_loc[-1] == 0:
        err_loc.pop()
    if len(err_loc) - 1 != L:
        raise UncorrectableError("inconsistent error locator degree")
    n_err = len(err_loc) - 1
    if 2 * n_err > ec_codewords:
        raise UncorrectableError(f"too many errors ({n_err}) for {ec_codewords} parity codewords")

    # Chien search: position p (from the start) has locator X = alpha^(n-1-p)
    positions = []
    for p in range(n):
        x_inv = gf_inv(EXP[(n - 1 - p) % 255])
        if _eval_low(err_loc, x_inv) == 0:
            positions.append(p)
    if len(positions) != n_err:
        raise UncorrectableError("error locator roots do not match error count")

    # Forney: omega = S(x) * Lambda(x) mod x^nsym
    omega = [0] * ec_codewords
    for i in range(ec_codewords):
        acc = 0
        for j in range(min(i + 1, len(err_loc))):
            acc ^= gf_mul(synd[i - j], err_loc[j])
        omega[i] = acc
    deriv = [err_loc[j] if j % 2 == 1 else 0 for j in range(1, len(err_loc))]
    for p in positions:
        x = EXP[(n - 1 - p) % 255]
        x_inv = gf_inv(x)
        denom = _eval_low(deriv, x_inv)
        if denom == 0:
            raise UncorrectableError("Forney denominator vanished")
        # first consecutive root is alpha^0, so the magnitude carries an extra X
        magnitude = gf_mul(x, gf_div(_eval_low(omega, x_inv), denom))
        msg[p] ^= magnitude
    if any(_syndromes(msg, ec_codewords)):
        raise UncorrectableError("residual syndrome after correction")
    return msg[:n - ec_codewords]


def _poly_add(p, q):
    size = max(len(p), len(q))
    return [(p[i] if i < len(p) else 0) ^ (q[i] if i < len(q) else 0) for i in range(size)]


def _eval_low(p, x):
    """Evaluate a lowest-degree-first polynomial."""
    y = 0
    for c in reversed(p):
        y = gf_mul(y, x) ^ c
    return y
