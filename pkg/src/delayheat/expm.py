"""Matrix exponential by scaling and squaring with diagonal Padé approximants.

Degrees and thresholds follow Higham (2005), "The scaling and squaring
method for the matrix exponential revisited": for ``||A||_1 <= theta_m`` the
[m/m] approximant has backward error below unit roundoff.
"""

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import NumericalError

_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def _pade_uv(A, m):
    n = A.shape[0]
    b = _PADE[m]
    ident = np.eye(n)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
        V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
             + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
        return U, V
    powers = [ident, A2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ A2)
    U = sum(b[k] * powers[k // 2] for k in range(m, 0, -2))
    V = sum(b[k] * powers[k // 2] for k in range(m - 1, -1, -2))
    return A @ U, V


def matrix_exponential(M, t=1.0):
    """Return ``exp(t * M)`` for a square real matrix.

    Raises
    ------
    NumericalError
        If the entries are not finite or the result overflows.
    """
    A = np.asarray(M, dtype=float) * float(t)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix exponential: non-finite input entries")
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm = np.linalg.norm(A, 1)
    if norm == 0.0:
        return np.eye(n)

    s = 0
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            break
    else:
        m = 13
        if norm > _THETA[13]:
            s = int(np.ceil(np.log2(norm / _THETA[13])))
            A = A / 2.0**s

    U, V = _pade_uv(A, m)
    with np.errstate(over="ignore", invalid="ignore"):
        F = lu_solve(lu_factor(V - U), V + U)
        for _ in range(s):
            F = F @ F
    if not np.all(np.isfinite(F)):
        raise NumericalError(
            f"matrix exponential overflowed (||tM||_1 = {norm:.3e}, {s} squarings)")
    return F
