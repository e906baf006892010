"""Symbolic verification of the Heisenberg inversion identities.

The inversion on the group minus the origin is, in real coordinates
p = (t, x, y) with sq = x^2 + y^2 and Q = t^2 + sq^2:

    T = -t / Q,   X = (x t + y sq) / Q,   Y = (y t - x sq) / Q.

This script derives, in exact rational arithmetic:

  1. the 3x3 matrix of partial derivatives (printed over the common
     denominator Q^2 — the form transcribed into the package);
  2. det(dI) = 1/Q^2, strictly positive away from the origin;
  3. the contact-form pullback: with theta = dt - 2y dx + 2x dy,
     I*theta = theta / Q componentwise;
  4. the composition laws  w(I(p)) = -1/w(p)  and  I(I(p)) = (t, -x, -y).

Run:  python3 tests/oracles/inversion_differential.py
"""

import sympy as sp

t, x, y = sp.symbols("t x y", real=True)

sq = x**2 + y**2
Q = t**2 + sq**2

T = -t / Q
X = (x * t + y * sq) / Q
Y = (y * t - x * sq) / Q


def is_zero(expr) -> bool:
    """Exact zero test for a rational function."""
    return sp.cancel(sp.together(expr)) == 0


def main():
    coords = (t, x, y)
    image = (T, X, Y)

    # --- 1. partial derivatives over the denominator Q^2 ----------
    J = sp.Matrix([[sp.cancel(sp.diff(F, v)) for v in coords] for F in image])
    print("numerators of Q^2 * dI (rows T,X,Y; cols t,x,y):")
    for i, name in enumerate("TXY"):
        row = [sp.factor(sp.cancel(J[i, j] * Q**2)) for j in range(3)]
        print(f"  {name}: {row}")

    # --- 2. determinant -------------------------------------------
    det = sp.cancel(J.det())
    print("det dI           :", det)
    assert is_zero(det - 1 / Q**2)

    # --- 3. contact-form pullback ----------------------------------
    # theta has coefficients (1, -2y, 2x) in the basis (dt, dx, dy)
    def theta_at(tt, xx, yy):
        return sp.Matrix([1, -2 * yy, 2 * xx])

    pulled = J.T * theta_at(T, X, Y)   # (I*theta)_a = sum_b J[b,a] theta_b(I p)
    residual = pulled - theta_at(t, x, y) / Q
    assert all(is_zero(residual[i]) for i in range(3))
    print("I*theta          : theta / Q (componentwise)")

    # --- 4. composition laws ---------------------------------------
    # Cancel the intermediate image quantities first; substituting the raw
    # rational functions and cancelling at the end is exponentially slower.
    w = t + sp.I * sq
    sq_img = sp.cancel(X**2 + Y**2)          # |z|^2 after inversion = sq / Q
    w_img = T + sp.I * sq_img
    assert is_zero(w_img * w + 1)
    print("w(I(p)) * w(p)   : -1")

    q_img = sp.cancel(T**2 + sq_img**2)      # Q after inversion = 1 / Q
    t2 = sp.cancel(-T / q_img)
    x2 = sp.cancel((X * T + Y * sq_img) / q_img)
    y2 = sp.cancel((Y * T - X * sq_img) / q_img)
    assert t2 == t and x2 == -x and y2 == -y
    print("I(I(p))          : (t, -x, -y)")

    print("all inversion identities verified")


if __name__ == "__main__":
    main()
