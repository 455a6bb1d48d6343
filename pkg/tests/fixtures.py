"""Restriction fixtures taken from the worked examples (0-based indices)."""
import numpy as np

from svarwb.restrictions import Target, compile_restrictions, equal_across, sign, zero


def a0(var):
    return Target("A0", var)


def ir(var, h=0):
    return Target("IR", var, h)


def cir(var):
    return Target("CIR", var)


def trivariate_a0_decls():
    """A_10 lower triangular, a_{1,11} = a_{2,11}, A_20[0,2] = A_20[1,2] = 0."""
    return [
        zero(0, a0(1), 0),
        zero(0, a0(2), 0),
        equal_across(0, a0(0)),
        zero(0, a0(2), 1),
        zero(1, a0(2), 0),
        zero(1, a0(2), 1),
    ]


def trivariate_a0():
    return compile_restrictions(trivariate_a0_decls(), n=3, s=2)


def bivariate_short_long():
    decls = [equal_across(0, ir(1, 0)), equal_across(0, cir(1))]
    return compile_restrictions(decls, n=2, s=2)


def trivariate_not_identified():
    decls = [
        zero(2, ir(0), 0),
        equal_across(2, ir(1)),
        zero(2, ir(0), 1),
        zero(1, ir(0), 0),
        zero(1, ir(0), 1),
        zero(0, ir(1), 0),
    ]
    return compile_restrictions(decls, n=3, s=2)


def cholesky(n, s=1):
    decls = [zero(j, a0(k), p) for p in range(s) for j in range(n) for k in range(j + 1, n)]
    return compile_restrictions(decls, n=n, s=s)


def bivariate_stability_zero():
    """n=2, s=2: IR0(2,1) equal across regimes, A_10[0,1] = 0."""
    decls = [equal_across(0, ir(1, 0)), zero(0, a0(1), 0)]
    return compile_restrictions(decls, n=2, s=2)


def trivariate_ir_stability():
    """n=3, s=2 recursive pattern with impact-response stability rows."""
    decls = [
        zero(0, ir(1), 0),
        zero(0, ir(2), 0),
        equal_across(0, ir(0)),
        zero(0, ir(2), 1),
        zero(1, ir(2), 0),
        equal_across(1, ir(1)),
    ]
    return compile_restrictions(decls, n=3, s=2)


# printed explicit-form matrices
R1_TRIVARIATE = np.array([
    [0, 1, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0],
    [1, 0, 0, -1, 0, 0],
    [0, 0, 0, 0, 0, 1],
], dtype=float)

R1_BIVARIATE = np.array([
    [0, 1, 0, 0, 0, -1, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, -1],
], dtype=float)

R1_NOT_IDENTIFIED = np.array([
    [1, 0, 0, 0, 0, 0],
    [0, 1, 0, 0, -1, 0],
    [0, 0, 0, 1, 0, 0],
], dtype=float)


def printed_V1_trivariate(t):
    """V_1(theta) as printed; t[k] is theta_{k+1} with 0-based entries."""
    t2, t3 = t[1], t[2]
    return np.array([
        [t2[1], t3[1], 0, 0],
        [0, t3[2], 0, 0],
        [t2[0], t3[0], -t2[2], -t3[3]],
        [0, 0, 0, t3[5]],
    ])


def printed_V2_trivariate(t):
    t3 = t[2]
    return np.array([[t3[2], 0], [0, t3[5]]])


def printed_V1_bivariate(t):
    t2 = t[1]
    return np.array([[t2[1], -t2[5]], [t2[3], -t2[7]]])


def printed_Vtt_not_identified(t):
    t1, t2, t3 = t
    return np.array([
        [0, t3[0], 0, 0, 0, 0],
        [t2[0], 0, 0, -t2[2], -t3[3], 0],
        [0, 0, 0, 0, t3[2], 0],
        [0, 0, t3[0], 0, 0, 0],
        [0, 0, 0, 0, 0, t3[2]],
        [0, -t1[1], -t2[0], 0, 0, 0],
    ])
