"""Opcode table shared by the tape backends.

The compiled backend mirrors these values in a cdef enum; keep the numbers
stable when adding ops.
"""

LEAF = 0
CONST = 1
ADD = 2
SUB = 3
NEG = 4
MUL = 5
DIV = 6
SMUL = 7   # (1x1 scalar, matrix)
SDIV = 8   # (matrix, 1x1 scalar)
ADDC = 9   # matrix + float constant
MULC = 10  # matrix * float constant
EXP = 11
LOG = 12
TANH = 13
SIGMOID = 14
SQRT = 15
SIN = 16
COS = 17
ABS = 18
ATAN2 = 19
MATMUL = 20
TRANSPOSE = 21
SUM = 22
SLICE = 23       # aux = (r0, r1, c0, c1)
EMBED = 24       # aux = (rows, cols, r0, c0)
SCALE_TMPL = 25  # aux = template ndarray
CHO_SOLVE = 26   # aux = [L, Y] cached at forward time
LOGDET = 27      # aux = [L]

NAMES = {v: k for k, v in list(globals().items()) if isinstance(v, int)}
