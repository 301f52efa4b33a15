import os

# Pin BLAS pools before numpy loads: the suite runs many small matrix
# products where thread fan-out only costs time.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
