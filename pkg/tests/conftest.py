import os

# one BLAS thread is the test default: keeps kernel results bitwise
# reproducible across machines with different core counts
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
