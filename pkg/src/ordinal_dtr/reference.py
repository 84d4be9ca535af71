"""Published simulation summaries used as side-by-side references by ``reproduce``.

Each table is stored as whitespace-separated rows
``scenario method <values>`` in the column order given by its ``*_COLUMNS``
tuple. ``dwols`` rows are kept for alignment; that comparator is not
implemented here.
"""

from __future__ import annotations

PSI_COLUMNS = tuple(f"{m}_{s}" for s in (1, 2) for m in ("bias", "cover", "mse", "pot"))
VALUE_COLUMNS = tuple(f"{m}_{s}" for s in (1, 2) for m in ("value_true", "value_est", "value_obs"))

TABLE_SPECS = {
    # table id: (n_tr, kind)
    "table2": (1000, "psi"),
    "tab1": (1500, "psi"),
    "tab2": (2000, "psi"),
    "tab4": (1000, "value"),
}

_TABLE2 = """
1 qlearning -0.006 0.994 0.041 1.000 0.000 0.950 0.048 1.000
1 dwols -0.005 0.992 0.041 1.000 0.000 0.664 0.048 1.000
1 bml-bp -0.001 1.000 0.003 1.000 0.000 1.000 0.004 1.000
1 bml-obart -0.005 1.000 0.007 1.000 -0.001 0.994 0.009 1.000
2 qlearning -0.006 0.994 0.041 1.000 0.000 0.949 0.048 0.533
2 dwols -0.004 0.991 0.042 1.000 0.000 0.667 0.049 0.532
2 bml-bp -0.001 1.000 0.003 1.000 -0.014 0.999 0.004 0.533
2 bml-obart -0.003 1.000 0.007 1.000 0.000 0.994 0.010 0.590
3 qlearning -0.147 0.953 0.077 1.000 0.023 0.933 0.069 1.000
3 dwols -0.146 0.949 0.078 1.000 0.023 0.634 0.070 1.000
3 bml-bp -0.065 0.988 0.027 1.000 -0.039 0.940 0.062 1.000
3 bml-obart -0.089 0.991 0.019 1.000 0.007 0.980 0.022 1.000
4 qlearning -0.138 0.957 0.074 0.769 0.022 0.932 0.069 0.758
4 dwols -0.136 0.952 0.074 0.767 0.022 0.634 0.070 0.757
4 bml-bp -0.052 0.990 0.025 0.713 -0.039 0.939 0.061 0.758
4 bml-obart -0.082 0.995 0.019 0.826 0.006 0.977 0.022 0.858
5 qlearning -0.023 0.973 0.063 0.652 0.061 0.929 0.097 1.000
5 dwols -0.023 0.971 0.064 0.650 0.062 0.619 0.099 1.000
5 bml-bp 0.019 0.988 0.034 0.611 -0.019 0.941 0.080 1.000
5 bml-obart 0.005 0.998 0.014 0.727 -0.016 0.960 0.043 1.000
6 qlearning -0.020 0.970 0.056 0.998 0.005 0.944 0.065 0.991
6 dwols -0.018 0.962 0.057 0.998 0.005 0.641 0.066 0.991
6 bml-bp 0.097 0.961 0.053 0.998 -0.024 0.947 0.058 0.991
6 bml-obart 0.002 0.993 0.015 1.000 -0.006 0.964 0.031 0.999
7 qlearning 0.040 0.957 0.067 0.825 0.033 0.940 0.072 0.995
7 dwols 0.041 0.951 0.068 0.824 0.033 0.636 0.074 0.995
7 bml-bp -0.031 0.982 0.032 0.832 -0.035 0.942 0.066 0.995
7 bml-obart 0.049 0.990 0.017 0.979 -0.004 0.961 0.034 0.998
8 qlearning -0.115 0.967 0.066 0.958 0.007 0.941 0.053 1.000
8 dwols -0.113 0.962 0.066 0.957 0.007 0.652 0.054 1.000
8 bml-bp -0.212 0.892 0.073 0.968 -0.088 0.910 0.053 1.000
8 bml-obart -0.073 1.000 0.016 1.000 0.007 0.988 0.017 1.000
9 qlearning -0.106 0.970 0.063 0.956 0.008 0.939 0.053 0.768
9 dwols -0.104 0.965 0.063 0.955 0.008 0.648 0.054 0.769
9 bml-bp -0.201 0.904 0.068 0.967 -0.093 0.907 0.053 0.768
9 bml-obart -0.065 1.000 0.015 1.000 0.006 0.987 0.017 0.873
10 qlearning 0.022 0.592 0.643 0.442 -0.068 0.626 0.509 0.535
10 dwols 0.022 0.580 0.644 0.443 -0.066 0.329 0.509 0.533
10 bml-bp 0.100 0.357 0.610 0.442 -0.039 0.336 0.460 0.534
10 bml-obart 0.021 0.834 0.341 0.799 -0.065 0.819 0.298 0.856
11 qlearning -0.005 0.795 0.317 0.928 0.018 0.345 0.851 0.456
11 dwols -0.004 0.774 0.317 0.928 0.018 0.166 0.853 0.456
11 bml-bp 0.045 0.617 0.334 0.928 0.033 0.330 0.840 0.456
11 bml-obart -0.007 0.860 0.137 0.960 0.022 0.755 0.238 0.910
12 qlearning 0.040 0.806 0.326 0.933 0.052 0.367 0.872 0.446
12 dwols -0.005 0.821 0.328 0.929 0.022 0.164 0.873 0.440
12 bml-bp 0.117 0.602 0.370 0.933 0.066 0.347 0.860 0.445
12 bml-obart 0.072 0.839 0.159 0.963 0.047 0.754 0.256 0.906
"""

_TAB1 = """
1 qlearning -0.008 0.991 0.029 1.000 0.003 0.939 0.034 1.000
1 dwols -0.008 0.989 0.029 1.000 0.003 0.652 0.034 1.000
1 bml-bp -0.003 1.000 0.003 1.000 0.000 0.998 0.003 1.000
1 bml-obart -0.009 0.998 0.006 1.000 0.004 0.989 0.008 1.000
2 qlearning -0.008 0.990 0.030 1.000 0.003 0.940 0.034 0.550
2 dwols -0.008 0.987 0.030 1.000 0.004 0.654 0.034 0.551
2 bml-bp -0.003 1.000 0.003 1.000 -0.014 0.997 0.004 0.551
2 bml-obart -0.009 0.999 0.006 1.000 0.004 0.992 0.008 0.610
3 qlearning -0.114 0.943 0.052 1.000 0.025 0.945 0.041 1.000
3 dwols -0.114 0.940 0.052 1.000 0.027 0.654 0.041 1.000
3 bml-bp -0.051 0.986 0.019 1.000 -0.016 0.945 0.037 1.000
3 bml-obart -0.070 0.995 0.013 1.000 0.020 0.968 0.015 1.000
4 qlearning -0.105 0.947 0.050 0.748 0.025 0.946 0.041 0.782
4 dwols -0.105 0.944 0.050 0.748 0.026 0.650 0.041 0.782
4 bml-bp -0.038 0.989 0.018 0.691 -0.016 0.946 0.037 0.783
4 bml-obart -0.063 0.998 0.012 0.810 0.019 0.973 0.015 0.880
5 qlearning -0.002 0.965 0.042 0.638 0.041 0.939 0.057 1.000
5 dwols -0.002 0.964 0.042 0.639 0.043 0.641 0.058 1.000
5 bml-bp 0.029 0.982 0.028 0.595 -0.011 0.944 0.051 1.000
5 bml-obart 0.020 0.998 0.011 0.667 -0.002 0.956 0.031 1.000
6 qlearning -0.005 0.952 0.041 0.999 0.014 0.936 0.044 0.996
6 dwols -0.004 0.943 0.041 0.999 0.015 0.637 0.045 0.996
6 bml-bp 0.074 0.951 0.040 0.999 -0.006 0.936 0.041 0.996
6 bml-obart 0.003 0.996 0.010 1.000 0.009 0.963 0.021 1.000
7 qlearning 0.040 0.949 0.045 0.864 0.031 0.930 0.050 0.997
7 dwols 0.039 0.943 0.045 0.863 0.032 0.629 0.050 0.997
7 bml-bp -0.024 0.977 0.023 0.870 -0.014 0.932 0.046 0.997
7 bml-obart 0.045 0.993 0.012 0.992 0.012 0.954 0.026 0.999
8 qlearning -0.095 0.949 0.046 0.979 0.007 0.944 0.034 1.000
8 dwols -0.095 0.945 0.046 0.979 0.007 0.650 0.035 1.000
8 bml-bp -0.165 0.894 0.051 0.984 -0.060 0.923 0.034 1.000
8 bml-obart -0.060 0.991 0.013 0.998 0.009 0.969 0.014 1.000
9 qlearning -0.087 0.953 0.044 0.976 0.007 0.945 0.034 0.773
9 dwols -0.086 0.950 0.044 0.976 0.008 0.650 0.035 0.774
9 bml-bp -0.157 0.904 0.048 0.982 -0.064 0.920 0.034 0.773
9 bml-obart -0.051 0.991 0.012 0.999 0.008 0.975 0.013 0.866
10 qlearning 0.017 0.475 0.621 0.429 -0.057 0.527 0.488 0.533
10 dwols 0.016 0.465 0.621 0.431 -0.057 0.255 0.488 0.533
10 bml-bp 0.097 0.280 0.607 0.429 -0.038 0.258 0.458 0.533
10 bml-obart 0.011 0.869 0.252 0.901 -0.049 0.831 0.233 0.911
11 qlearning -0.015 0.658 0.300 0.929 0.026 0.269 0.829 0.448
11 dwols -0.014 0.630 0.300 0.929 0.026 0.128 0.829 0.449
11 bml-bp 0.019 0.510 0.316 0.929 0.036 0.260 0.824 0.448
11 bml-obart -0.008 0.866 0.109 0.963 0.021 0.794 0.159 0.916
12 qlearning 0.064 0.681 0.306 0.943 0.046 0.282 0.851 0.434
12 dwols 0.026 0.706 0.303 0.940 0.021 0.127 0.854 0.431
12 bml-bp 0.116 0.512 0.342 0.944 0.056 0.271 0.846 0.434
12 bml-obart 0.066 0.875 0.114 0.961 0.029 0.770 0.173 0.924
"""

_TAB2 = """
1 qlearning -0.018 0.992 0.021 1.000 -0.002 0.949 0.023 1.000
1 dwols -0.019 0.989 0.021 1.000 -0.002 0.679 0.023 1.000
1 bml-bp -0.006 1.000 0.002 1.000 0.000 0.998 0.002 1.000
1 bml-obart -0.016 1.000 0.005 1.000 -0.003 0.988 0.005 1.000
2 qlearning -0.018 0.992 0.021 1.000 -0.001 0.949 0.023 0.545
2 dwols -0.018 0.989 0.021 1.000 -0.001 0.681 0.023 0.546
2 bml-bp -0.006 1.000 0.002 1.000 -0.014 0.997 0.002 0.545
2 bml-obart -0.016 1.000 0.005 1.000 -0.002 0.986 0.005 0.620
3 qlearning -0.108 0.942 0.039 1.000 0.009 0.947 0.030 1.000
3 dwols -0.108 0.940 0.039 1.000 0.009 0.669 0.030 1.000
3 bml-bp -0.051 0.987 0.014 1.000 -0.021 0.949 0.028 1.000
3 bml-obart -0.063 0.993 0.011 1.000 0.005 0.983 0.010 1.000
4 qlearning -0.098 0.948 0.037 0.773 0.008 0.947 0.029 0.759
4 dwols -0.098 0.946 0.037 0.772 0.009 0.670 0.030 0.759
4 bml-bp -0.038 0.990 0.013 0.717 -0.022 0.948 0.028 0.759
4 bml-obart -0.055 0.994 0.010 0.826 0.004 0.981 0.010 0.847
5 qlearning -0.003 0.968 0.031 0.663 0.023 0.950 0.038 1.000
5 dwols -0.003 0.967 0.032 0.661 0.023 0.674 0.038 1.000
5 bml-bp 0.024 0.983 0.022 0.621 -0.016 0.951 0.035 1.000
5 bml-obart 0.022 0.999 0.008 0.710 -0.009 0.972 0.019 1.000
6 qlearning -0.015 0.964 0.028 1.000 0.004 0.941 0.032 0.999
6 dwols -0.015 0.956 0.029 1.000 0.004 0.655 0.032 0.999
6 bml-bp 0.045 0.971 0.027 1.000 -0.011 0.945 0.029 0.999
6 bml-obart -0.009 0.997 0.008 1.000 -0.002 0.971 0.014 1.000
7 qlearning 0.020 0.956 0.032 0.880 0.018 0.943 0.034 1.000
7 dwols 0.020 0.952 0.032 0.879 0.019 0.660 0.034 1.000
7 bml-bp -0.035 0.973 0.018 0.884 -0.015 0.946 0.031 1.000
7 bml-obart 0.023 0.998 0.008 0.990 0.004 0.979 0.015 1.000
8 qlearning -0.092 0.951 0.036 0.990 0.003 0.945 0.025 1.000
8 dwols -0.092 0.948 0.036 0.990 0.003 0.664 0.025 1.000
8 bml-bp -0.145 0.892 0.041 0.992 -0.048 0.929 0.025 1.000
8 bml-obart -0.054 0.992 0.010 1.000 0.004 0.990 0.008 1.000
9 qlearning -0.082 0.956 0.034 0.989 0.004 0.945 0.025 0.768
9 dwols -0.082 0.953 0.034 0.989 0.004 0.663 0.025 0.769
9 bml-bp -0.135 0.905 0.038 0.991 -0.050 0.927 0.025 0.768
9 bml-obart -0.046 0.994 0.009 1.000 0.004 0.983 0.008 0.851
10 qlearning 0.035 0.416 0.618 0.423 -0.055 0.453 0.480 0.532
10 dwols 0.035 0.405 0.618 0.424 -0.055 0.215 0.481 0.533
10 bml-bp 0.100 0.248 0.608 0.425 -0.038 0.225 0.458 0.532
10 bml-obart 0.024 0.903 0.203 0.937 -0.044 0.817 0.201 0.914
11 qlearning 0.002 0.577 0.293 0.937 0.025 0.228 0.819 0.445
11 dwols 0.003 0.545 0.293 0.937 0.025 0.108 0.820 0.445
11 bml-bp 0.027 0.461 0.303 0.937 0.033 0.221 0.816 0.445
11 bml-obart -0.003 0.904 0.082 0.966 0.019 0.806 0.124 0.930
12 qlearning 0.050 0.608 0.297 0.945 0.050 0.236 0.838 0.434
12 dwols 0.013 0.634 0.295 0.941 0.021 0.107 0.838 0.428
12 bml-bp 0.092 0.474 0.319 0.946 0.057 0.229 0.836 0.433
12 bml-obart 0.032 0.895 0.091 0.961 0.027 0.795 0.131 0.924
"""

_TAB4 = """
1 qlearning 0.000 0.000 0.000 0.333 0.333 0.334
1 dwols 0.000 0.000 0.000 0.333 0.333 0.334
1 bml-bp 0.000 0.000 0.000 0.332 0.334 0.334
1 bml-obart 0.000 0.000 0.000 0.334 0.336 0.329
2 qlearning 0.000 0.000 0.000 0.337 0.333 0.334
2 dwols 0.000 0.000 0.000 0.337 0.333 0.334
2 bml-bp 0.000 0.000 0.000 0.336 0.334 0.334
2 bml-obart 0.000 0.000 0.000 0.337 0.332 0.332
3 qlearning 1.000 1.000 1.000 0.527 0.528 0.401
3 dwols 1.000 1.000 1.000 0.527 0.528 0.401
3 bml-bp 1.000 1.000 1.000 0.526 0.528 0.401
3 bml-obart 1.000 1.000 1.000 0.525 0.528 0.401
4 qlearning 1.000 1.000 1.000 0.527 0.526 0.400
4 dwols 1.000 1.000 1.000 0.527 0.526 0.400
4 bml-bp 1.000 1.000 1.000 0.526 0.526 0.400
4 bml-obart 1.000 1.000 1.000 0.525 0.525 0.395
5 qlearning 1.000 1.000 1.000 0.688 0.689 0.434
5 dwols 1.000 1.000 1.000 0.688 0.689 0.434
5 bml-bp 1.000 1.000 1.000 0.688 0.690 0.433
5 bml-obart 1.000 1.000 1.000 0.690 0.690 0.431
6 qlearning 1.000 0.998 0.500 0.582 0.581 0.387
6 dwols 1.000 0.998 0.500 0.582 0.581 0.387
6 bml-bp 1.000 0.998 0.502 0.581 0.580 0.387
6 bml-obart 1.000 1.000 0.502 0.580 0.580 0.389
7 qlearning 1.000 1.000 1.000 0.657 0.656 0.403
7 dwols 1.000 1.000 1.000 0.657 0.656 0.403
7 bml-bp 1.000 1.000 1.000 0.655 0.658 0.404
7 bml-obart 1.000 1.000 1.000 0.656 0.654 0.404
8 qlearning 1.000 0.958 0.500 0.430 0.428 0.344
8 dwols 1.000 0.957 0.500 0.430 0.428 0.344
8 bml-bp 1.000 0.968 0.498 0.427 0.431 0.342
8 bml-obart 1.000 1.000 0.499 0.427 0.431 0.343
9 qlearning 1.000 0.956 0.500 0.433 0.430 0.344
9 dwols 1.000 0.955 0.500 0.433 0.430 0.344
9 bml-bp 1.000 0.967 0.498 0.430 0.431 0.343
9 bml-obart 1.000 1.000 0.500 0.430 0.429 0.343
10 qlearning 0.771 0.393 0.508 0.509 0.435 0.436
10 dwols 0.771 0.395 0.508 0.509 0.435 0.436
10 bml-bp 0.771 0.393 0.507 0.505 0.436 0.436
10 bml-obart 0.771 0.641 0.505 0.509 0.494 0.436
11 qlearning 0.998 0.952 0.535 0.527 0.439 0.434
11 dwols 0.998 0.952 0.535 0.527 0.438 0.434
11 bml-bp 0.998 0.953 0.535 0.525 0.438 0.433
11 bml-obart 0.998 0.983 0.534 0.527 0.522 0.431
12 qlearning 0.998 0.955 0.472 0.514 0.422 0.419
12 dwols 0.998 0.951 0.472 0.514 0.423 0.419
12 bml-bp 0.998 0.957 0.475 0.511 0.424 0.418
12 bml-obart 0.998 0.988 0.474 0.513 0.505 0.419
"""


def _parse(text: str, columns) -> dict:
    out = {}
    for line in text.strip().splitlines():
        sc, method, *vals = line.split()
        if len(vals) != len(columns):
            raise ValueError(f"malformed reference row: {line!r}")
        out[(int(sc), method)] = dict(zip(columns, map(float, vals)))
    return out


REFERENCE = {
    "table2": _parse(_TABLE2, PSI_COLUMNS),
    "tab1": _parse(_TAB1, PSI_COLUMNS),
    "tab2": _parse(_TAB2, PSI_COLUMNS),
    "tab4": _parse(_TAB4, VALUE_COLUMNS),
}


def reference_value(table: str, scenario: int, method: str, metric: str, stage: int) -> float:
    """Published value of ``metric`` at ``stage``, e.g. ``("table2", 10, "bml-obart", "mse", 1)``."""
    return REFERENCE[table][(scenario, method)][f"{metric}_{stage}"]
