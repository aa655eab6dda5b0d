import os
import subprocess
import sys


def run(env_value):
    env = dict(os.environ, COMPNET_DISABLE_NUMBA=env_value)
    code = ("from compnet import _accel, kernels;"
            "print(_accel.backend_name(), kernels.admm_sweep is kernels.admm_sweep_numpy,"
            " kernels.weber_solve is kernels.weber_solve_numpy)")
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                          text=True, check=True).stdout.split()


def test_env_flag_selects_numpy():
    assert run("1") == ["numpy", "True", "True"]
    assert run("0") == ["numba", "False", "False"]
