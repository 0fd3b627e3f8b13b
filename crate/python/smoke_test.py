"""Smoke test for the surftrap_py extension.

Build first:
    cargo build -p surftrap-py --release --features extension-module
then run:
    python3 python/smoke_test.py
"""

import importlib.util
import math
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent

SMALL = """
[mesh]
resolution = 4.0

[load]
from = 200.0
to = 400.0
points = 3
trials = 6
grid_spacing = 0.00025
escape_min = [-0.0015, -0.0015, 0.0001]
escape_max = [0.0015, 0.0015, 0.002]

[integrator]
max_rf_periods = 150
capture_window_periods = 50
capture_radius = 0.001
"""


def import_extension():
    candidates = [os.environ.get("SURFTRAP_PY_LIB")]
    candidates += [str(ROOT / "target" / p / "libsurftrap_py.so") for p in ("release", "debug")]
    lib = next((c for c in candidates if c and os.path.exists(c)), None)
    if lib is None:
        sys.exit("libsurftrap_py.so not found; build it with cargo first")
    tmp = tempfile.mkdtemp()
    dst = os.path.join(tmp, "surftrap_py.so")
    shutil.copy(lib, dst)
    spec = importlib.util.spec_from_file_location("surftrap_py", dst)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    st = import_extension()

    layout = st.Layout.default()
    assert layout.violations() == [], layout.violations()
    assert st.Layout.from_json(layout.to_json()).names() == layout.names()

    cfg = st.Config()
    cfg.rf_amplitude = 600.0
    assert "rf_amplitude = 600" in cfg.to_toml()
    try:
        st.Config("[drive]\nvolts = 1\n")
    except ValueError as e:
        assert "error[config]" in str(e)
    else:
        raise AssertionError("bad config accepted")

    a = st.Trap(cfg).analyze()
    assert abs(a.height / 0.8e-3 - 1) < 0.05, a
    assert a.depth_ev > 0 and a.stable
    print(a)

    shots = list(range(1, 121))
    signal = [100 * math.exp(-n / 30) + 5 for n in shots]
    fit = st.fit_decay(shots, signal, "synthetic")
    assert abs(fit.durability / 30 - 1) < 1e-6, fit
    print(fit)

    small = st.Config(SMALL)
    small.trials = 4
    one = st.load(small, "eimpact", workers=1)
    two = st.load(small, "eimpact", workers=2)
    assert one.to_csv() == two.to_csv()
    assert one.kind == "eimpact" and len(one.rows()) == 3
    back = st.LoadResult.from_csv(one.to_csv())
    assert back.rows() == one.rows()
    print("smoke test passed")


if __name__ == "__main__":
    main()
