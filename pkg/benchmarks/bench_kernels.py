"""Compare the compiled LSTM kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Both implementations are imported directly, so the environment's backend
selection does not matter.  Outputs are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from earlyrec import _lstm_py

try:
    from earlyrec import _lstm_ext
except ImportError:
    _lstm_ext = None

SHAPES = [(20, 16), (50, 64), (100, 64), (200, 128)]


def _inputs(T, H, rng):
    xproj = rng.normal(0.0, 1.0, size=(T, 4 * H))
    Wh = rng.uniform(-1.0, 1.0, size=(4 * H, H)) / np.sqrt(H)
    dh = rng.normal(0.0, 1.0, size=(T, H))
    return xproj, Wh, dh


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    if _lstm_ext is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"{'T':>5} {'H':>5} {'kernel':>9} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for T, H in SHAPES:
        xproj, Wh, dh = _inputs(T, H, rng)
        ref = _lstm_py.lstm_forward(xproj, Wh)
        got = _lstm_ext.lstm_forward(xproj, Wh)
        assert all(np.allclose(a, b, rtol=0, atol=1e-12) for a, b in zip(ref, got))
        assert np.allclose(_lstm_py.lstm_backward(*ref[:2], Wh, dh),
                           _lstm_ext.lstm_backward(*got[:2], Wh, dh), rtol=0, atol=1e-12)
        cases = {
            "forward": (lambda: _lstm_py.lstm_forward(xproj, Wh), lambda: _lstm_ext.lstm_forward(xproj, Wh)),
            "backward": (lambda: _lstm_py.lstm_backward(ref[0], ref[1], Wh, dh),
                         lambda: _lstm_ext.lstm_backward(ref[0], ref[1], Wh, dh)),
        }
        for name, (py_fn, ext_fn) in cases.items():
            t_py, t_ext = _time(py_fn, args.repeat), _time(ext_fn, args.repeat)
            print(f"{T:>5} {H:>5} {name:>9} {t_py:>10.3f} {t_ext:>10.3f} {t_py / t_ext:>7.1f}x")


if __name__ == "__main__":
    main()
