"""A tour of the reverse-mode tape.

Every differentiable operation in this package records onto an ambient
Tape; backward() replays it in reverse and hands back one gradient array
per leaf tensor.  The same finite-difference oracle the test suite uses
is available as a library function, so we can watch the two gradient
routes agree live.
"""

import numpy as np

from sumnet import tensor as T
from sumnet.rng import SplitMix64


def main():
    rng = SplitMix64(11)
    x = T.Tensor(rng.uniforms(6).reshape(2, 3))
    w = T.Tensor(rng.uniforms(3).reshape(3, 1) - 0.5, requires_grad=True)

    # A scalar objective: mean of a sigmoid-squashed affine map.
    with T.Tape() as tape:
        y = T.reduce_mean(T.sigmoid(T.matmul(x, w)))
        grads = T.backward(tape, y)

    print("objective  :", float(y.data))
    print("tape grad  :", grads[w].ravel())

    # Central finite differences, computed without the tape.
    def f(wt):
        wd = np.asarray(wt.data)
        return float(np.mean(1.0 / (1.0 + np.exp(-(x.data @ wd)))))

    fd = T.finite_diff_grad(f, w).data
    print("fd grad    :", fd.ravel())
    print("max rel err:", T.max_rel_err(grads[w], fd))

    # Recorded leaves outside the objective's ancestry get exact zeros.
    unused = T.Tensor(np.ones(4), requires_grad=True)
    with T.Tape() as tape:
        z = T.reduce_sum(T.mul(w, w))
        T.reduce_sum(unused)  # on the tape, but z never saw it
        grads = T.backward(tape, z)
    print("d(w.w)/dw  :", grads[w].ravel(), "(= 2w)")
    print("unused leaf:", grads[unused].ravel())


if __name__ == "__main__":
    main()
