"""Observer kernel for constant reaction against its Bessel closed form.

Also shows how far the variant with z = sqrt(mu (2 - x - y)) lands from the solved kernel.
"""
import numpy as np

from foldbs.kernel_obs import bessel_phi_closed_form, solve_observer_kernel


def main():
    for lam in (0.0, 2.0, 6.0):
        for n in (51, 101, 201):
            ok = solve_observer_kernel(lam, 1.0, 1.0, n)
            x = ok.Phi.nodes
            X, Y = np.meshgrid(x, x, indexing="ij")
            m = Y <= X
            exact = bessel_phi_closed_form(X[m], Y[m], lam, 1.0, 1.0)
            other = bessel_phi_closed_form(X[m], Y[m], lam, 1.0, 1.0, z_form="printed")
            err = np.max(np.abs(ok.Phi.values[m] - exact))
            off = np.max(np.abs(ok.Phi.values[m] - other))
            print(f"lambda={lam:3.1f} n={n:3d}  max|Phi - exact| {err:.2e}  max|Phi - variant| {off:.2e}  "
                  f"phi(0) {ok.phi[0]:.6f}")


if __name__ == "__main__":
    main()
