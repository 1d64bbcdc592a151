"""Step-by-step tour of the pipeline on the slit domain.

Builds the lattice, the jump kernel, the Whitney cover, the partition of unity,
the mass functions and the extension operator, then compares the ambient and
reflected heat kernels against the mixed stable-like envelope.

    python3 demos/pipeline_walkthrough.py [n]
"""
import sys

from reflekt.extension import build_extension, extend, extension_energy_bound, probe_functions
from reflekt.generators import generate_example
from reflekt.heat import main_theorem_experiment
from reflekt.kernel import ScaleFunction, build_jump_kernel
from reflekt.partition import build_eta, build_mass_functions, build_psi, check_mass_functions
from reflekt.space import check_ahlfors, check_doubling
from reflekt.whitney import build_cover, verify_geometry


def main(n: int = 17) -> None:
    sf = ScaleFunction.power(1.5)
    space, domain = generate_example("grid_with_slits", {"n": n})
    print(f"space: {space.n} points, mesh {space.mesh:.4f}, diam {space.diam:.4f}; |D| = {domain.indices.size}")

    dbl = check_doubling(space, domain)
    ahl = check_ahlfors(space, domain)
    print(f"doubling constant {dbl.doubling_constant:.3g}, Ahlfors c_D {ahl.c_D:.3g}")

    kernel = build_jump_kernel(space, sf)
    cover = build_cover(space, domain)
    geo = verify_geometry(cover)
    print(f"Whitney cover: {geo.n_balls} balls, {geo.n_lambda} near the domain, "
          f"3-dilate multiplicity {geo.max_multiplicity[3]}")

    etas = build_eta(kernel, cover)
    pou = build_psi(etas, cover, domain, kernel)
    print(f"partition of unity: max |sum psi - 1| = {pou.sum_error:.1e}, energy constant {pou.constant:.3g}")

    mf = build_mass_functions(space, domain, cover)
    rep = check_mass_functions(mf, cover)
    print(f"mass functions: alpha {mf.alpha:.3g}, integral/ball-mass in {tuple(round(v, 5) for v in rep.integral_ratio)}")

    ext = build_extension(cover, pou, mf)
    for name, u in zip(("one", "dist_a", "dist_b"), probe_functions(space, domain)):
        g = extend(ext, u[domain.indices])
        amb, refl, ratio = extension_energy_bound(ext, kernel, u[domain.indices])
        print(f"  extend({name}): range [{g.min():.3f}, {g.max():.3f}], "
              f"E_1(Eu) / E_1,D(u) = {amb:.3g} / {refl:.3g} = {ratio:.3g}")

    mt = main_theorem_experiment(space, domain, sf, kernel=kernel)
    for label, r in (("ambient", mt.ambient), ("reflected", mt.reflected)):
        lo, hi = r.band
        print(f"{label:9s} p / envelope in [{lo:.3g}, {hi:.3g}] over t in [{r.window[0]:.3g}, {r.window[1]:.3g}]")
    print(f"kappa (reflected / ambient log-width) = {mt.kappa:.3g}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 17)
