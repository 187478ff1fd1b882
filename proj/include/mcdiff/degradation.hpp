#ifndef MCDIFF_DEGRADATION_HPP
#define MCDIFF_DEGRADATION_HPP

#include "operators.hpp"

#include <random>

namespace mcdiff {

struct DegradeConfig {
    double pet_dose = 100.0;     // expected counts per unit line integral
    double mri_noise_std = 0.0;  // per real/imag component
    SamplingMask mask;
    std::uint64_t seed = 0;
};

/// Counts f_b ~ Poisson(dose * (A u)_b), independently per bin.
inline Sinogram simulate_pet(const Image2D& u, const RadonGeometry& geom, const DegradeConfig& cfg)
{
    require(cfg.pet_dose > 0.0 && std::isfinite(cfg.pet_dose), ErrorKind::InvalidArgument, "pet_dose must be positive");
    for (double v : u.values()) require(v >= 0.0, ErrorKind::NegativeActivity, "PET activity must be nonnegative");
    Sinogram sino = radon_forward(u, geom);
    std::mt19937_64 rng(cfg.seed);
    for (double& bin : sino.values()) {
        const double rate = cfg.pet_dose * bin;
        if (rate <= 0.0) {
            bin = 0.0;
            continue;
        }
        std::poisson_distribution<long long> draw(rate);
        bin = static_cast<double>(draw(rng));
    }
    return sino;
}

/// g = mask(F v + eta), eta complex Gaussian with mri_noise_std per component.
inline KSpaceData simulate_mri(const Image2D& v, const DegradeConfig& cfg)
{
    require(cfg.mri_noise_std >= 0.0, ErrorKind::InvalidArgument, "mri_noise_std must be nonnegative");
    KSpaceData ks = fft2_forward(v);
    if (cfg.mri_noise_std > 0.0) {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> normal(0.0, cfg.mri_noise_std);
        for (complex& c : ks.values) {
            const double re = normal(rng);
            const double im = normal(rng);
            c += complex(re, im);
        }
    }
    return apply_mask(std::move(ks), cfg.mask);
}

} // namespace mcdiff

#endif
