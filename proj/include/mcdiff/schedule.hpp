#ifndef MCDIFF_SCHEDULE_HPP
#define MCDIFF_SCHEDULE_HPP

// Variance-exploding noise ladder, its perturbation kernel and the forward
// Markov chain whose marginals the kernel describes.

#include "core_types.hpp"

#include <random>

namespace mcdiff {

using Rng = std::mt19937_64;

/// Standard normal field with the shape of `like`, drawn in row-major order.
inline Image2D standard_normal_like(const Image2D& like, Rng& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Image2D z(like.width(), like.height());
    for (double& v : z.values()) v = normal(rng);
    return z;
}

/// sigma_i = sigma_min * (sigma_max / sigma_min)^(i / (N - 1)), i in [0, N).
inline double sigma_at(const NoiseSchedule& sched, int i)
{
    validate_schedule(sched);
    require(i >= 0 && i < sched.n_steps, ErrorKind::IndexOutOfRange,
            "noise index " + std::to_string(i) + " outside [0, " + std::to_string(sched.n_steps) + ")");
    if (i == 0) return sched.sigma_min;
    if (i == sched.n_steps - 1) return sched.sigma_max;
    const double frac = static_cast<double>(i) / static_cast<double>(sched.n_steps - 1);
    return sched.sigma_min * std::pow(sched.sigma_max / sched.sigma_min, frac);
}

/// Variance of the perturbation kernel at level i: sigma_i^2 - sigma_0^2.
inline double kernel_variance(const NoiseSchedule& sched, int i)
{
    const double s = sigma_at(sched, i);
    const double s0 = sched.sigma_min;
    return i == 0 ? 0.0 : s * s - s0 * s0;
}

/// x0 + sqrt(sigma_i^2 - sigma_0^2) z; pet channel drawn before mri. Level 0
/// has zero kernel variance and returns x0.
inline ModalityPair perturb(const ModalityPair& x0, const NoiseSchedule& sched, int i, std::uint64_t seed)
{
    require(i >= 0 && i < sched.n_steps, ErrorKind::IndexOutOfRange, "perturb index must lie in [0, N)");
    const double scale = std::sqrt(kernel_variance(sched, i));
    Rng rng(seed);
    ModalityPair out = x0;
    out.pet.axpy(scale, standard_normal_like(x0.pet, rng));
    out.mri.axpy(scale, standard_normal_like(x0.mri, rng));
    return out;
}

/// X_i = X_{i-1} + sqrt(sigma_i^2 - sigma_{i-1}^2) z.
inline ModalityPair forward_chain_step(const ModalityPair& x_prev, const NoiseSchedule& sched, int i,
                                       std::uint64_t seed)
{
    require(i >= 1 && i < sched.n_steps, ErrorKind::IndexOutOfRange, "chain index must lie in [1, N)");
    const double hi = sigma_at(sched, i);
    const double lo = sigma_at(sched, i - 1);
    const double scale = std::sqrt(std::max(0.0, hi * hi - lo * lo));
    Rng rng(seed);
    ModalityPair out = x_prev;
    out.pet.axpy(scale, standard_normal_like(x_prev.pet, rng));
    out.mri.axpy(scale, standard_normal_like(x_prev.mri, rng));
    return out;
}

} // namespace mcdiff

#endif
