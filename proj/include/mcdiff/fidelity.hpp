#ifndef MCDIFF_FIDELITY_HPP
#define MCDIFF_FIDELITY_HPP

// Negative log-likelihoods of the two measurements and their gradients.

#include "operators.hpp"

#include <concepts>

namespace mcdiff {

struct FidelityConfig {
    FidelityVariant variant = FidelityVariant::FbpResidual;
    double ratio_clamp = 1e-6;
    double mri_weight = 1.0;
    /// Expected counts per unit line integral: the PET forward model is pet_scale * A.
    double pet_scale = 1.0;
    RadonGeometry geom;
    SamplingMask mask;
};

inline void validate_fidelity_config(const FidelityConfig& cfg)
{
    require(cfg.ratio_clamp > 0.0, ErrorKind::InvalidArgument, "ratio_clamp must be positive");
    require(cfg.mri_weight > 0.0, ErrorKind::InvalidArgument, "mri_weight must be positive");
    require(cfg.pet_scale > 0.0, ErrorKind::InvalidArgument, "pet_scale must be positive");
}

/// sum_b (s A u)_b - f_b log(max((s A u)_b, clamp))
inline double pet_neg_loglik(const Image2D& u, const Sinogram& f, const FidelityConfig& cfg)
{
    validate_fidelity_config(cfg);
    const Sinogram au = radon_forward(u, cfg.geom);
    require(au.same_shape(f), ErrorKind::GeometryMismatch, "measured sinogram does not match geometry");
    double total = 0.0;
    for (std::size_t b = 0; b < au.size(); ++b) {
        const double expected = cfg.pet_scale * au[b];
        total += expected;
        if (f[b] != 0.0) total -= f[b] * std::log(std::max(expected, cfg.ratio_clamp));
    }
    return total;
}

/// PoissonRatio: s A*(1 - f / max(s A u, clamp)). FbpResidual: Fbp(s A u - f).
inline Image2D pet_grad(const Image2D& u, const Sinogram& f, const FidelityConfig& cfg)
{
    validate_fidelity_config(cfg);
    Sinogram au = radon_forward(u, cfg.geom);
    require(au.same_shape(f), ErrorKind::GeometryMismatch, "measured sinogram does not match geometry");
    if (cfg.variant == FidelityVariant::PoissonRatio) {
        for (std::size_t b = 0; b < au.size(); ++b)
            au[b] = cfg.pet_scale * (1.0 - f[b] / std::max(cfg.pet_scale * au[b], cfg.ratio_clamp));
        return radon_adjoint(au, cfg.geom, u.width());
    }
    for (std::size_t b = 0; b < au.size(); ++b) au[b] = cfg.pet_scale * au[b] - f[b];
    return fbp(au, cfg.geom, u.width());
}

namespace detail {
inline KSpaceData mri_residual(const Image2D& v, const KSpaceData& g, const FidelityConfig& cfg)
{
    require(g.width == v.width() && g.height == v.height(), ErrorKind::DimensionMismatch,
            "k-space and image dimensions differ");
    KSpaceData r = apply_mask(fft2_forward(v), cfg.mask);
    for (std::size_t k = 0; k < r.values.size(); ++k) r.values[k] -= g.values[k];
    return apply_mask(std::move(r), cfg.mask);
}
} // namespace detail

/// (w/2) ||mask(F v) - g||^2
inline double mri_neg_loglik(const Image2D& v, const KSpaceData& g, const FidelityConfig& cfg)
{
    validate_fidelity_config(cfg);
    return 0.5 * cfg.mri_weight * detail::mri_residual(v, g, cfg).squared_norm();
}

/// w Re F*(mask(F v) - g)
inline Image2D mri_grad(const Image2D& v, const KSpaceData& g, const FidelityConfig& cfg)
{
    validate_fidelity_config(cfg);
    Image2D out = ifft2_adjoint(detail::mri_residual(v, g, cfg));
    out *= cfg.mri_weight;
    return out;
}

/// What the samplers need from a likelihood: per-modality gradient and value.
template <class F>
concept Fidelity = requires(const F& fid, Modality m, const Image2D& x) {
    { fid.gradient(m, x) } -> std::same_as<Image2D>;
    { fid.neg_loglik(m, x) } -> std::convertible_to<double>;
};

/// Radon/Poisson likelihood for PET and masked-Fourier/Gaussian for MRI.
/// Either measurement may be absent when only the other modality is sampled.
struct TomographicFidelity {
    FidelityConfig cfg;
    std::optional<Sinogram> sinogram;
    std::optional<KSpaceData> kspace;

    Image2D gradient(Modality m, const Image2D& x) const
    {
        if (m == Modality::Pet) return pet_grad(x, pet_data(), cfg);
        return mri_grad(x, mri_data(), cfg);
    }

    double neg_loglik(Modality m, const Image2D& x) const
    {
        if (m == Modality::Pet) return pet_neg_loglik(x, pet_data(), cfg);
        return mri_neg_loglik(x, mri_data(), cfg);
    }

private:
    const Sinogram& pet_data() const
    {
        require(sinogram.has_value(), ErrorKind::InvalidArgument, "no PET sinogram supplied");
        return *sinogram;
    }
    const KSpaceData& mri_data() const
    {
        require(kspace.has_value(), ErrorKind::InvalidArgument, "no MRI k-space supplied");
        return *kspace;
    }
};

/// Direct noisy observation of every pixel: y = x + N(0, std^2 I).
struct PixelGaussianFidelity {
    ModalityPair observed;
    double std_pet = 1.0;
    double std_mri = 1.0;

    double noise_std(Modality m) const { return m == Modality::Pet ? std_pet : std_mri; }

    Image2D gradient(Modality m, const Image2D& x) const
    {
        Image2D g = x - observed.channel(m);
        g *= 1.0 / (noise_std(m) * noise_std(m));
        return g;
    }

    double neg_loglik(Modality m, const Image2D& x) const
    {
        return 0.5 * squared_norm(x - observed.channel(m)) / (noise_std(m) * noise_std(m));
    }
};

static_assert(Fidelity<TomographicFidelity>);
static_assert(Fidelity<PixelGaussianFidelity>);

} // namespace mcdiff

#endif
