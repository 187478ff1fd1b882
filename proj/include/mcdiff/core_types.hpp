#ifndef MCDIFF_CORE_TYPES_HPP
#define MCDIFF_CORE_TYPES_HPP

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mcdiff {

using complex = std::complex<double>;

/// Row-major real image. Pixel (x, y) lives at values[y * width + x].
class Image2D {
public:
    Image2D() = default;

    Image2D(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), values_(width * height, fill)
    {
        require(width >= 1 && height >= 1, ErrorKind::InvalidArgument, "image dimensions must be positive");
    }

    Image2D(std::size_t width, std::size_t height, std::vector<double> values)
        : width_(width), height_(height), values_(std::move(values))
    {
        require(width >= 1 && height >= 1, ErrorKind::InvalidArgument, "image dimensions must be positive");
        require(values_.size() == width * height, ErrorKind::DimensionMismatch,
                "image value count does not match width*height");
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t x, std::size_t y) { return values_[y * width_ + x]; }
    double operator()(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() & noexcept { return values_; }
    std::span<const double> values() const& noexcept { return values_; }
    std::span<const double> values() && = delete; // would dangle
    const std::vector<double>& storage() const noexcept { return values_; }

    bool same_shape(const Image2D& other) const noexcept
    {
        return width_ == other.width_ && height_ == other.height_;
    }

    bool all_finite() const noexcept
    {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    Image2D& operator+=(const Image2D& rhs)
    {
        check_shape(rhs);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += rhs.values_[i];
        return *this;
    }

    Image2D& operator-=(const Image2D& rhs)
    {
        check_shape(rhs);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= rhs.values_[i];
        return *this;
    }

    Image2D& operator*=(double s)
    {
        for (double& v : values_) v *= s;
        return *this;
    }

    /// this += a * x
    Image2D& axpy(double a, const Image2D& x)
    {
        check_shape(x);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
        return *this;
    }

    friend Image2D operator+(Image2D lhs, const Image2D& rhs) { return lhs += rhs; }
    friend Image2D operator-(Image2D lhs, const Image2D& rhs) { return lhs -= rhs; }
    friend Image2D operator*(double s, Image2D img) { return img *= s; }

    friend bool operator==(const Image2D&, const Image2D&) = default;

private:
    void check_shape(const Image2D& other) const
    {
        require(same_shape(other), ErrorKind::DimensionMismatch, "image shapes differ");
    }

    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> values_;
};

inline double dot(const Image2D& a, const Image2D& b)
{
    require(a.same_shape(b), ErrorKind::DimensionMismatch, "dot: image shapes differ");
    return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

inline double squared_norm(const Image2D& a) { return dot(a, a); }
inline double norm(const Image2D& a) { return std::sqrt(squared_norm(a)); }

enum class Modality { Pet, Mri };

inline std::string to_string(Modality m) { return m == Modality::Pet ? "pet" : "mri"; }

/// The stacked unknown: PET activity and MRI magnitude on a common grid.
struct ModalityPair {
    Image2D pet;
    Image2D mri;

    const Image2D& channel(Modality m) const { return m == Modality::Pet ? pet : mri; }
    Image2D& channel(Modality m) { return m == Modality::Pet ? pet : mri; }

    friend bool operator==(const ModalityPair&, const ModalityPair&) = default;
};

inline const ModalityPair& validate_pair(const ModalityPair& pair)
{
    require(!pair.pet.empty() && !pair.mri.empty(), ErrorKind::InvalidArgument, "pair has an empty channel");
    require(pair.pet.same_shape(pair.mri), ErrorKind::DimensionMismatch,
            "pet and mri grids differ: " + std::to_string(pair.pet.width()) + "x" +
                std::to_string(pair.pet.height()) + " vs " + std::to_string(pair.mri.width()) + "x" +
                std::to_string(pair.mri.height()));
    require(pair.pet.all_finite(), ErrorKind::NonFiniteValue, "pet channel contains NaN/Inf");
    require(pair.mri.all_finite(), ErrorKind::NonFiniteValue, "mri channel contains NaN/Inf");
    return pair;
}

/// PET measurement. Projection `a` occupies the contiguous run
/// values[a * n_detectors, (a + 1) * n_detectors).
class Sinogram {
public:
    Sinogram() = default;

    Sinogram(std::size_t n_detectors, std::size_t n_angles, double fill = 0.0)
        : n_detectors_(n_detectors), n_angles_(n_angles), values_(n_detectors * n_angles, fill)
    {
        require(n_detectors >= 1 && n_angles >= 1, ErrorKind::InvalidArgument, "sinogram dimensions must be positive");
    }

    Sinogram(std::size_t n_detectors, std::size_t n_angles, std::vector<double> values)
        : n_detectors_(n_detectors), n_angles_(n_angles), values_(std::move(values))
    {
        require(n_detectors >= 1 && n_angles >= 1, ErrorKind::InvalidArgument, "sinogram dimensions must be positive");
        require(values_.size() == n_detectors * n_angles, ErrorKind::DimensionMismatch,
                "sinogram value count does not match n_detectors*n_angles");
    }

    std::size_t n_detectors() const noexcept { return n_detectors_; }
    std::size_t n_angles() const noexcept { return n_angles_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator()(std::size_t detector, std::size_t angle) { return values_[angle * n_detectors_ + detector]; }
    double operator()(std::size_t detector, std::size_t angle) const
    {
        return values_[angle * n_detectors_ + detector];
    }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() & noexcept { return values_; }
    std::span<const double> values() const& noexcept { return values_; }
    std::span<const double> values() && = delete;
    std::span<double> projection(std::size_t angle)
    {
        return std::span<double>(values_).subspan(angle * n_detectors_, n_detectors_);
    }
    std::span<const double> projection(std::size_t angle) const
    {
        return std::span<const double>(values_).subspan(angle * n_detectors_, n_detectors_);
    }

    bool same_shape(const Sinogram& o) const noexcept
    {
        return n_detectors_ == o.n_detectors_ && n_angles_ == o.n_angles_;
    }

    friend bool operator==(const Sinogram&, const Sinogram&) = default;

private:
    std::size_t n_detectors_ = 0;
    std::size_t n_angles_ = 0;
    std::vector<double> values_;
};

/// Cartesian undersampling pattern over phase-encode rows of centred k-space.
struct SamplingMask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::size_t> lines; // sorted, unique
    double acceleration = 1.0;
    double center_fraction = 0.0;

    std::vector<bool> row_flags() const
    {
        std::vector<bool> flags(height, false);
        for (std::size_t l : lines) flags[l] = true;
        return flags;
    }

    friend bool operator==(const SamplingMask&, const SamplingMask&) = default;
};

inline std::size_t center_band_rows(std::size_t height, double center_fraction)
{
    return static_cast<std::size_t>(std::ceil(center_fraction * static_cast<double>(height) - 1e-12));
}

inline std::size_t center_band_start(std::size_t height, std::size_t band)
{
    return height / 2 - std::min(band / 2, height / 2);
}

inline void validate_mask(const SamplingMask& mask)
{
    require(mask.width >= 1 && mask.height >= 1, ErrorKind::InvalidArgument, "mask dimensions must be positive");
    require(mask.acceleration >= 1.0, ErrorKind::InvalidArgument, "acceleration must be >= 1");
    require(mask.center_fraction >= 0.0 && mask.center_fraction <= 1.0, ErrorKind::InvalidArgument,
            "center_fraction must lie in [0,1]");
    require(std::is_sorted(mask.lines.begin(), mask.lines.end()) &&
                std::adjacent_find(mask.lines.begin(), mask.lines.end()) == mask.lines.end(),
            ErrorKind::FormatError, "mask lines must be sorted and unique");
    for (std::size_t l : mask.lines)
        require(l < mask.height, ErrorKind::IndexOutOfRange, "mask line outside [0,height)");
}

/// MRI measurement on the centred (DC at row height/2, column width/2) grid.
struct KSpaceData {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<complex> values; // row-major, same layout as Image2D
    std::optional<SamplingMask> mask;

    complex& operator()(std::size_t x, std::size_t y) { return values[y * width + x]; }
    complex operator()(std::size_t x, std::size_t y) const { return values[y * width + x]; }

    double squared_norm() const
    {
        double s = 0.0;
        for (const complex& c : values) s += std::norm(c);
        return s;
    }

    friend bool operator==(const KSpaceData&, const KSpaceData&) = default;
};

/// Geometric noise ladder, indexed 0..n_steps-1 with sigma increasing.
struct NoiseSchedule {
    double sigma_min = 0.1;
    double sigma_max = 348.0;
    int n_steps = 1000;

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

inline void validate_schedule(const NoiseSchedule& s)
{
    require(s.sigma_min > 0.0 && std::isfinite(s.sigma_min), ErrorKind::InvalidArgument, "sigma_min must be positive");
    require(s.sigma_max > s.sigma_min && std::isfinite(s.sigma_max), ErrorKind::InvalidArgument,
            "sigma_max must exceed sigma_min");
    require(s.n_steps >= 2, ErrorKind::InvalidArgument, "schedule needs at least 2 steps");
}

enum class FidelityVariant { FbpResidual, PoissonRatio };

/// Knobs of the joint predictor-corrector sampler. Index 0 of each pair
/// belongs to PET, index 1 to MRI.
struct SamplerConfig {
    int n_steps = 1000;
    int corrector_steps = 1;
    double lambda1 = 1.0, lambda2 = 1.0; // predictor fidelity scales
    double alpha1 = 1.0, alpha2 = 1.0;   // corrector step multipliers
    double beta1 = 1.0, beta2 = 1.0;     // corrector fidelity scales
    double snr1 = 0.16, snr2 = 0.16;
    FidelityVariant fidelity_variant = FidelityVariant::FbpResidual;
    double ratio_clamp = 1e-6;
    bool nonneg_pet = false;
    std::uint64_t seed = 0;
    /// Multiplies every injected Gaussian field; 1 for sampling, 0 turns the
    /// chain into its deterministic drift (diagnostics only).
    double noise_scale = 1.0;

    double lambda(Modality m) const { return m == Modality::Pet ? lambda1 : lambda2; }
    double alpha(Modality m) const { return m == Modality::Pet ? alpha1 : alpha2; }
    double beta(Modality m) const { return m == Modality::Pet ? beta1 : beta2; }
    double snr(Modality m) const { return m == Modality::Pet ? snr1 : snr2; }
};

inline void validate_sampler_config(const SamplerConfig& c, const NoiseSchedule& s)
{
    require(c.n_steps == s.n_steps, ErrorKind::InvalidArgument, "sampler n_steps does not match schedule");
    require(c.corrector_steps >= 0, ErrorKind::InvalidArgument, "corrector_steps must be >= 0");
    require(c.ratio_clamp > 0.0, ErrorKind::InvalidArgument, "ratio_clamp must be positive");
    for (double v : {c.lambda1, c.lambda2, c.alpha1, c.alpha2, c.beta1, c.beta2, c.snr1, c.snr2})
        require(v >= 0.0 && std::isfinite(v), ErrorKind::InvalidArgument, "sampler weights must be nonnegative");
}

} // namespace mcdiff

#endif
