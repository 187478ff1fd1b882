#ifndef MCDIFF_PHANTOMS_HPP
#define MCDIFF_PHANTOMS_HPP

// Paired ellipse phantoms: both channels share the same ellipse supports but
// carry different per-ellipse contrasts, and the PET channel is blurred.

#include "core_types.hpp"

#include <numbers>
#include <random>

namespace mcdiff {

struct PhantomSpec {
    std::size_t size = 32;
    int n_ellipses = 6;
    std::uint64_t seed = 0;
    double pet_smoothing = 1.0;
    double contrast_jitter = 0.5;
};

inline void validate_phantom_spec(const PhantomSpec& spec)
{
    require(spec.size >= 16, ErrorKind::InvalidArgument, "phantom size must be >= 16");
    require(spec.n_ellipses >= 1, ErrorKind::InvalidArgument, "phantom needs at least one ellipse");
    require(spec.pet_smoothing >= 0.0, ErrorKind::InvalidArgument, "pet_smoothing must be nonnegative");
    require(spec.contrast_jitter >= 0.0 && spec.contrast_jitter <= 1.0, ErrorKind::InvalidArgument,
            "contrast_jitter must lie in [0,1]");
}

struct Ellipse {
    double cx = 0, cy = 0; // normalised coordinates in [-1, 1]
    double a = 1, b = 1;   // semi-axes
    double angle = 0;

    bool contains(double x, double y) const
    {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * c + dy * s) / a;
        const double v = (-dx * s + dy * c) / b;
        return u * u + v * v <= 1.0;
    }
};

/// Separable Gaussian blur with zero extension outside the image.
inline Image2D gaussian_blur(const Image2D& img, double stddev)
{
    if (stddev <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * stddev));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        k[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * t * t / (stddev * stddev));
        total += k[static_cast<std::size_t>(t + radius)];
    }
    for (double& v : k) v /= total;

    const auto w = static_cast<std::ptrdiff_t>(img.width()), h = static_cast<std::ptrdiff_t>(img.height());
    Image2D tmp(img.width(), img.height()), out(img.width(), img.height());
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                const std::ptrdiff_t xx = x + t;
                if (xx >= 0 && xx < w) acc += k[static_cast<std::size_t>(t + radius)] * img(static_cast<std::size_t>(xx), static_cast<std::size_t>(y));
            }
            tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
        }
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                const std::ptrdiff_t yy = y + t;
                if (yy >= 0 && yy < h) acc += k[static_cast<std::size_t>(t + radius)] * tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(yy));
            }
            out(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
        }
    return out;
}

/// The first ellipse is a large body outline; the rest are inner structures
/// whose centres avoid the interiors of earlier inner ellipses. Everything
/// stays inside the inscribed circle so the default detector row covers it.
inline ModalityPair gen_pair(const PhantomSpec& spec)
{
    validate_phantom_spec(spec);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    std::vector<Ellipse> ellipses;
    std::vector<double> mri_level, pet_level;

    Ellipse body;
    body.a = uniform(0.72, 0.86);
    body.b = uniform(0.62, 0.80);
    body.angle = uniform(0.0, std::numbers::pi);
    ellipses.push_back(body);

    for (int k = 1; k < spec.n_ellipses; ++k) {
        Ellipse e;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double r = 0.5 * std::sqrt(unit(rng));
            const double phi = uniform(0.0, 2.0 * std::numbers::pi);
            e.cx = r * std::cos(phi);
            e.cy = r * std::sin(phi);
            const bool clear = std::none_of(ellipses.begin() + 1, ellipses.end(),
                                            [&](const Ellipse& o) { return o.contains(e.cx, e.cy); });
            if (clear) break;
        }
        e.a = uniform(0.08, 0.28);
        e.b = uniform(0.08, 0.28);
        e.angle = uniform(0.0, std::numbers::pi);
        ellipses.push_back(e);
    }

    for (std::size_t k = 0; k < ellipses.size(); ++k) {
        const double mri = k == 0 ? uniform(0.25, 0.5) : uniform(0.2, 1.0);
        const double swapped = 1.2 - mri;
        const double independent = uniform(0.1, 1.0);
        mri_level.push_back(mri);
        pet_level.push_back((1.0 - spec.contrast_jitter) * swapped + spec.contrast_jitter * independent);
    }

    const std::size_t n = spec.size;
    const double half = static_cast<double>(n) / 2.0;
    ModalityPair pair{Image2D(n, n), Image2D(n, n)};
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double px = (static_cast<double>(x) + 0.5 - half) / half;
            const double py = (static_cast<double>(y) + 0.5 - half) / half;
            for (std::size_t k = 0; k < ellipses.size(); ++k)
                if (ellipses[k].contains(px, py)) {
                    pair.mri(x, y) += mri_level[k];
                    pair.pet(x, y) += pet_level[k];
                }
        }
    pair.pet = gaussian_blur(pair.pet, spec.pet_smoothing);

    for (Image2D* img : {&pair.pet, &pair.mri}) {
        const double peak = *std::max_element(img->values().begin(), img->values().end());
        if (peak > 0.0) *img *= 1.0 / peak;
        for (double& v : img->values()) v = std::clamp(v, 0.0, 1.0);
    }
    return pair;
}

} // namespace mcdiff

#endif
