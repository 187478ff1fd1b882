#ifndef MCDIFF_METRICS_HPP
#define MCDIFF_METRICS_HPP

#include "core_types.hpp"

#include <cstdio>
#include <limits>

namespace mcdiff {

namespace detail {
inline void check_metric_shapes(const Image2D& x, const Image2D& ref)
{
    require(x.same_shape(ref), ErrorKind::DimensionMismatch, "metric inputs differ in shape");
}

inline double value_range(const Image2D& img)
{
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    return *hi - *lo;
}
} // namespace detail

/// 20 log10(peak / rmse) with peak = max(ref) - min(ref); +inf when x == ref.
inline double psnr(const Image2D& x, const Image2D& ref)
{
    detail::check_metric_shapes(x, ref);
    double sq = 0.0;
    for (std::size_t p = 0; p < x.size(); ++p) {
        const double d = x[p] - ref[p];
        sq += d * d;
    }
    if (sq == 0.0) return std::numeric_limits<double>::infinity();
    const double peak = detail::value_range(ref);
    require(peak > 0.0, ErrorKind::ZeroReference, "psnr reference has zero dynamic range");
    const double mse = sq / static_cast<double>(x.size());
    return 20.0 * std::log10(peak / std::sqrt(mse));
}

/// ||x - ref||^2 / ||ref||^2
inline double nmse(const Image2D& x, const Image2D& ref)
{
    detail::check_metric_shapes(x, ref);
    const double denom = squared_norm(ref);
    require(denom > 0.0, ErrorKind::ZeroReference, "nmse reference is identically zero");
    return squared_norm(x - ref) / denom;
}

struct SsimParams {
    int window = 11;
    double gaussian_std = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    /// <= 0 means: use max(ref) - min(ref).
    double dynamic_range = 0.0;

    std::vector<double> weights() const
    {
        std::vector<double> w(static_cast<std::size_t>(window * window));
        const double c = (window - 1) / 2.0;
        double total = 0.0;
        for (int y = 0; y < window; ++y)
            for (int x = 0; x < window; ++x) {
                const double dx = x - c, dy = y - c;
                const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * gaussian_std * gaussian_std));
                w[static_cast<std::size_t>(y * window + x)] = v;
                total += v;
            }
        for (double& v : w) v /= total;
        return w;
    }
};

/// Mean over all fully contained windows of the Gaussian-weighted SSIM map.
inline double ssim(const Image2D& x, const Image2D& ref, const SsimParams& p = {})
{
    detail::check_metric_shapes(x, ref);
    const auto win = static_cast<std::size_t>(p.window);
    require(x.width() >= win && x.height() >= win, ErrorKind::ImageTooSmall,
            "ssim needs images at least as large as the window");
    const double range = p.dynamic_range > 0.0 ? p.dynamic_range : detail::value_range(ref);
    const double c1 = (p.k1 * range) * (p.k1 * range);
    const double c2 = (p.k2 * range) * (p.k2 * range);
    const auto w = p.weights();

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t oy = 0; oy + win <= x.height(); ++oy)
        for (std::size_t ox = 0; ox + win <= x.width(); ++ox) {
            double mx = 0, mr = 0;
            for (std::size_t wy = 0; wy < win; ++wy)
                for (std::size_t wx = 0; wx < win; ++wx) {
                    const double k = w[wy * win + wx];
                    mx += k * x(ox + wx, oy + wy);
                    mr += k * ref(ox + wx, oy + wy);
                }
            double vx = 0, vr = 0, cov = 0;
            for (std::size_t wy = 0; wy < win; ++wy)
                for (std::size_t wx = 0; wx < win; ++wx) {
                    const double k = w[wy * win + wx];
                    const double dx = x(ox + wx, oy + wy) - mx;
                    const double dr = ref(ox + wx, oy + wy) - mr;
                    vx += k * dx * dx;
                    vr += k * dr * dr;
                    cov += k * dx * dr;
                }
            total += ((2 * mx * mr + c1) * (2 * cov + c2)) / ((mx * mx + mr * mr + c1) * (vx + vr + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0; // population

    /// "mean±std", four decimals.
    std::string format() const
    {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.4f±%.4f", mean, stddev);
        return buf;
    }
};

inline Aggregate aggregate(std::span<const double> values)
{
    require(!values.empty(), ErrorKind::EmptyList, "cannot aggregate an empty list");
    Aggregate a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    return a;
}

struct ModalityMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double nmse = 0.0;
};

inline ModalityMetrics evaluate_image(const Image2D& x, const Image2D& ref, const SsimParams& p = {})
{
    return {psnr(x, ref), ssim(x, ref, p), nmse(x, ref)};
}

} // namespace mcdiff

#endif
