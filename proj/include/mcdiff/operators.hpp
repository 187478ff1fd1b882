#ifndef MCDIFF_OPERATORS_HPP
#define MCDIFF_OPERATORS_HPP

// Forward models and their adjoints: parallel-beam Radon transform for PET,
// centred unitary 2-D DFT with Cartesian row masks for MRI.

#include "core_types.hpp"
#include "fft.hpp"

#include <numbers>
#include <random>

namespace mcdiff {

struct RadonGeometry {
    std::size_t n_detectors = 0;
    std::size_t n_angles = 0;
    std::vector<double> angles; // radians, uniform on [0, pi)
    double detector_spacing = 1.0;

    friend bool operator==(const RadonGeometry&, const RadonGeometry&) = default;
};

/// n_detectors = image width, unit spacing, n_angles uniform on [0, pi).
inline RadonGeometry make_geometry(std::size_t image_width, std::size_t n_angles, double detector_spacing = 1.0)
{
    require(image_width >= 1 && n_angles >= 1, ErrorKind::InvalidArgument, "geometry dimensions must be positive");
    require(detector_spacing > 0.0, ErrorKind::InvalidArgument, "detector spacing must be positive");
    RadonGeometry g;
    g.n_detectors = image_width;
    g.n_angles = n_angles;
    g.detector_spacing = detector_spacing;
    g.angles.resize(n_angles);
    for (std::size_t a = 0; a < n_angles; ++a)
        g.angles[a] = std::numbers::pi * static_cast<double>(a) / static_cast<double>(n_angles);
    return g;
}

/// Angle count for a square image that keeps the 128 detector x 300 angle
/// aspect at other sizes.
inline std::size_t default_angle_count(std::size_t image_width)
{
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(image_width) * 300.0 / 128.0)));
}

inline void validate_geometry(const RadonGeometry& g)
{
    require(g.n_detectors >= 1 && g.n_angles >= 1, ErrorKind::GeometryMismatch, "geometry dimensions must be positive");
    require(g.angles.size() == g.n_angles, ErrorKind::GeometryMismatch, "angle list length differs from n_angles");
    require(g.detector_spacing > 0.0, ErrorKind::GeometryMismatch, "detector spacing must be positive");
    for (std::size_t a = 0; a < g.angles.size(); ++a) {
        require(g.angles[a] >= 0.0 && g.angles[a] < std::numbers::pi, ErrorKind::GeometryMismatch,
                "angles must lie in [0, pi)");
        if (a > 0)
            require(g.angles[a] > g.angles[a - 1], ErrorKind::GeometryMismatch, "angles must be strictly increasing");
    }
}

namespace detail {

// Visits every (pixel, bin, weight) triple of the projector. A pixel centre
// projects to detector coordinate s = x cos(theta) + y sin(theta) and is split
// linearly between the two neighbouring bin centres. The backprojector reads
// the sinogram with the same weights, so the two loops are exact transposes.
template <class Visit>
void for_each_radon_weight(std::size_t size, const RadonGeometry& g, Visit&& visit)
{
    const double centre = (static_cast<double>(size) - 1.0) / 2.0;
    const double det_centre = (static_cast<double>(g.n_detectors) - 1.0) / 2.0;
    const double inv_spacing = 1.0 / g.detector_spacing;
    const auto nd = static_cast<std::ptrdiff_t>(g.n_detectors);
    for (std::size_t a = 0; a < g.n_angles; ++a) {
        const double c = std::cos(g.angles[a]);
        const double s = std::sin(g.angles[a]);
        const std::size_t row = a * g.n_detectors;
        for (std::size_t y = 0; y < size; ++y) {
            const double py = static_cast<double>(y) - centre;
            for (std::size_t x = 0; x < size; ++x) {
                const double px = static_cast<double>(x) - centre;
                const double t = (px * c + py * s) * inv_spacing + det_centre;
                const double lower = std::floor(t);
                const double frac = t - lower;
                const auto d0 = static_cast<std::ptrdiff_t>(lower);
                const std::size_t pixel = y * size + x;
                if (d0 >= 0 && d0 < nd && frac < 1.0)
                    visit(pixel, row + static_cast<std::size_t>(d0), (1.0 - frac) * inv_spacing);
                if (d0 + 1 >= 0 && d0 + 1 < nd && frac > 0.0)
                    visit(pixel, row + static_cast<std::size_t>(d0 + 1), frac * inv_spacing);
            }
        }
    }
}

inline void check_radon_image(const Image2D& img, const RadonGeometry& g)
{
    require(img.width() == img.height(), ErrorKind::NonSquareImage, "radon transform needs a square image");
    validate_geometry(g);
    require(static_cast<double>(g.n_detectors) * g.detector_spacing >= static_cast<double>(img.width()) - 1e-9,
            ErrorKind::GeometryMismatch, "detector array narrower than the image");
}

} // namespace detail

inline Sinogram radon_forward(const Image2D& img, const RadonGeometry& geom)
{
    detail::check_radon_image(img, geom);
    Sinogram out(geom.n_detectors, geom.n_angles);
    auto sino = out.values();
    auto pix = img.values();
    detail::for_each_radon_weight(img.width(), geom, [&](std::size_t p, std::size_t b, double w) {
        sino[b] += w * pix[p];
    });
    return out;
}

/// Exact transpose of radon_forward for a square image of side `size`.
inline Image2D radon_adjoint(const Sinogram& sino, const RadonGeometry& geom, std::size_t size)
{
    validate_geometry(geom);
    require(sino.n_detectors() == geom.n_detectors && sino.n_angles() == geom.n_angles, ErrorKind::GeometryMismatch,
            "sinogram shape does not match geometry");
    require(static_cast<double>(geom.n_detectors) * geom.detector_spacing >= static_cast<double>(size) - 1e-9,
            ErrorKind::GeometryMismatch, "detector array narrower than the image");
    Image2D out(size, size);
    auto pix = out.values();
    auto bins = sino.values();
    detail::for_each_radon_weight(size, geom, [&](std::size_t p, std::size_t b, double w) {
        pix[p] += w * bins[b];
    });
    return out;
}

/// Image side defaults to n_detectors * spacing (the default geometry).
inline Image2D radon_adjoint(const Sinogram& sino, const RadonGeometry& geom)
{
    return radon_adjoint(sino, geom,
                         static_cast<std::size_t>(std::lround(static_cast<double>(geom.n_detectors) * geom.detector_spacing)));
}

/// Ram-Lak filtering of every projection, done in the frequency domain on a
/// zero-padded grid with the band-limited spatial kernel (no DC offset).
inline Sinogram ramp_filter(const Sinogram& sino, double detector_spacing)
{
    const std::size_t nd = sino.n_detectors();
    std::size_t padded = 1;
    while (padded < 2 * nd) padded <<= 1;

    std::vector<complex> kernel(padded, complex{});
    const double tau = detector_spacing;
    kernel[0] = 1.0 / (4.0 * tau * tau);
    for (std::size_t n = 1; n < padded / 2; ++n) {
        if (n % 2 == 1) {
            const double v = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(n * n) * tau * tau);
            kernel[n] = v;
            kernel[padded - n] = v;
        }
    }
    fft::transform(kernel, 1, padded, fft::Direction::Forward);

    Sinogram out(nd, sino.n_angles());
    std::vector<complex> line(padded);
    for (std::size_t a = 0; a < sino.n_angles(); ++a) {
        std::fill(line.begin(), line.end(), complex{});
        auto proj = sino.projection(a);
        for (std::size_t d = 0; d < nd; ++d) line[d] = proj[d];
        fft::transform(line, 1, padded, fft::Direction::Forward);
        for (std::size_t k = 0; k < padded; ++k) line[k] *= kernel[k].real();
        fft::transform(line, 1, padded, fft::Direction::Backward);
        auto dst = out.projection(a);
        for (std::size_t d = 0; d < nd; ++d) dst[d] = tau * line[d].real() / static_cast<double>(padded);
    }
    return out;
}

inline Image2D fbp(const Sinogram& sino, const RadonGeometry& geom, std::size_t size)
{
    validate_geometry(geom);
    require(sino.n_detectors() == geom.n_detectors && sino.n_angles() == geom.n_angles, ErrorKind::GeometryMismatch,
            "sinogram shape does not match geometry");
    Image2D img = radon_adjoint(ramp_filter(sino, geom.detector_spacing), geom, size);
    img *= std::numbers::pi / static_cast<double>(geom.n_angles) * geom.detector_spacing;
    return img;
}

inline Image2D fbp(const Sinogram& sino, const RadonGeometry& geom)
{
    return fbp(sino, geom,
               static_cast<std::size_t>(std::lround(static_cast<double>(geom.n_detectors) * geom.detector_spacing)));
}

// Centred spectrum convention: frequency k of an n-point axis is stored at
// index (k + n/2) mod n, so DC sits at (width/2, height/2).
namespace detail {
inline std::size_t centred_index(std::size_t k, std::size_t n) { return (k + n / 2) % n; }
} // namespace detail

/// Unitary 2-D DFT of a real image; result is unmasked.
inline KSpaceData fft2_forward(const Image2D& img)
{
    const std::size_t w = img.width(), h = img.height();
    std::vector<complex> buf(w * h);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = img[i];
    fft::transform(buf, h, w, fft::Direction::Forward);
    const double scale = 1.0 / std::sqrt(static_cast<double>(w * h));
    KSpaceData ks;
    ks.width = w;
    ks.height = h;
    ks.values.resize(w * h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            ks(detail::centred_index(x, w), detail::centred_index(y, h)) = buf[y * w + x] * scale;
    return ks;
}

/// Adjoint (= inverse) of fft2_forward, keeping the real part.
inline Image2D ifft2_adjoint(const KSpaceData& ks)
{
    const std::size_t w = ks.width, h = ks.height;
    require(w >= 1 && h >= 1 && ks.values.size() == w * h, ErrorKind::DimensionMismatch, "malformed k-space");
    std::vector<complex> buf(w * h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            buf[y * w + x] = ks(detail::centred_index(x, w), detail::centred_index(y, h));
    fft::transform(buf, h, w, fft::Direction::Backward);
    const double scale = 1.0 / std::sqrt(static_cast<double>(w * h));
    Image2D img(w, h);
    for (std::size_t i = 0; i < buf.size(); ++i) img[i] = buf[i].real() * scale;
    return img;
}

inline KSpaceData apply_mask(KSpaceData ks, const SamplingMask& mask)
{
    require(ks.width == mask.width && ks.height == mask.height, ErrorKind::DimensionMismatch,
            "mask and k-space dimensions differ");
    const auto rows = mask.row_flags();
    for (std::size_t y = 0; y < ks.height; ++y)
        if (!rows[y])
            for (std::size_t x = 0; x < ks.width; ++x) ks(x, y) = complex{};
    ks.mask = mask;
    return ks;
}

/// round(height / R) phase-encode rows: a fully sampled centre band of
/// ceil(center_fraction * height) rows plus uniformly drawn extra rows.
inline SamplingMask make_cartesian_mask(std::size_t height, double acceleration, double center_fraction,
                                        std::uint64_t seed, std::size_t width = 0)
{
    require(height >= 1, ErrorKind::InvalidArgument, "mask height must be positive");
    require(acceleration >= 1.0 && std::isfinite(acceleration), ErrorKind::InvalidArgument, "acceleration must be >= 1");
    require(center_fraction >= 0.0 && center_fraction <= 1.0, ErrorKind::InvalidArgument,
            "center_fraction must lie in [0,1]");
    SamplingMask mask;
    mask.width = width == 0 ? height : width;
    mask.height = height;
    mask.acceleration = acceleration;
    mask.center_fraction = center_fraction;

    const auto total = static_cast<std::size_t>(std::lround(static_cast<double>(height) / acceleration));
    const std::size_t band = std::min(center_band_rows(height, center_fraction), height);
    require(total >= band, ErrorKind::InfeasibleMask,
            "round(height/R) = " + std::to_string(total) + " is smaller than the centre band of " +
                std::to_string(band) + " rows");

    const std::size_t start = center_band_start(height, band);
    std::vector<bool> chosen(height, false);
    for (std::size_t r = start; r < start + band; ++r) chosen[r] = true;

    std::vector<std::size_t> candidates;
    for (std::size_t r = 0; r < height; ++r)
        if (!chosen[r]) candidates.push_back(r);
    std::mt19937_64 rng(seed);
    // partial Fisher-Yates
    const std::size_t extra = total - band;
    for (std::size_t k = 0; k < extra; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
        std::swap(candidates[k], candidates[pick(rng)]);
        chosen[candidates[k]] = true;
    }
    for (std::size_t r = 0; r < height; ++r)
        if (chosen[r]) mask.lines.push_back(r);
    return mask;
}

inline SamplingMask full_mask(std::size_t width, std::size_t height)
{
    return make_cartesian_mask(height, 1.0, 0.0, 0, width);
}

} // namespace mcdiff

#endif
