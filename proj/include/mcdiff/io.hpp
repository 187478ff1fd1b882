#ifndef MCDIFF_IO_HPP
#define MCDIFF_IO_HPP

// MCDIFF01 container: 8-byte magic, uint64 little-endian header length, UTF-8
// JSON header {kind, width, height, channels, dtype, extra}, raw
// little-endian blob. Also 16-bit PGM export and JSON metric reports.

#include "metrics.hpp"
#include "operators.hpp"
#include "score_models.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mcdiff::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

using json = nlohmann::json;

inline constexpr std::string_view magic = "MCDIFF01";

struct Container {
    json header;
    std::vector<std::byte> blob;

    std::string kind() const { return header.at("kind").get<std::string>(); }
    std::size_t width() const { return header.at("width").get<std::size_t>(); }
    std::size_t height() const { return header.at("height").get<std::size_t>(); }
    std::size_t channels() const { return header.at("channels").get<std::size_t>(); }
    std::string dtype() const { return header.at("dtype").get<std::string>(); }
    const json& extra() const { return header.at("extra"); }
};

inline std::size_t dtype_size(const std::string& dtype)
{
    if (dtype == "f32le") return 4;
    if (dtype == "f64le" || dtype == "c64le") return 8;
    if (dtype == "c128le") return 16;
    fail(ErrorKind::FormatError, "unknown dtype '" + dtype + "'");
}

inline void write_container(const std::filesystem::path& path, const std::string& kind, std::size_t width,
                            std::size_t height, std::size_t channels, const std::string& dtype, json extra,
                            std::span<const std::byte> blob)
{
    json header = {{"kind", kind},       {"width", width}, {"height", height},
                   {"channels", channels}, {"dtype", dtype}, {"extra", std::move(extra)}};
    const std::string text = header.dump();
    require(blob.size() == width * height * channels * dtype_size(dtype), ErrorKind::FormatError,
            "blob length does not match header");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    const std::uint64_t len = text.size();
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    require(static_cast<bool>(out), ErrorKind::IoError, "write to '" + path.string() + "' failed");
}

inline Container read_container(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = " in '" + path.string() + "'";
    require(bytes.size() >= magic.size() + 8, ErrorKind::FormatError, "file too short" + where);
    require(std::string_view(bytes.data(), magic.size()) == magic, ErrorKind::FormatError, "bad magic" + where);
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + magic.size(), sizeof len);
    const std::size_t header_start = magic.size() + sizeof len;
    require(len <= bytes.size() - header_start, ErrorKind::FormatError, "truncated header" + where);

    Container c;
    try {
        c.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                               bytes.begin() + static_cast<std::ptrdiff_t>(header_start + len));
        for (const char* key : {"kind", "width", "height", "channels", "dtype", "extra"})
            require(c.header.contains(key), ErrorKind::FormatError, std::string("header lacks '") + key + "'" + where);
        const std::size_t expected = c.width() * c.height() * c.channels() * dtype_size(c.dtype());
        const std::size_t available = bytes.size() - header_start - len;
        require(available == expected, ErrorKind::FormatError,
                "blob holds " + std::to_string(available) + " bytes, header declares " + std::to_string(expected) +
                    where);
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, std::string("malformed header") + where + ": " + e.what());
    }
    c.blob.resize(bytes.size() - header_start - len);
    std::memcpy(c.blob.data(), bytes.data() + header_start + len, c.blob.size());
    return c;
}

inline Container read_container(const std::filesystem::path& path, const std::string& expected_kind)
{
    Container c = read_container(path);
    require(c.kind() == expected_kind, ErrorKind::FormatError,
            "'" + path.string() + "' holds a " + c.kind() + ", expected " + expected_kind);
    return c;
}

namespace detail {

template <class T>
std::vector<std::byte> to_bytes(std::span<const T> values)
{
    std::vector<std::byte> out(values.size_bytes());
    std::memcpy(out.data(), values.data(), out.size());
    return out;
}

template <class T>
std::vector<T> from_bytes(std::span<const std::byte> bytes, std::size_t offset, std::size_t count)
{
    require(offset + count * sizeof(T) <= bytes.size(), ErrorKind::FormatError, "blob shorter than declared");
    std::vector<T> out(count);
    std::memcpy(out.data(), bytes.data() + offset, count * sizeof(T));
    return out;
}

inline std::vector<double> read_reals(const Container& c, std::size_t offset, std::size_t count)
{
    if (c.dtype() == "f64le") return from_bytes<double>(c.blob, offset * 8, count);
    if (c.dtype() == "f32le") {
        auto f = from_bytes<float>(c.blob, offset * 4, count);
        return {f.begin(), f.end()};
    }
    fail(ErrorKind::FormatError, "expected a real dtype, found " + c.dtype());
}

} // namespace detail

inline void save_image(const std::filesystem::path& path, const Image2D& img, json extra = json::object())
{
    write_container(path, "image", img.width(), img.height(), 1, "f64le", std::move(extra),
                    detail::to_bytes(img.values()));
}

inline Image2D load_image(const std::filesystem::path& path)
{
    Container c = read_container(path, "image");
    require(c.channels() == 1, ErrorKind::FormatError, "image container must have one channel");
    return Image2D(c.width(), c.height(), detail::read_reals(c, 0, c.width() * c.height()));
}

/// Channel 0 is PET, channel 1 MRI.
inline void save_pair(const std::filesystem::path& path, const ModalityPair& pair, json extra = json::object())
{
    validate_pair(pair);
    std::vector<double> blob(pair.pet.storage());
    blob.insert(blob.end(), pair.mri.storage().begin(), pair.mri.storage().end());
    write_container(path, "pair", pair.pet.width(), pair.pet.height(), 2, "f64le", std::move(extra),
                    detail::to_bytes(std::span<const double>(blob)));
}

inline ModalityPair load_pair(const std::filesystem::path& path)
{
    Container c = read_container(path, "pair");
    require(c.channels() == 2, ErrorKind::FormatError, "pair container must have two channels");
    const std::size_t n = c.width() * c.height();
    return {Image2D(c.width(), c.height(), detail::read_reals(c, 0, n)),
            Image2D(c.width(), c.height(), detail::read_reals(c, n, n))};
}

inline json geometry_to_json(const RadonGeometry& g)
{
    return {{"n_detectors", g.n_detectors},
            {"n_angles", g.n_angles},
            {"detector_spacing", g.detector_spacing},
            {"angles", g.angles}};
}

inline RadonGeometry geometry_from_json(const json& j)
{
    RadonGeometry g;
    g.n_detectors = j.at("n_detectors").get<std::size_t>();
    g.n_angles = j.at("n_angles").get<std::size_t>();
    g.detector_spacing = j.at("detector_spacing").get<double>();
    g.angles = j.at("angles").get<std::vector<double>>();
    validate_geometry(g);
    return g;
}

/// width = n_detectors, height = n_angles.
inline void save_sinogram(const std::filesystem::path& path, const Sinogram& s, const RadonGeometry& g,
                          json extra = json::object())
{
    extra["geometry"] = geometry_to_json(g);
    write_container(path, "sinogram", s.n_detectors(), s.n_angles(), 1, "f64le", std::move(extra),
                    detail::to_bytes(s.values()));
}

struct LoadedSinogram {
    Sinogram sinogram;
    RadonGeometry geometry;
    json extra;
};

inline LoadedSinogram load_sinogram(const std::filesystem::path& path)
{
    Container c = read_container(path, "sinogram");
    LoadedSinogram out{Sinogram(c.width(), c.height(), detail::read_reals(c, 0, c.width() * c.height())),
                       {}, c.extra()};
    try {
        out.geometry = geometry_from_json(c.extra().at("geometry"));
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, "bad sinogram geometry in '" + path.string() + "': " + e.what());
    }
    require(out.geometry.n_detectors == c.width() && out.geometry.n_angles == c.height(), ErrorKind::FormatError,
            "sinogram geometry disagrees with its shape");
    return out;
}

inline json mask_to_json(const SamplingMask& m)
{
    return {{"width", m.width},
            {"height", m.height},
            {"lines", m.lines},
            {"acceleration", m.acceleration},
            {"center_fraction", m.center_fraction}};
}

inline SamplingMask mask_from_json(const json& j)
{
    SamplingMask m;
    m.width = j.at("width").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.lines = j.at("lines").get<std::vector<std::size_t>>();
    m.acceleration = j.at("acceleration").get<double>();
    m.center_fraction = j.at("center_fraction").get<double>();
    validate_mask(m);
    return m;
}

/// Blob is the 0/1 indicator of sampled k-space locations; the header's
/// extra.mask carries the exact line list.
inline void save_mask(const std::filesystem::path& path, const SamplingMask& m, json extra = json::object())
{
    extra["mask"] = mask_to_json(m);
    std::vector<double> indicator(m.width * m.height, 0.0);
    for (std::size_t l : m.lines)
        std::fill_n(indicator.begin() + static_cast<std::ptrdiff_t>(l * m.width), m.width, 1.0);
    write_container(path, "mask", m.width, m.height, 1, "f64le", std::move(extra),
                    detail::to_bytes(std::span<const double>(indicator)));
}

inline SamplingMask load_mask(const std::filesystem::path& path)
{
    Container c = read_container(path, "mask");
    try {
        SamplingMask m = mask_from_json(c.extra().at("mask"));
        require(m.width == c.width() && m.height == c.height(), ErrorKind::FormatError, "mask shape mismatch");
        return m;
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, "bad mask header in '" + path.string() + "': " + e.what());
    }
}

/// Centred k-space as complex doubles; the mask (if any) rides in extra.mask.
inline void save_kspace(const std::filesystem::path& path, const KSpaceData& ks, json extra = json::object())
{
    if (ks.mask) extra["mask"] = mask_to_json(*ks.mask);
    write_container(path, "kspace", ks.width, ks.height, 1, "c128le", std::move(extra),
                    detail::to_bytes(std::span<const complex>(ks.values)));
}

inline KSpaceData load_kspace(const std::filesystem::path& path)
{
    Container c = read_container(path, "kspace");
    KSpaceData ks;
    ks.width = c.width();
    ks.height = c.height();
    if (c.dtype() == "c128le") {
        ks.values = detail::from_bytes<complex>(c.blob, 0, ks.width * ks.height);
    } else if (c.dtype() == "c64le") {
        auto f = detail::from_bytes<std::complex<float>>(c.blob, 0, ks.width * ks.height);
        ks.values.assign(f.begin(), f.end());
    } else {
        fail(ErrorKind::FormatError, "k-space dtype must be complex, found " + c.dtype());
    }
    if (c.extra().contains("mask")) {
        try {
            ks.mask = mask_from_json(c.extra().at("mask"));
        } catch (const json::exception& e) {
            fail(ErrorKind::FormatError, "bad k-space mask in '" + path.string() + "': " + e.what());
        }
    }
    return ks;
}

inline json schedule_to_json(const NoiseSchedule& s)
{
    return {{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"n_steps", s.n_steps}};
}

inline NoiseSchedule schedule_from_json(const json& j)
{
    NoiseSchedule s;
    s.sigma_min = j.at("sigma_min").get<double>();
    s.sigma_max = j.at("sigma_max").get<double>();
    s.n_steps = j.at("n_steps").get<int>();
    validate_schedule(s);
    return s;
}

struct CheckpointInfo {
    std::uint64_t seed = 0;
    int epochs_completed = 0;
};

/// Weights as f32le in declared parameter order (see BasicConvScoreNet).
inline void save_checkpoint(const std::filesystem::path& path, const ConvScoreNet& net, const CheckpointInfo& info)
{
    json mods = json::array();
    for (Modality m : net.modalities()) mods.push_back(to_string(m));
    json extra = {{"architecture", "conv3x3-relu-conv3x3-relu-conv3x3"},
                  {"hidden", net.hidden()},
                  {"modalities", mods},
                  {"conditioning", "input/sqrt(1+sigma^2), log(sigma) plane, output/sigma"},
                  {"schedule", schedule_to_json(net.schedule())},
                  {"seed", info.seed},
                  {"epochs_completed", info.epochs_completed}};
    write_container(path, "checkpoint", net.parameter_count(), 1, 1, "f32le", std::move(extra),
                    detail::to_bytes(net.parameters()));
}

struct LoadedCheckpoint {
    ConvScoreNet net;
    CheckpointInfo info;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    Container c = read_container(path, "checkpoint");
    require(c.dtype() == "f32le", ErrorKind::FormatError, "checkpoint weights must be f32le");
    try {
        const json& x = c.extra();
        std::vector<Modality> mods;
        for (const auto& m : x.at("modalities")) {
            const auto name = m.get<std::string>();
            require(name == "pet" || name == "mri", ErrorKind::FormatError, "unknown modality '" + name + "'");
            mods.push_back(name == "pet" ? Modality::Pet : Modality::Mri);
        }
        ConvScoreNet net(mods, x.at("hidden").get<std::size_t>(), schedule_from_json(x.at("schedule")));
        require(net.parameter_count() == c.width(), ErrorKind::FormatError,
                "checkpoint weight count does not match its architecture");
        auto w = detail::from_bytes<float>(c.blob, 0, c.width());
        std::copy(w.begin(), w.end(), net.parameters().begin());
        return {std::move(net), {x.at("seed").get<std::uint64_t>(), x.at("epochs_completed").get<int>()}};
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, "bad checkpoint header in '" + path.string() + "': " + e.what());
    }
}

/// Binary 16-bit PGM (P5, big-endian samples), min-max scaled to [0, 65535];
/// a constant image maps to 0.
inline void export_pgm(const std::filesystem::path& path, const Image2D& img)
{
    const auto [lo_it, hi_it] = std::minmax_element(img.values().begin(), img.values().end());
    const double lo = *lo_it, range = *hi_it - *lo_it;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    out << "P5\n" << img.width() << ' ' << img.height() << "\n65535\n";
    for (double v : img.values()) {
        const long q = range > 0.0 ? std::lround((v - lo) / range * 65535.0) : 0;
        const auto s = static_cast<std::uint16_t>(std::clamp(q, 0L, 65535L));
        const char bytes[2] = {static_cast<char>(s >> 8), static_cast<char>(s & 0xFF)};
        out.write(bytes, 2);
    }
    require(static_cast<bool>(out), ErrorKind::IoError, "write to '" + path.string() + "' failed");
}

struct PgmImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint16_t> samples;
};

inline PgmImage read_pgm16(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path.string() + "'");
    std::string tag;
    int maxval = 0;
    PgmImage img;
    in >> tag >> img.width >> img.height >> maxval;
    require(tag == "P5" && maxval == 65535, ErrorKind::FormatError, "not a 16-bit P5 PGM");
    in.get();
    img.samples.resize(img.width * img.height);
    for (auto& s : img.samples) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        require(static_cast<bool>(in), ErrorKind::FormatError, "truncated PGM");
        s = static_cast<std::uint16_t>((b[0] << 8) | b[1]);
    }
    return img;
}

/// Infinite PSNR (identical images) is written as the string "inf".
inline json metrics_to_json(const ModalityMetrics& m)
{
    json psnr = std::isinf(m.psnr) ? json("inf") : json(m.psnr);
    return {{"psnr", psnr}, {"ssim", m.ssim}, {"nmse", m.nmse}};
}

inline std::uint64_t fnv1a(std::string_view text)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

} // namespace mcdiff::io

#endif
