#ifndef MCDIFF_FFT_HPP
#define MCDIFF_FFT_HPP

#include "core_types.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace mcdiff::fft {

enum class Direction : int { Forward = FFTW_FORWARD, Backward = FFTW_BACKWARD };

namespace detail {

struct FftwBuffer {
    explicit FftwBuffer(std::size_t n) : size(n), data(fftw_alloc_complex(n)) {}
    ~FftwBuffer() { fftw_free(data); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;

    std::size_t size;
    fftw_complex* data;
};

// FFTW planning is not thread safe; execution on fresh arrays is. Plans are
// created once per (rows, cols, direction) and reused through fftw_execute_dft.
class PlanCache {
public:
    static PlanCache& instance()
    {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(int rows, int cols, Direction dir)
    {
        std::lock_guard lock(mutex_);
        auto key = std::make_tuple(rows, cols, static_cast<int>(dir));
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        FftwBuffer scratch(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
        fftw_plan plan = rows == 1 ? fftw_plan_dft_1d(cols, scratch.data, scratch.data, static_cast<int>(dir),
                                                      FFTW_ESTIMATE)
                                   : fftw_plan_dft_2d(rows, cols, scratch.data, scratch.data,
                                                      static_cast<int>(dir), FFTW_ESTIMATE);
        plans_.emplace(key, plan);
        return plan;
    }

    ~PlanCache()
    {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

private:
    PlanCache() = default;
    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

} // namespace detail

/// Unnormalised in-place DFT over a rows x cols row-major complex array.
inline void transform(std::span<complex> data, std::size_t rows, std::size_t cols, Direction dir)
{
    require(data.size() == rows * cols, ErrorKind::DimensionMismatch, "fft buffer size mismatch");
    fftw_plan plan = detail::PlanCache::instance().get(static_cast<int>(rows), static_cast<int>(cols), dir);
    detail::FftwBuffer buf(data.size());
    std::memcpy(buf.data, data.data(), data.size() * sizeof(complex));
    fftw_execute_dft(plan, buf.data, buf.data);
    std::memcpy(data.data(), buf.data, data.size() * sizeof(complex));
}

} // namespace mcdiff::fft

#endif
