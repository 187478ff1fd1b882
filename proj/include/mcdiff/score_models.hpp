#ifndef MCDIFF_SCORE_MODELS_HPP
#define MCDIFF_SCORE_MODELS_HPP

// Score estimators s(x, i) ~ grad log p_{sigma_i}(x): a closed-form oracle for
// correlated Gaussian priors and a three-layer convolutional network trained
// by denoising score matching.

#include "schedule.hpp"

#include <array>
#include <functional>
#include <memory>
#include <numbers>

namespace mcdiff {

using Channels = std::vector<Image2D>;

inline Channels to_channels(const ModalityPair& pair, std::span<const Modality> order)
{
    Channels out;
    out.reserve(order.size());
    for (Modality m : order) out.push_back(pair.channel(m));
    return out;
}

inline const std::vector<Modality>& joint_modalities()
{
    static const std::vector<Modality> both{Modality::Pet, Modality::Mri};
    return both;
}

/// A score field over the channels listed by modalities(), in that order.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    virtual const std::vector<Modality>& modalities() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual Channels evaluate(std::span<const Image2D> x, int step) const = 0;

    std::size_t channel_count() const { return modalities().size(); }

    ModalityPair evaluate(const ModalityPair& x, int step) const
    {
        require(channel_count() == 2, ErrorKind::InvalidArgument, "pair evaluation needs a joint score model");
        Channels in{x.channel(modalities()[0]), x.channel(modalities()[1])};
        Channels out = evaluate(std::span<const Image2D>(in), step);
        ModalityPair result;
        result.channel(modalities()[0]) = std::move(out[0]);
        result.channel(modalities()[1]) = std::move(out[1]);
        return result;
    }

protected:
    void check_input(std::span<const Image2D> x) const
    {
        require(x.size() == channel_count(), ErrorKind::DimensionMismatch, "score input has wrong channel count");
        for (const Image2D& c : x) {
            require(c.same_shape(x[0]), ErrorKind::DimensionMismatch, "score input channels differ in shape");
            require(c.all_finite(), ErrorKind::NonFiniteValue, "score input contains NaN/Inf");
        }
    }
};

/// Per-pixel bivariate normal prior with constant means; pixels independent.
class GaussianOracle final : public ScoreModel {
public:
    double mean_pet = 0.0, mean_mri = 0.0;
    double std_pet = 1.0, std_mri = 1.0;
    double rho = 0.0;
    NoiseSchedule sched;

    GaussianOracle(double mean_pet_, double mean_mri_, double std_pet_, double std_mri_, double rho_,
                   NoiseSchedule sched_)
        : mean_pet(mean_pet_), mean_mri(mean_mri_), std_pet(std_pet_), std_mri(std_mri_), rho(rho_),
          sched(sched_), modalities_(joint_modalities())
    {
        require(std_pet > 0.0 && std_mri > 0.0, ErrorKind::InvalidArgument, "oracle stds must be positive");
        require(rho > -1.0 && rho < 1.0, ErrorKind::InvalidArgument, "oracle correlation must lie in (-1, 1)");
        validate_schedule(sched);
    }

    /// Marginal prior of one modality (exact for any rho).
    GaussianOracle marginal(Modality m) const
    {
        GaussianOracle out = *this;
        out.modalities_ = {m};
        return out;
    }

    using ScoreModel::evaluate;
    const std::vector<Modality>& modalities() const override { return modalities_; }
    const NoiseSchedule& schedule() const override { return sched; }

    double mean(Modality m) const { return m == Modality::Pet ? mean_pet : mean_mri; }
    double stddev(Modality m) const { return m == Modality::Pet ? std_pet : std_mri; }

    /// Prior covariance [[pp, pm], [pm, mm]] per pixel.
    std::array<double, 3> covariance() const
    {
        return {std_pet * std_pet, rho * std_pet * std_mri, std_mri * std_mri};
    }

    Channels evaluate(std::span<const Image2D> x, int step) const override
    {
        check_input(x);
        const double var = kernel_variance(sched, step);
        Channels out;
        if (modalities_.size() == 1) {
            const Modality m = modalities_[0];
            const double denom = stddev(m) * stddev(m) + var;
            Image2D s(x[0].width(), x[0].height());
            for (std::size_t p = 0; p < s.size(); ++p) s[p] = -(x[0][p] - mean(m)) / denom;
            out.push_back(std::move(s));
            return out;
        }
        // Channel order follows modalities_, which is always (pet, mri) here.
        const auto [cpp, cpm, cmm] = covariance();
        const double a = cpp + var, b = cpm, d = cmm + var;
        const double det = a * d - b * b;
        Image2D sp(x[0].width(), x[0].height()), sm(x[0].width(), x[0].height());
        for (std::size_t p = 0; p < sp.size(); ++p) {
            const double dp = x[0][p] - mean_pet;
            const double dm = x[1][p] - mean_mri;
            sp[p] = -(d * dp - b * dm) / det;
            sm[p] = -(-b * dp + a * dm) / det;
        }
        out.push_back(std::move(sp));
        out.push_back(std::move(sm));
        return out;
    }

private:
    std::vector<Modality> modalities_;
};

/// Architecture: conv3x3(C+1 -> h) -> ReLU -> conv3x3(h -> h) -> ReLU ->
/// conv3x3(h -> C), zero padding, stride 1. Inputs are the channels scaled
/// by 1/sqrt(1 + sigma^2) plus a constant log(sigma) plane; the returned score
/// is the raw output divided by sigma.
///
/// Parameters live in one flat vector in checkpoint order:
/// conv1.weight[h][C+1][3][3], conv1.bias[h], conv2.weight[h][h][3][3],
/// conv2.bias[h], conv3.weight[C][h][3][3], conv3.bias[C].
template <class T>
class BasicConvScoreNet final : public ScoreModel {
public:
    using scalar_type = T;

    BasicConvScoreNet(std::vector<Modality> modalities, std::size_t hidden, NoiseSchedule sched)
        : modalities_(std::move(modalities)), hidden_(hidden), sched_(sched)
    {
        require(!modalities_.empty() && modalities_.size() <= 2, ErrorKind::InvalidArgument,
                "conv score net serves one or two modalities");
        require(hidden_ >= 1, ErrorKind::InvalidArgument, "hidden width must be positive");
        validate_schedule(sched_);
        params_.assign(parameter_count(), T{0});
    }

    /// He-normal weights, zero biases, last layer scaled down.
    void initialize(std::uint64_t seed)
    {
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        const auto fill = [&](std::size_t offset, std::size_t count, double fan_in, double gain) {
            const double scale = gain * std::sqrt(2.0 / fan_in);
            for (std::size_t k = 0; k < count; ++k) params_[offset + k] = static_cast<T>(scale * normal(rng));
        };
        std::fill(params_.begin(), params_.end(), T{0});
        fill(w1_offset(), w1_count(), 9.0 * static_cast<double>(in_channels()), 1.0);
        fill(w2_offset(), w2_count(), 9.0 * static_cast<double>(hidden_), 1.0);
        fill(w3_offset(), w3_count(), 9.0 * static_cast<double>(hidden_), 0.1);
    }

    using ScoreModel::evaluate;
    const std::vector<Modality>& modalities() const override { return modalities_; }
    const NoiseSchedule& schedule() const override { return sched_; }
    std::size_t hidden() const noexcept { return hidden_; }
    std::size_t in_channels() const noexcept { return modalities_.size() + 1; }
    std::size_t out_channels() const noexcept { return modalities_.size(); }

    std::span<T> parameters() noexcept { return params_; }
    std::span<const T> parameters() const noexcept { return params_; }

    std::size_t w1_count() const { return hidden_ * in_channels() * 9; }
    std::size_t w2_count() const { return hidden_ * hidden_ * 9; }
    std::size_t w3_count() const { return out_channels() * hidden_ * 9; }
    std::size_t w1_offset() const { return 0; }
    std::size_t b1_offset() const { return w1_count(); }
    std::size_t w2_offset() const { return b1_offset() + hidden_; }
    std::size_t b2_offset() const { return w2_offset() + w2_count(); }
    std::size_t w3_offset() const { return b2_offset() + hidden_; }
    std::size_t b3_offset() const { return w3_offset() + w3_count(); }
    std::size_t parameter_count() const { return b3_offset() + out_channels(); }

    static double input_scale(double sigma) { return 1.0 / std::sqrt(1.0 + sigma * sigma); }

    /// Activations kept for the backward pass.
    struct Tape {
        std::size_t width = 0, height = 0;
        double sigma = 1.0;
        std::vector<T> input, act1, act2, output; // act* are post-ReLU
    };

    Tape forward(std::span<const Image2D> x, int step) const
    {
        check_input(x);
        Tape tape;
        tape.width = x[0].width();
        tape.height = x[0].height();
        tape.sigma = sigma_at(sched_, step);
        const std::size_t hw = tape.width * tape.height;
        tape.input.resize(in_channels() * hw);
        const double c_in = input_scale(tape.sigma);
        for (std::size_t c = 0; c < out_channels(); ++c)
            for (std::size_t p = 0; p < hw; ++p) tape.input[c * hw + p] = static_cast<T>(x[c][p] * c_in);
        std::fill(tape.input.begin() + static_cast<std::ptrdiff_t>(out_channels() * hw), tape.input.end(),
                  static_cast<T>(std::log(tape.sigma)));

        const std::size_t h = hidden_;
        tape.act1.resize(h * hw);
        tape.act2.resize(h * hw);
        tape.output.resize(out_channels() * hw);
        conv_forward(tape.input.data(), in_channels(), tape, &params_[w1_offset()], &params_[b1_offset()], h,
                     tape.act1.data());
        relu(tape.act1);
        conv_forward(tape.act1.data(), h, tape, &params_[w2_offset()], &params_[b2_offset()], h, tape.act2.data());
        relu(tape.act2);
        conv_forward(tape.act2.data(), h, tape, &params_[w3_offset()], &params_[b3_offset()], out_channels(),
                     tape.output.data());
        return tape;
    }

    /// Raw network output (before the 1/sigma scaling), one image per channel.
    Channels raw_output(std::span<const Image2D> x, int step) const
    {
        return unpack(forward(x, step));
    }

    static Channels scale_raw(Channels raw, double sigma)
    {
        for (Image2D& c : raw) c *= 1.0 / sigma;
        return raw;
    }

    Channels evaluate(std::span<const Image2D> x, int step) const override
    {
        Tape tape = forward(x, step);
        return scale_raw(unpack(tape), tape.sigma);
    }

    /// Accumulates dLoss/dparams into `grad` given dLoss/d(raw output).
    void backward(const Tape& tape, std::span<const T> grad_output, std::span<T> grad) const
    {
        const std::size_t hw = tape.width * tape.height;
        const std::size_t h = hidden_;
        std::vector<T> g2(h * hw, T{0}), g1(h * hw, T{0});

        conv_backward(tape.act2.data(), h, tape, &params_[w3_offset()], out_channels(), grad_output.data(),
                      &grad[w3_offset()], &grad[b3_offset()], g2.data());
        relu_backward(tape.act2, g2);
        conv_backward(tape.act1.data(), h, tape, &params_[w2_offset()], h, g2.data(), &grad[w2_offset()],
                      &grad[b2_offset()], g1.data());
        relu_backward(tape.act1, g1);
        conv_backward(tape.input.data(), in_channels(), tape, &params_[w1_offset()], h, g1.data(),
                      &grad[w1_offset()], &grad[b1_offset()], nullptr);
    }

private:
    Channels unpack(const Tape& tape) const
    {
        const std::size_t hw = tape.width * tape.height;
        Channels out;
        for (std::size_t c = 0; c < out_channels(); ++c) {
            Image2D img(tape.width, tape.height);
            for (std::size_t p = 0; p < hw; ++p) img[p] = static_cast<double>(tape.output[c * hw + p]);
            out.push_back(std::move(img));
        }
        return out;
    }

    static void relu(std::vector<T>& v)
    {
        for (T& a : v) a = a > T{0} ? a : T{0};
    }

    static void relu_backward(const std::vector<T>& activated, std::vector<T>& grad)
    {
        for (std::size_t k = 0; k < grad.size(); ++k)
            if (!(activated[k] > T{0})) grad[k] = T{0};
    }

    // Valid index range of an axis of length n under shift d in {-1, 0, 1}.
    static std::pair<std::size_t, std::size_t> span_for(std::ptrdiff_t d, std::size_t n)
    {
        const std::size_t lo = d < 0 ? 1 : 0;
        const std::size_t hi = d > 0 ? n - 1 : n;
        return {lo, hi};
    }

    static void conv_forward(const T* in, std::size_t cin, const Tape& t, const T* weight, const T* bias,
                             std::size_t cout, T* out)
    {
        const std::size_t w = t.width, hgt = t.height, hw = w * hgt;
        for (std::size_t o = 0; o < cout; ++o) {
            T* dst = out + o * hw;
            std::fill(dst, dst + hw, bias[o]);
            for (std::size_t c = 0; c < cin; ++c) {
                const T* src = in + c * hw;
                const T* k = weight + (o * cin + c) * 9;
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                    const auto [y0, y1] = span_for(dy, hgt);
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const T wk = k[(dy + 1) * 3 + (dx + 1)];
                        const auto [x0, x1] = span_for(dx, w);
                        for (std::size_t y = y0; y < y1; ++y) {
                            T* drow = dst + y * w;
                            const T* srow = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * w;
                            for (std::size_t x = x0; x < x1; ++x)
                                drow[x] += wk * srow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx)];
                        }
                    }
                }
            }
        }
    }

    static void conv_backward(const T* in, std::size_t cin, const Tape& t, const T* weight, std::size_t cout,
                              const T* gout, T* gweight, T* gbias, T* gin)
    {
        const std::size_t w = t.width, hgt = t.height, hw = w * hgt;
        for (std::size_t o = 0; o < cout; ++o) {
            const T* go = gout + o * hw;
            T bsum{0};
            for (std::size_t p = 0; p < hw; ++p) bsum += go[p];
            gbias[o] += bsum;
            for (std::size_t c = 0; c < cin; ++c) {
                const T* src = in + c * hw;
                const T* k = weight + (o * cin + c) * 9;
                T* gk = gweight + (o * cin + c) * 9;
                T* gsrc = gin ? gin + c * hw : nullptr;
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                    const auto [y0, y1] = span_for(dy, hgt);
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
                        const T wk = k[tap];
                        const auto [x0, x1] = span_for(dx, w);
                        T acc{0};
                        for (std::size_t y = y0; y < y1; ++y) {
                            const T* grow = go + y * w;
                            const std::size_t sy = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy);
                            const T* srow = src + sy * w;
                            T* girow = gsrc ? gsrc + sy * w : nullptr;
                            for (std::size_t x = x0; x < x1; ++x) {
                                const std::size_t sx = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx);
                                acc += grow[x] * srow[sx];
                            }
                            if (girow)
                                for (std::size_t x = x0; x < x1; ++x)
                                    girow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx)] +=
                                        wk * grow[x];
                        }
                        gk[tap] += acc;
                    }
                }
            }
        }
    }

    std::vector<Modality> modalities_;
    std::size_t hidden_;
    NoiseSchedule sched_;
    std::vector<T> params_;
};

using ConvScoreNet = BasicConvScoreNet<float>;

/// One denoising-score-matching draw: a noise level and the noisy input.
struct DsmSample {
    int level = 1;
    double variance = 0.0; // sigma_level^2 - sigma_0^2
    Channels clean;
    Channels noisy;
};

/// Levels uniform over {1..N-1}; per sample the level is drawn first, then
/// the noise of each channel in model order.
inline std::vector<DsmSample> draw_dsm_samples(std::span<const ModalityPair> clean,
                                               std::span<const Modality> order, const NoiseSchedule& sched,
                                               std::uint64_t seed)
{
    require(!clean.empty(), ErrorKind::EmptyBatch, "dsm batch is empty");
    Rng rng(seed);
    std::uniform_int_distribution<int> level(1, sched.n_steps - 1);
    std::vector<DsmSample> out;
    out.reserve(clean.size());
    for (const ModalityPair& pair : clean) {
        DsmSample s;
        s.level = level(rng);
        s.variance = kernel_variance(sched, s.level);
        s.clean = to_channels(pair, order);
        const double scale = std::sqrt(s.variance);
        for (const Image2D& c : s.clean) {
            Image2D noisy = c;
            noisy.axpy(scale, standard_normal_like(c, rng));
            s.noisy.push_back(std::move(noisy));
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// mean_b  w(sigma) || s(x_hat, i) + (x_hat - x) / w(sigma) ||^2, w = sigma_i^2 - sigma_0^2.
inline double dsm_loss(const ScoreModel& model, std::span<const ModalityPair> clean, const NoiseSchedule& sched,
                       std::uint64_t seed)
{
    const auto draws = draw_dsm_samples(clean, model.modalities(), sched, seed);
    double total = 0.0;
    for (const DsmSample& s : draws) {
        const Channels score = model.evaluate(std::span<const Image2D>(s.noisy), s.level);
        double sq = 0.0;
        for (std::size_t c = 0; c < score.size(); ++c)
            for (std::size_t p = 0; p < score[c].size(); ++p) {
                const double e = score[c][p] + (s.noisy[c][p] - s.clean[c][p]) / s.variance;
                sq += e * e;
            }
        total += s.variance * sq;
    }
    return total / static_cast<double>(draws.size());
}

/// Loss as in dsm_loss for the same seed, plus its exact parameter gradient.
template <class T>
double dsm_loss_and_gradient(const BasicConvScoreNet<T>& net, std::span<const ModalityPair> clean,
                             const NoiseSchedule& sched, std::uint64_t seed, std::vector<double>& grad)
{
    const auto draws = draw_dsm_samples(clean, net.modalities(), sched, seed);
    grad.assign(net.parameter_count(), 0.0);
    std::vector<T> sample_grad(net.parameter_count());
    const double inv_batch = 1.0 / static_cast<double>(draws.size());
    double total = 0.0;
    for (const DsmSample& s : draws) {
        const auto tape = net.forward(std::span<const Image2D>(s.noisy), s.level);
        const std::size_t hw = tape.width * tape.height;
        std::vector<T> grad_out(tape.output.size());
        double sq = 0.0;
        for (std::size_t c = 0; c < s.noisy.size(); ++c)
            for (std::size_t p = 0; p < hw; ++p) {
                const double score = static_cast<double>(tape.output[c * hw + p]) / tape.sigma;
                const double e = score + (s.noisy[c][p] - s.clean[c][p]) / s.variance;
                sq += e * e;
                grad_out[c * hw + p] = static_cast<T>(2.0 * s.variance * e / tape.sigma * inv_batch);
            }
        total += s.variance * sq;
        std::fill(sample_grad.begin(), sample_grad.end(), T{0});
        net.backward(tape, grad_out, sample_grad);
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += static_cast<double>(sample_grad[k]);
    }
    return total * inv_batch;
}

struct TrainConfig {
    int epochs = 500;
    int batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    /// Cosine decay from learning_rate to final_learning_rate over epochs
    /// [0, first_epoch + epochs); negative keeps the rate constant.
    double final_learning_rate = -1.0;
};

struct TrainResult {
    std::vector<double> epoch_losses;
};

/// Adam on the dsm objective. `first_epoch` continues the numbering of a
/// resumed run; each epoch's shuffling and noise depend only on (seed, epoch).
template <class T>
TrainResult train(BasicConvScoreNet<T>& net, std::span<const ModalityPair> dataset, const TrainConfig& cfg,
                  const NoiseSchedule& sched, int first_epoch = 0,
                  const std::function<void(int, double)>& on_epoch = {})
{
    require(!dataset.empty(), ErrorKind::EmptyDataset, "training dataset is empty");
    require(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorKind::InvalidArgument, "epochs and batch_size must be >= 1");
    require(cfg.learning_rate >= 0.0, ErrorKind::InvalidArgument, "learning rate must be nonnegative");
    require(sched == net.schedule(), ErrorKind::InvalidArgument, "training schedule differs from the network's");

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m(net.parameter_count(), 0.0), v(net.parameter_count(), 0.0), grad;
    long long step = 0;
    TrainResult result;
    std::vector<std::size_t> order(dataset.size());
    std::vector<ModalityPair> batch;
    for (int epoch = first_epoch; epoch < first_epoch + cfg.epochs; ++epoch) {
        Rng epoch_rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1)));
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t k = order.size(); k > 1; --k) {
            std::uniform_int_distribution<std::size_t> pick(0, k - 1);
            std::swap(order[k - 1], order[pick(epoch_rng)]);
        }
        double lr = cfg.learning_rate;
        if (cfg.final_learning_rate >= 0.0) {
            const double t = static_cast<double>(epoch) / static_cast<double>(first_epoch + cfg.epochs);
            lr = cfg.final_learning_rate +
                 0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
        }
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t k = start; k < stop; ++k) batch.push_back(dataset[order[k]]);
            const double loss = dsm_loss_and_gradient(net, std::span<const ModalityPair>(batch), sched, epoch_rng(), grad);
            if (!std::isfinite(loss))
                fail(ErrorKind::DivergenceDetected, "dsm loss became non-finite at epoch " + std::to_string(epoch));
            epoch_total += loss * static_cast<double>(stop - start);

            if (cfg.learning_rate == 0.0) continue;
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            auto params = net.parameters();
            for (std::size_t k = 0; k < params.size(); ++k) {
                m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
                params[k] = static_cast<T>(static_cast<double>(params[k]) - update);
            }
        }
        const double mean = epoch_total / static_cast<double>(dataset.size());
        result.epoch_losses.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    return result;
}

} // namespace mcdiff

#endif
