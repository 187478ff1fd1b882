#include "test_support.hpp"

using namespace mcdiff;
using namespace mcdiff::testing;

namespace {

const NoiseSchedule small_sched{0.01, 10.0, 50};

// log N(x; m, S) for a 2x2 covariance S, written out directly
double log_density(double xp, double xm, double mp, double mm, double spp, double spm, double smm)
{
    const double det = spp * smm - spm * spm;
    const double dp = xp - mp, dm = xm - mm;
    const double quad = (smm * dp * dp - 2.0 * spm * dp * dm + spp * dm * dm) / det;
    return -0.5 * quad - 0.5 * std::log(det) - std::log(2.0 * std::numbers::pi);
}

ModalityPair sample_prior(const GaussianOracle& o, std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    ModalityPair p{Image2D(n, n), Image2D(n, n)};
    for (std::size_t k = 0; k < n * n; ++k) {
        const double a = normal(rng), b = normal(rng);
        p.pet[k] = o.mean_pet + o.std_pet * a;
        p.mri[k] = o.mean_mri + o.std_mri * (o.rho * a + std::sqrt(1.0 - o.rho * o.rho) * b);
    }
    return p;
}

// Returns the exact DSM target for the i-th evaluation of a batch.
class TargetModel final : public ScoreModel {
public:
    TargetModel(std::vector<DsmSample> draws, NoiseSchedule s) : draws_(std::move(draws)), sched_(s) {}
    const std::vector<Modality>& modalities() const override { return joint_modalities(); }
    const NoiseSchedule& schedule() const override { return sched_; }
    using ScoreModel::evaluate;
    Channels evaluate(std::span<const Image2D> x, int step) const override
    {
        const DsmSample& d = draws_.at(calls_++);
        EXPECT_EQ(step, d.level);
        Channels out;
        for (std::size_t c = 0; c < x.size(); ++c) out.push_back((-1.0 / d.variance) * (x[c] - d.clean[c]));
        return out;
    }

private:
    std::vector<DsmSample> draws_;
    NoiseSchedule sched_;
    mutable std::size_t calls_ = 0;
};

class ZeroModel final : public ScoreModel {
public:
    explicit ZeroModel(NoiseSchedule s) : sched_(s) {}
    const std::vector<Modality>& modalities() const override { return joint_modalities(); }
    const NoiseSchedule& schedule() const override { return sched_; }
    using ScoreModel::evaluate;
    Channels evaluate(std::span<const Image2D> x, int) const override
    {
        return Channels(x.size(), Image2D(x[0].width(), x[0].height()));
    }

private:
    NoiseSchedule sched_;
};

double cosine(const Channels& a, const Channels& b)
{
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        ab += dot(a[c], b[c]);
        aa += squared_norm(a[c]);
        bb += squared_norm(b[c]);
    }
    return ab / std::sqrt(aa * bb);
}

} // namespace

TEST(GaussianOracle, VanishesAtMean)
{
    const GaussianOracle o(0.3, -0.2, 1.0, 2.0, 0.5, small_sched);
    const ModalityPair m{Image2D(4, 4, 0.3), Image2D(4, 4, -0.2)};
    for (int i : {0, 10, 49}) {
        const ModalityPair s = o.evaluate(m, i);
        EXPECT_EQ(norm(s.pet), 0.0);
        EXPECT_EQ(norm(s.mri), 0.0);
    }
}

TEST(GaussianOracle, UncorrelatedChannelsDecouple)
{
    std::mt19937_64 rng(1);
    const GaussianOracle o(0.5, 1.0, 0.7, 1.3, 0.0, small_sched);
    const ModalityPair x{random_image(5, 5, rng), random_image(5, 5, rng)};
    const int i = 20;
    const double v = kernel_variance(small_sched, i);
    const ModalityPair s = o.evaluate(x, i);
    for (std::size_t k = 0; k < 25; ++k) {
        EXPECT_NEAR(s.pet[k], -(x.pet[k] - 0.5) / (0.49 + v), 1e-14);
        EXPECT_NEAR(s.mri[k], -(x.mri[k] - 1.0) / (1.69 + v), 1e-14);
    }
}

TEST(GaussianOracle, MatchesExplicitInverse)
{
    // sigma chosen so that sigma_i^2 - sigma_0^2 = 0.25 at i = 1
    const NoiseSchedule s{0.1, std::sqrt(0.26), 2};
    ASSERT_NEAR(kernel_variance(s, 1), 0.25, 1e-15);
    const GaussianOracle o(0.0, 0.0, 1.0, 1.0, 0.8, s);
    ModalityPair x{Image2D(1, 1, 1.0), Image2D(1, 1, 0.0)};
    const ModalityPair out = o.evaluate(x, 1);
    // (C + 0.25 I) = [[1.25, 0.8], [0.8, 1.25]], det = 0.9225
    EXPECT_NEAR(out.pet[0], -1.25 / 0.9225, 1e-12);
    EXPECT_NEAR(out.mri[0], 0.8 / 0.9225, 1e-12);
}

TEST(GaussianOracle, MatchesLogDensityFiniteDifferences)
{
    std::mt19937_64 rng(2);
    const GaussianOracle o(0.2, -0.4, 0.8, 1.5, -0.6, small_sched);
    const ModalityPair x{random_image(3, 3, rng, -2, 2), random_image(3, 3, rng, -2, 2)};
    for (int i : {0, 7, 30, 49}) {
        const double v = kernel_variance(small_sched, i);
        const auto [cpp, cpm, cmm] = o.covariance();
        const ModalityPair s = o.evaluate(x, i);
        const double h = 1e-5;
        for (std::size_t k = 0; k < 9; ++k) {
            const auto lp = [&](double dp, double dm) {
                return log_density(x.pet[k] + dp, x.mri[k] + dm, 0.2, -0.4, cpp + v, cpm, cmm + v);
            };
            EXPECT_NEAR(s.pet[k], (lp(h, 0) - lp(-h, 0)) / (2 * h), 1e-6);
            EXPECT_NEAR(s.mri[k], (lp(0, h) - lp(0, -h)) / (2 * h), 1e-6);
        }
    }
}

TEST(GaussianOracle, MarginalIsSingleChannelScore)
{
    std::mt19937_64 rng(3);
    const GaussianOracle o(0.5, 1.0, 0.7, 1.3, 0.9, small_sched);
    const GaussianOracle mri = o.marginal(Modality::Mri);
    ASSERT_EQ(mri.modalities(), std::vector<Modality>{Modality::Mri});
    const Channels x{random_image(4, 4, rng)};
    const Channels s = mri.evaluate(std::span<const Image2D>(x), 5);
    const double v = kernel_variance(small_sched, 5);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(s[0][k], -(x[0][k] - 1.0) / (1.69 + v), 1e-14);
    expect_error([] { GaussianOracle(0, 0, 1, 1, 1.0, NoiseSchedule{}); }, ErrorKind::InvalidArgument);
}

TEST(ConvScoreNet, ZeroWeightsGiveZeroScore)
{
    std::mt19937_64 rng(4);
    const ConvScoreNet net(joint_modalities(), 8, small_sched);
    const ModalityPair x{random_image(7, 5, rng), random_image(7, 5, rng)};
    const ModalityPair s = net.evaluate(x, 10);
    EXPECT_EQ(norm(s.pet), 0.0);
    EXPECT_EQ(norm(s.mri), 0.0);
}

TEST(ConvScoreNet, ShapePreservedForAnyWidth)
{
    std::mt19937_64 rng(5);
    for (std::size_t h : {1u, 3u, 8u}) {
        ConvScoreNet net(joint_modalities(), h, small_sched);
        net.initialize(h);
        const ModalityPair x{random_image(9, 6, rng), random_image(9, 6, rng)};
        const ModalityPair s = net.evaluate(x, 3);
        EXPECT_TRUE(s.pet.same_shape(x.pet));
        EXPECT_TRUE(s.mri.same_shape(x.mri));
        EXPECT_TRUE(s.pet.all_finite() && s.mri.all_finite());
        EXPECT_EQ(net.parameter_count(), h * 3 * 9 + h + h * h * 9 + h + 2 * h * 9 + 2);
    }
    ConvScoreNet single({Modality::Pet}, 4, small_sched);
    EXPECT_EQ(single.in_channels(), 2u);
    EXPECT_EQ(single.out_channels(), 1u);
}

TEST(ConvScoreNet, ScoreIsRawOutputOverSigma)
{
    std::mt19937_64 rng(6);
    ConvScoreNet net(joint_modalities(), 4, small_sched);
    net.initialize(1);
    const Channels x{random_image(6, 6, rng), random_image(6, 6, rng)};
    const Channels raw = net.raw_output(std::span<const Image2D>(x), 12);
    const Channels s1 = ConvScoreNet::scale_raw(raw, 0.8), s2 = ConvScoreNet::scale_raw(raw, 1.6);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_LT(norm(s2[c] - 0.5 * s1[c]), 1e-15 * norm(s1[c]));
    const Channels direct = net.evaluate(std::span<const Image2D>(x), 12);
    const Channels scaled = ConvScoreNet::scale_raw(raw, sigma_at(small_sched, 12));
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(direct[c], scaled[c]);
}

TEST(DsmLoss, PerfectModelHasZeroLoss)
{
    std::mt19937_64 rng(7);
    std::vector<ModalityPair> batch;
    for (int k = 0; k < 3; ++k) batch.push_back({random_image(6, 6, rng), random_image(6, 6, rng)});
    const TargetModel model(draw_dsm_samples(batch, joint_modalities(), small_sched, 99), small_sched);
    EXPECT_LT(dsm_loss(model, batch, small_sched, 99), 1e-18);
}

TEST(DsmLoss, ZeroModelLossIsTwicePixelCount)
{
    std::mt19937_64 rng(8);
    std::vector<ModalityPair> batch;
    for (int k = 0; k < 64; ++k) batch.push_back({random_image(8, 8, rng), random_image(8, 8, rng)});
    const ZeroModel zero(NoiseSchedule{});
    const double loss = dsm_loss(zero, batch, NoiseSchedule{}, 3);
    EXPECT_NEAR(loss / 128.0, 1.0, 0.05);
    EXPECT_GE(loss, 0.0);
    expect_error([&] { dsm_loss(zero, std::span<const ModalityPair>{}, NoiseSchedule{}, 0); }, ErrorKind::EmptyBatch);
}

TEST(DsmLoss, AgreesWithGradientRoutine)
{
    std::mt19937_64 rng(9);
    std::vector<ModalityPair> batch;
    for (int k = 0; k < 3; ++k) batch.push_back({random_image(6, 6, rng), random_image(6, 6, rng)});
    BasicConvScoreNet<double> net(joint_modalities(), 4, small_sched);
    net.initialize(2);
    std::vector<double> grad;
    EXPECT_NEAR(dsm_loss_and_gradient(net, batch, small_sched, 5, grad), dsm_loss(net, batch, small_sched, 5),
                1e-10);
}

TEST(DsmGradient, MatchesCentralDifferences)
{
    std::mt19937_64 rng(10);
    std::vector<ModalityPair> batch;
    for (int k = 0; k < 3; ++k) batch.push_back({random_image(6, 6, rng, 0, 1), random_image(6, 6, rng, 0, 1)});
    BasicConvScoreNet<double> net(joint_modalities(), 4, small_sched);
    net.initialize(11);
    for (double& p : net.parameters()) p += 0.05; // nonzero biases
    std::vector<double> grad;
    dsm_loss_and_gradient(net, batch, small_sched, 17, grad);

    const std::array<std::pair<std::size_t, std::size_t>, 6> tensors{{{net.w1_offset(), net.w1_count()},
                                                                      {net.b1_offset(), net.hidden()},
                                                                      {net.w2_offset(), net.w2_count()},
                                                                      {net.b2_offset(), net.hidden()},
                                                                      {net.w3_offset(), net.w3_count()},
                                                                      {net.b3_offset(), 2}}};
    int checked = 0;
    for (const auto& [offset, count] : tensors) {
        std::uniform_int_distribution<std::size_t> pick(0, count - 1);
        for (int n = 0; n < 4; ++n) {
            const std::size_t k = offset + pick(rng);
            const double saved = net.parameters()[k], h = 1e-6;
            net.parameters()[k] = saved + h;
            const double up = dsm_loss(net, batch, small_sched, 17);
            net.parameters()[k] = saved - h;
            const double down = dsm_loss(net, batch, small_sched, 17);
            net.parameters()[k] = saved;
            const double numeric = (up - down) / (2 * h);
            EXPECT_LT(std::abs(grad[k] - numeric) / (std::abs(grad[k]) + 1e-8), 1e-3)
                << "param " << k << " analytic " << grad[k] << " numeric " << numeric;
            ++checked;
        }
    }
    EXPECT_GE(checked, 20);
}

TEST(Train, ZeroLearningRateKeepsWeights)
{
    std::mt19937_64 rng(12);
    std::vector<ModalityPair> data;
    for (int k = 0; k < 4; ++k) data.push_back({random_image(8, 8, rng), random_image(8, 8, rng)});
    ConvScoreNet net(joint_modalities(), 4, small_sched);
    net.initialize(3);
    const std::vector<float> before(net.parameters().begin(), net.parameters().end());
    const TrainResult r = train(net, data, TrainConfig{5, 2, 0.0, 1}, small_sched);
    EXPECT_EQ(r.epoch_losses.size(), 5u);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), net.parameters().begin()));
    expect_error([&] { train(net, std::span<const ModalityPair>{}, TrainConfig{}, small_sched); },
                 ErrorKind::EmptyDataset);
}

TEST(Train, DeterministicAndResumable)
{
    std::vector<ModalityPair> data;
    for (std::uint64_t k = 0; k < 4; ++k) data.push_back(gen_pair(PhantomSpec{16, 4, k, 1.0, 0.5}));
    const TrainConfig cfg{6, 2, 1e-3, 5};
    ConvScoreNet a(joint_modalities(), 4, small_sched), b = a;
    a.initialize(1);
    b.initialize(1);
    const TrainResult ra = train(a, data, cfg, small_sched);
    const TrainResult rb = train(b, data, cfg, small_sched);
    EXPECT_EQ(ra.epoch_losses, rb.epoch_losses);

    // epochs 0..2 then 3..5 see the same batches and noise as one 6-epoch run
    ConvScoreNet c(joint_modalities(), 4, small_sched);
    c.initialize(1);
    const TrainResult first = train(c, data, TrainConfig{3, 2, 1e-3, 5}, small_sched, 0);
    const TrainResult second = train(c, data, TrainConfig{3, 2, 1e-3, 5}, small_sched, 3);
    EXPECT_EQ(first.epoch_losses[0], ra.epoch_losses[0]);
    EXPECT_EQ(second.epoch_losses.size(), 3u);
}

TEST(Train, CosineDecaySchedule)
{
    std::vector<ModalityPair> data;
    for (std::uint64_t k = 0; k < 4; ++k) data.push_back(gen_pair(PhantomSpec{16, 4, k, 1.0, 0.5}));
    const auto run = [&](double final_lr) {
        ConvScoreNet net(joint_modalities(), 4, small_sched);
        net.initialize(2);
        TrainConfig cfg{4, 2, 3e-3, 8};
        cfg.final_learning_rate = final_lr;
        return std::pair{train(net, data, cfg, small_sched).epoch_losses,
                         std::vector<float>(net.parameters().begin(), net.parameters().end())};
    };
    const auto constant = run(-1.0), flat = run(3e-3), decayed = run(0.0);
    EXPECT_EQ(flat.second, constant.second);
    // epoch 0 runs at the initial rate either way
    EXPECT_EQ(decayed.first[0], constant.first[0]);
    EXPECT_NE(decayed.first[1], constant.first[1]);
    EXPECT_NE(decayed.second, constant.second);
}

TEST(Train, DivergenceIsReported)
{
    std::vector<ModalityPair> data{{Image2D(6, 6, 1e30), Image2D(6, 6, 1e30)}};
    ConvScoreNet net(joint_modalities(), 2, small_sched);
    net.initialize(0);
    for (float& p : net.parameters()) p = 1e30f;
    expect_error([&] { train(net, data, TrainConfig{1, 1, 1e-3, 0}, small_sched); }, ErrorKind::DivergenceDetected);
}

TEST(Train, LossMovingAverageHalves)
{
    std::vector<ModalityPair> data;
    for (std::uint64_t k = 0; k < 4; ++k) data.push_back(gen_pair(PhantomSpec{16, 4, k, 1.0, 0.5}));
    ConvScoreNet net(joint_modalities(), 16, NoiseSchedule{});
    net.initialize(7);
    const TrainResult r = train(net, data, TrainConfig{200, 4, 3e-3, 1}, NoiseSchedule{});
    const auto& l = r.epoch_losses;
    double tail = 0.0;
    for (std::size_t e = l.size() - 20; e < l.size(); ++e) tail += l[e] / 20.0;
    EXPECT_LT(tail, 0.5 * l.front()) << "first " << l.front() << " last-20 mean " << tail;
}

TEST(Train, LearnsGaussianOracleScore)
{
    const NoiseSchedule sched{0.05, 10.0, 100};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    std::mt19937_64 rng(13);
    std::vector<ModalityPair> data;
    for (int k = 0; k < 64; ++k) data.push_back(sample_prior(oracle, 16, rng));
    ConvScoreNet net(joint_modalities(), 16, sched);
    net.initialize(3);
    train(net, data, TrainConfig{60, 8, 3e-3, 2}, sched);

    double total = 0.0;
    const int held_out = 40;
    std::uniform_int_distribution<int> level(1, sched.n_steps - 1);
    for (int k = 0; k < held_out; ++k) {
        const ModalityPair clean = sample_prior(oracle, 16, rng);
        const int i = level(rng);
        const ModalityPair noisy = perturb(clean, sched, i, rng());
        const Channels x = to_channels(noisy, joint_modalities());
        total += cosine(net.evaluate(std::span<const Image2D>(x), i), oracle.evaluate(std::span<const Image2D>(x), i));
    }
    EXPECT_GT(total / held_out, 0.9);
}
