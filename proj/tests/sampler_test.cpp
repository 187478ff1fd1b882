#include "test_support.hpp"

#include <limits>

using namespace mcdiff;
using namespace mcdiff::testing;

namespace {

class ConstantModel final : public ScoreModel {
public:
    ConstantModel(std::vector<Modality> m, NoiseSchedule s, double value) : mods_(std::move(m)), sched_(s), value_(value) {}
    const std::vector<Modality>& modalities() const override { return mods_; }
    const NoiseSchedule& schedule() const override { return sched_; }
    using ScoreModel::evaluate;
    Channels evaluate(std::span<const Image2D> x, int) const override
    {
        return Channels(x.size(), Image2D(x[0].width(), x[0].height(), value_));
    }

private:
    std::vector<Modality> mods_;
    NoiseSchedule sched_;
    double value_;
};

SamplerConfig config_for(const NoiseSchedule& s, std::uint64_t seed = 0)
{
    SamplerConfig c;
    c.n_steps = s.n_steps;
    c.seed = seed;
    return c;
}

SamplerState state_at(int step, std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    SamplerState st;
    st.modalities = joint_modalities();
    st.x = {random_image(n, n, rng), random_image(n, n, rng)};
    st.step_index = step;
    st.rng = Rng(seed + 1);
    return st;
}

Channels next_noise(Rng rng, std::size_t n)
{
    Channels z;
    for (int c = 0; c < 2; ++c) z.push_back(standard_normal_like(Image2D(n, n), rng));
    return z;
}

const PixelGaussianFidelity zero_fidelity_at(const SamplerState& st)
{
    return PixelGaussianFidelity{st.pair(), 1.0, 1.0};
}

} // namespace

TEST(Predictor, PureScoreAscentWithoutFidelityOrNoise)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.2, -0.1, 0.8, 1.2, 0.6, sched);
    SamplerConfig cfg = config_for(sched);
    cfg.lambda1 = cfg.lambda2 = 0.0;
    cfg.noise_scale = 0.0;
    std::mt19937_64 rng(1);
    const PixelGaussianFidelity fid{{random_image(6, 6, rng), random_image(6, 6, rng)}, 0.5, 0.5};
    const SamplerState st = state_at(12, 6, 3);
    const Channels s = oracle.evaluate(std::span<const Image2D>(st.x), 12);
    const double d = std::pow(sigma_at(sched, 12), 2) - std::pow(sigma_at(sched, 11), 2);
    const SamplerState next = predictor_step(st, oracle, fid, sched, cfg);
    EXPECT_EQ(next.step_index, 11);
    EXPECT_EQ(next.corrector_index, 0);
    for (int c = 0; c < 2; ++c) EXPECT_LT(norm(next.x[c] - st.x[c] - d * s[c]), 1e-12 * norm(s[c]) * d);
}

TEST(Predictor, UnitIncrementAddsExactlyTheNoiseDraw)
{
    const NoiseSchedule sched{1.0, std::sqrt(2.0), 2};
    const ConstantModel zero(joint_modalities(), sched, 0.0);
    SamplerState st = state_at(1, 5, 4);
    const SamplerConfig cfg = config_for(sched);
    const Channels z = next_noise(st.rng, 5);
    const SamplerState next = predictor_step(st, zero, zero_fidelity_at(st), sched, cfg);
    for (int c = 0; c < 2; ++c) EXPECT_LT(norm(next.x[c] - st.x[c] - z[c]), 1e-12);
}

TEST(Predictor, ZeroFidelityGradientGivesUnconditionalStep)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    SamplerState st = state_at(20, 6, 5);
    const SamplerConfig cfg = config_for(sched);
    const Channels s = oracle.evaluate(std::span<const Image2D>(st.x), 20);
    const Channels z = next_noise(st.rng, 6);
    const double d = std::pow(sigma_at(sched, 20), 2) - std::pow(sigma_at(sched, 19), 2);
    const SamplerState next = predictor_step(st, oracle, zero_fidelity_at(st), sched, cfg);
    for (int c = 0; c < 2; ++c) {
        Image2D expected = st.x[c];
        expected.axpy(d, s[c]);
        expected.axpy(std::sqrt(d), z[c]);
        EXPECT_LT(norm(next.x[c] - expected), 1e-10);
    }
}

TEST(Predictor, FidelityWeightMatchesScoreNorm)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    SamplerConfig cfg = config_for(sched);
    cfg.noise_scale = 0.0;
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 1.3;
    std::mt19937_64 rng(6);
    const PixelGaussianFidelity fid{{random_image(6, 6, rng), random_image(6, 6, rng)}, 0.3, 2.0};
    const SamplerState st = state_at(7, 6, 60);
    const Channels s = oracle.evaluate(std::span<const Image2D>(st.x), 7);
    const double d = std::pow(sigma_at(sched, 7), 2) - std::pow(sigma_at(sched, 6), 2);
    const SamplerState next = predictor_step(st, oracle, fid, sched, cfg);
    for (Modality m : {Modality::Pet, Modality::Mri}) {
        const std::size_t c = m == Modality::Pet ? 0 : 1;
        const Image2D g = fid.gradient(m, st.x[c]);
        Image2D expected = st.x[c];
        expected.axpy(d, s[c]);
        expected.axpy(-d * cfg.lambda(m) * norm(s[c]) / norm(g), g);
        EXPECT_LT(norm(next.x[c] - expected), 1e-12 * norm(expected));
    }
}

TEST(Predictor, RangeAndFiniteness)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    SamplerState st = state_at(0, 4, 7);
    expect_error([&] { predictor_step(st, oracle, zero_fidelity_at(st), sched, config_for(sched)); },
                 ErrorKind::IndexOutOfRange);
    st.step_index = 5;
    PixelGaussianFidelity bad = zero_fidelity_at(st);
    bad.observed.pet[3] = std::numeric_limits<double>::infinity();
    expect_error([&] { predictor_step(st, oracle, bad, sched, config_for(sched)); }, ErrorKind::NonFiniteIterate);
    const GaussianOracle single = oracle.marginal(Modality::Pet);
    expect_error([&] { predictor_step(st, single, zero_fidelity_at(st), sched, config_for(sched)); },
                 ErrorKind::InvalidArgument);
}

TEST(Predictor, NonnegativePetClamp)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    SamplerConfig cfg = config_for(sched);
    cfg.nonneg_pet = true;
    SamplerState st = state_at(25, 8, 8);
    const SamplerState next = predictor_step(st, oracle, zero_fidelity_at(st), sched, cfg);
    for (double v : next.x[0].values()) EXPECT_GE(v, 0.0);
    EXPECT_LT(*std::min_element(next.x[1].values().begin(), next.x[1].values().end()), 0.0);
}

TEST(Corrector, ZeroAlphaIsExactNoOp)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    SamplerConfig cfg = config_for(sched);
    cfg.alpha1 = cfg.alpha2 = 0.0;
    std::mt19937_64 rng(9);
    const PixelGaussianFidelity fid{{random_image(6, 6, rng), random_image(6, 6, rng)}, 0.5, 0.5};
    const SamplerState st = state_at(10, 6, 9);
    const SamplerState next = corrector_step(st, oracle, fid, sched, cfg);
    EXPECT_EQ(next.x, st.x);
    EXPECT_EQ(next.corrector_index, 1);
    EXPECT_EQ(next.step_index, 10);
    expect_error([&] { corrector_step(next, oracle, fid, sched, cfg); }, ErrorKind::IndexOutOfRange);
}

TEST(Corrector, StepMatchesFormula)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const GaussianOracle oracle(0.1, 0.2, 1.0, 0.5, 0.3, sched);
    SamplerConfig cfg = config_for(sched);
    cfg.alpha1 = 0.5;
    cfg.beta2 = 2.0;
    cfg.snr1 = 0.2;
    std::mt19937_64 rng(10);
    const PixelGaussianFidelity fid{{random_image(6, 6, rng), random_image(6, 6, rng)}, 0.5, 0.8};
    const SamplerState st = state_at(10, 6, 100);
    const Channels z = next_noise(st.rng, 6);
    const Channels s = oracle.evaluate(std::span<const Image2D>(st.x), 10);
    const SamplerState next = corrector_step(st, oracle, fid, sched, cfg);
    for (Modality m : {Modality::Pet, Modality::Mri}) {
        const std::size_t c = m == Modality::Pet ? 0 : 1;
        const double ratio = cfg.snr(m) * norm(z[c]) / norm(s[c]);
        const double mu = 2.0 * cfg.alpha(m) * ratio * ratio;
        const Image2D g = fid.gradient(m, st.x[c]);
        Image2D expected = st.x[c];
        expected.axpy(mu, s[c]);
        expected.axpy(-mu * cfg.beta(m) * norm(s[c]) / norm(g), g);
        expected.axpy(std::sqrt(2.0 * mu), z[c]);
        EXPECT_LT(norm(next.x[c] - expected), 1e-12 * norm(expected));
    }
}

TEST(Corrector, VanishingScoreIsReported)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const ConstantModel zero(joint_modalities(), sched, 0.0);
    const SamplerState st = state_at(10, 4, 11);
    expect_error([&] { corrector_step(st, zero, zero_fidelity_at(st), sched, config_for(sched)); },
                 ErrorKind::ZeroScoreField);
    SamplerConfig off = config_for(sched);
    off.alpha1 = off.alpha2 = 0.0;
    EXPECT_EQ(corrector_step(st, zero, zero_fidelity_at(st), sched, off).x, st.x);
}

TEST(Corrector, LangevinReachesPerturbedPrior)
{
    const NoiseSchedule sched{0.1, 20.0, 30};
    const int level = 8;
    const GaussianOracle oracle(1.0, -1.0, 1.0, 0.5, 0.8, sched);
    SamplerConfig cfg = config_for(sched);
    cfg.beta1 = cfg.beta2 = 0.0;
    cfg.corrector_steps = 400;
    const PixelGaussianFidelity unused{{Image2D(4, 4), Image2D(4, 4)}, 1.0, 1.0};
    const int chains = 200;
    std::vector<double> pet, mri;
    for (int chain = 0; chain < chains; ++chain) {
        SamplerState st;
        st.modalities = joint_modalities();
        st.x = {Image2D(4, 4), Image2D(4, 4)};
        st.step_index = level;
        st.rng = Rng(static_cast<std::uint64_t>(chain));
        for (int j = 0; j < cfg.corrector_steps; ++j) st = corrector_step(std::move(st), oracle, unused, sched, cfg);
        pet.insert(pet.end(), st.x[0].values().begin(), st.x[0].values().end());
        mri.insert(mri.end(), st.x[1].values().begin(), st.x[1].values().end());
    }
    const double v = kernel_variance(sched, level);
    const double n = static_cast<double>(pet.size());
    const auto mean = [](const std::vector<double>& a) { return std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size()); };
    // pixels within a chain are independent, so n counts independent draws
    EXPECT_LT(std::abs(mean(pet) - 1.0), 3.0 * std::sqrt((1.0 + v) / n));
    EXPECT_LT(std::abs(mean(mri) + 1.0), 3.0 * std::sqrt((0.25 + v) / n));
}

TEST(Unconditional, ReproducesPriorMoments)
{
    const NoiseSchedule sched;
    const GaussianOracle oracle(0.5, -0.3, 1.0, 1.0, 0.8, sched);
    const int runs = 500;
    double sp = 0, sm = 0, spp = 0, smm = 0, spm = 0;
    for (int r = 0; r < runs; ++r) {
        const Channels x = unconditional_sample(oracle, sched, 8, 8, static_cast<std::uint64_t>(r));
        for (std::size_t k = 0; k < 64; ++k) {
            const double a = x[0][k], b = x[1][k];
            sp += a;
            sm += b;
            spp += a * a;
            smm += b * b;
            spm += a * b;
        }
    }
    const double n = runs * 64.0;
    const double mp = sp / n, mm = sm / n;
    const double vp = spp / n - mp * mp, vm = smm / n - mm * mm, cov = spm / n - mp * mm;
    EXPECT_LT(std::abs(mp - 0.5), 3.0 * std::sqrt(vp / n));
    EXPECT_LT(std::abs(mm + 0.3), 3.0 * std::sqrt(vm / n));
    EXPECT_NEAR(cov / std::sqrt(vp * vm), 0.8, 0.1);
}

TEST(Unconditional, DegenerateScheduleAndDeterminism)
{
    const NoiseSchedule two{0.1, 1.0, 2};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.5, two);
    const Channels x = unconditional_sample(oracle, two, 8, 8, 1);
    for (const Image2D& c : x) EXPECT_TRUE(c.all_finite());
    EXPECT_EQ(unconditional_sample(oracle, two, 8, 8, 1), x);
    EXPECT_NE(unconditional_sample(oracle, two, 8, 8, 2), x);
}

TEST(JointReconstruct, DeterministicFiniteAndPredictorOnly)
{
    const NoiseSchedule sched{0.1, 50.0, 60};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    std::mt19937_64 rng(12);
    const PixelGaussianFidelity fid{{random_image(8, 8, rng), random_image(8, 8, rng)}, 0.5, 0.5};
    SamplerConfig cfg = config_for(sched, 5);
    const ModalityPair a = joint_reconstruct(8, 8, oracle, fid, sched, cfg);
    EXPECT_EQ(joint_reconstruct(8, 8, oracle, fid, sched, cfg), a);
    cfg.seed = 6;
    EXPECT_NE(joint_reconstruct(8, 8, oracle, fid, sched, cfg), a);
    cfg.corrector_steps = 0;
    const ModalityPair p = joint_reconstruct(8, 8, oracle, fid, sched, cfg);
    EXPECT_TRUE(p.pet.all_finite() && p.mri.all_finite());
    EXPECT_TRUE(p.pet.same_shape(Image2D(8, 8)));
    cfg.n_steps = 59;
    expect_error([&] { joint_reconstruct(8, 8, oracle, fid, sched, cfg); }, ErrorKind::InvalidArgument);
}

TEST(JointReconstruct, TraceRows)
{
    const NoiseSchedule sched{0.1, 50.0, 12};
    const GaussianOracle oracle(0.0, 0.0, 1.0, 1.0, 0.8, sched);
    std::mt19937_64 rng(13);
    const PixelGaussianFidelity fid{{random_image(4, 4, rng), random_image(4, 4, rng)}, 0.5, 0.5};
    SamplerConfig cfg = config_for(sched, 1);
    cfg.corrector_steps = 2;
    std::vector<TraceRow> rows;
    const ModalityPair traced = joint_reconstruct(4, 4, oracle, fid, sched, cfg, [&](const TraceRow& r) { rows.push_back(r); });
    EXPECT_EQ(traced, joint_reconstruct(4, 4, oracle, fid, sched, cfg));
    ASSERT_EQ(rows.size(), 11u * 3u);
    EXPECT_EQ(rows[0].i, 11);
    EXPECT_EQ(rows[0].j, 0);
    EXPECT_EQ(rows[1].i, 10);
    EXPECT_EQ(rows[1].j, 1);
    EXPECT_EQ(rows[2].j, 2);
    EXPECT_EQ(rows.back().i, 0);
    for (const TraceRow& r : rows) EXPECT_TRUE(std::isfinite(r.score_norm_pet) && std::isfinite(r.nll_mri));

    std::vector<TraceRow> solo;
    standalone_reconstruct(Modality::Mri, 4, 4, oracle.marginal(Modality::Mri), fid, sched, cfg,
                           [&](const TraceRow& r) { solo.push_back(r); });
    ASSERT_FALSE(solo.empty());
    EXPECT_TRUE(std::isnan(solo[0].score_norm_pet));
    EXPECT_TRUE(std::isfinite(solo[0].score_norm_mri));
}

TEST(StandaloneReconstruct, MatchesJointUnderFactorisedPrior)
{
    const NoiseSchedule sched{0.1, 50.0, 80};
    const GaussianOracle oracle(0.4, -0.4, 1.0, 0.7, 0.0, sched);
    std::mt19937_64 rng(14);
    const PixelGaussianFidelity fid{{random_image(4, 4, rng), random_image(4, 4, rng)}, 0.5, 0.5};
    const int chains = 200;
    std::array<std::vector<double>, 2> joint, solo;
    for (int r = 0; r < chains; ++r) {
        SamplerConfig cfg = config_for(sched, static_cast<std::uint64_t>(r));
        const ModalityPair j = joint_reconstruct(4, 4, oracle, fid, sched, cfg);
        cfg.seed += 100000;
        const Image2D p = standalone_reconstruct(Modality::Pet, 4, 4, oracle.marginal(Modality::Pet), fid, sched, cfg);
        const Image2D m = standalone_reconstruct(Modality::Mri, 4, 4, oracle.marginal(Modality::Mri), fid, sched, cfg);
        joint[0].insert(joint[0].end(), j.pet.values().begin(), j.pet.values().end());
        joint[1].insert(joint[1].end(), j.mri.values().begin(), j.mri.values().end());
        solo[0].insert(solo[0].end(), p.values().begin(), p.values().end());
        solo[1].insert(solo[1].end(), m.values().begin(), m.values().end());
    }
    for (int c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < 16; ++k) {
            double mj = 0, ms = 0, vj = 0, vs = 0;
            for (int r = 0; r < chains; ++r) {
                mj += joint[c][static_cast<std::size_t>(r) * 16 + k] / chains;
                ms += solo[c][static_cast<std::size_t>(r) * 16 + k] / chains;
            }
            for (int r = 0; r < chains; ++r) {
                vj += std::pow(joint[c][static_cast<std::size_t>(r) * 16 + k] - mj, 2) / (chains - 1);
                vs += std::pow(solo[c][static_cast<std::size_t>(r) * 16 + k] - ms, 2) / (chains - 1);
            }
            EXPECT_LT(std::abs(mj - ms), 4.0 * std::sqrt((vj + vs) / chains)) << c << "," << k;
            EXPECT_NEAR(std::sqrt(vj / vs), 1.0, 0.35) << c << "," << k;
        }
}

TEST(StandaloneReconstruct, PetOnlyNeedsNoKSpace)
{
    const NoiseSchedule sched{0.05, 20.0, 40};
    const GaussianOracle prior(0.3, 0.3, 0.3, 0.3, 0.5, sched);
    TomographicFidelity fid;
    fid.cfg.geom = make_geometry(16, 36);
    fid.cfg.pet_scale = 100.0;
    const ModalityPair truth = gen_pair(PhantomSpec{16, 4, 1, 1.0, 0.5});
    DegradeConfig d;
    d.seed = 3;
    fid.sinogram = simulate_pet(truth.pet, fid.cfg.geom, d);
    SamplerConfig cfg = config_for(sched, 2);
    const Image2D a = standalone_reconstruct(Modality::Pet, 16, 16, prior.marginal(Modality::Pet), fid, sched, cfg);
    EXPECT_TRUE(a.all_finite());
    EXPECT_EQ(standalone_reconstruct(Modality::Pet, 16, 16, prior.marginal(Modality::Pet), fid, sched, cfg), a);
    expect_error([&] { standalone_reconstruct(Modality::Mri, 16, 16, prior.marginal(Modality::Mri), fid, sched, cfg); },
                 ErrorKind::InvalidArgument);
}

TEST(JointReconstruct, ImprovesDataFidelityOverInitialIterate)
{
    const NoiseSchedule sched{0.05, 20.0, 60};
    const GaussianOracle prior(0.3, 0.3, 0.3, 0.3, 0.5, sched);
    double init_pet = 0, init_mri = 0, final_pet = 0, final_mri = 0;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const ModalityPair truth = gen_pair(PhantomSpec{16, 5, k, 1.0, 0.5});
        TomographicFidelity fid;
        fid.cfg.geom = make_geometry(16, 36);
        fid.cfg.pet_scale = 100.0;
        fid.cfg.mask = make_cartesian_mask(16, 4.0, 0.125, k, 16);
        DegradeConfig d;
        d.seed = k;
        d.mask = fid.cfg.mask;
        fid.sinogram = simulate_pet(truth.pet, fid.cfg.geom, d);
        fid.kspace = simulate_mri(truth.mri, d);
        const SamplerConfig cfg = config_for(sched, k);
        const SamplerState start = initial_state(joint_modalities(), 16, 16, sched, cfg.seed);
        const ModalityPair out = joint_reconstruct(16, 16, prior, fid, sched, cfg);
        init_pet += fid.neg_loglik(Modality::Pet, start.x[0]);
        init_mri += fid.neg_loglik(Modality::Mri, start.x[1]);
        final_pet += fid.neg_loglik(Modality::Pet, out.pet);
        final_mri += fid.neg_loglik(Modality::Mri, out.mri);
    }
    EXPECT_LT(final_pet, init_pet);
    EXPECT_LT(final_mri, init_mri);
}
