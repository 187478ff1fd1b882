#ifndef MCDIFF_SAMPLER_HPP
#define MCDIFF_SAMPLER_HPP

// Reverse-time samplers: unconditional ancestral sampling and the
// predictor-corrector reconstruction that couples both modalities through a
// joint score while each modality keeps its own data-fidelity gradient.

#include "fidelity.hpp"
#include "score_models.hpp"

#include <limits>

namespace mcdiff {

struct SamplerState {
    Channels x;
    std::vector<Modality> modalities;
    int step_index = 0;
    int corrector_index = 0;
    Rng rng;

    ModalityPair pair() const
    {
        require(modalities.size() == 2, ErrorKind::InvalidArgument, "state is not a joint pair");
        ModalityPair p;
        p.channel(modalities[0]) = x[0];
        p.channel(modalities[1]) = x[1];
        return p;
    }
};

/// One row of the optional convergence trace. Entries of a modality that is
/// not being sampled are NaN. j = 0 marks a predictor step.
struct TraceRow {
    int i = 0;
    int j = 0;
    double score_norm_pet = std::numeric_limits<double>::quiet_NaN();
    double score_norm_mri = std::numeric_limits<double>::quiet_NaN();
    double grad_norm_pet = std::numeric_limits<double>::quiet_NaN();
    double grad_norm_mri = std::numeric_limits<double>::quiet_NaN();
    double nll_pet = std::numeric_limits<double>::quiet_NaN();
    double nll_mri = std::numeric_limits<double>::quiet_NaN();
};

using TraceSink = std::function<void(const TraceRow&)>;

namespace detail {

inline Channels draw_noise(const Channels& like, Rng& rng)
{
    Channels z;
    z.reserve(like.size());
    for (const Image2D& c : like) z.push_back(standard_normal_like(c, rng));
    return z;
}

inline void check_finite(const SamplerState& state)
{
    for (const Image2D& c : state.x)
        require(c.all_finite(), ErrorKind::NonFiniteIterate,
                "iterate became non-finite at step " + std::to_string(state.step_index));
}

inline void clamp_pet(SamplerState& state, const SamplerConfig& cfg)
{
    if (!cfg.nonneg_pet) return;
    for (std::size_t c = 0; c < state.x.size(); ++c)
        if (state.modalities[c] == Modality::Pet)
            for (double& v : state.x[c].values()) v = std::max(v, 0.0);
}

inline double guarded_ratio(double weight, double numerator, double denominator)
{
    if (weight == 0.0 || denominator == 0.0) return 0.0;
    return weight * numerator / denominator;
}

template <Fidelity F>
void record(const TraceSink& trace, const SamplerState& state, const Channels& score, const Channels& grads,
            const F& fid)
{
    TraceRow row;
    row.i = state.step_index;
    row.j = state.corrector_index;
    for (std::size_t c = 0; c < state.x.size(); ++c) {
        const double sn = norm(score[c]), gn = norm(grads[c]);
        const double nll = fid.neg_loglik(state.modalities[c], state.x[c]);
        if (state.modalities[c] == Modality::Pet) {
            row.score_norm_pet = sn;
            row.grad_norm_pet = gn;
            row.nll_pet = nll;
        } else {
            row.score_norm_mri = sn;
            row.grad_norm_mri = gn;
            row.nll_mri = nll;
        }
    }
    trace(row);
}

inline void check_model(const ScoreModel& score, std::span<const Modality> modalities)
{
    require(std::equal(modalities.begin(), modalities.end(), score.modalities().begin(), score.modalities().end()),
            ErrorKind::InvalidArgument, "score model channels do not match the sampled modalities");
}

} // namespace detail

/// Starting point x ~ N(0, sigma_max^2 I) at the top of the ladder.
inline SamplerState initial_state(std::vector<Modality> modalities, std::size_t width, std::size_t height,
                                  const NoiseSchedule& sched, std::uint64_t seed)
{
    validate_schedule(sched);
    SamplerState state;
    state.modalities = std::move(modalities);
    state.rng = Rng(seed);
    state.step_index = sched.n_steps - 1;
    state.corrector_index = 0;
    for (std::size_t c = 0; c < state.modalities.size(); ++c) {
        Image2D img = standard_normal_like(Image2D(width, height), state.rng);
        img *= sched.sigma_max;
        state.x.push_back(std::move(img));
    }
    return state;
}

/// Moves from level i+1 = state.step_index to level i:
/// x_c += d(s_c - eps_c G_c) + sqrt(d) z_c, d = sigma_{i+1}^2 - sigma_i^2,
/// eps_c = lambda_c ||s_c|| / ||G_c||.
template <Fidelity F>
SamplerState predictor_step(SamplerState state, const ScoreModel& score, const F& fid, const NoiseSchedule& sched,
                            const SamplerConfig& cfg, const TraceSink& trace = {})
{
    require(state.step_index >= 1 && state.step_index < sched.n_steps, ErrorKind::IndexOutOfRange,
            "predictor needs step_index in [1, N)");
    detail::check_model(score, state.modalities);
    const int from = state.step_index;
    const double hi = sigma_at(sched, from), lo = sigma_at(sched, from - 1);
    const double d = hi * hi - lo * lo;

    const Channels s = score.evaluate(std::span<const Image2D>(state.x), from);
    Channels grads;
    for (std::size_t c = 0; c < state.x.size(); ++c) {
        const Modality m = state.modalities[c];
        if (cfg.lambda(m) > 0.0 || trace)
            grads.push_back(fid.gradient(m, state.x[c]));
        else
            grads.emplace_back(state.x[c].width(), state.x[c].height());
    }
    if (trace) detail::record(trace, state, s, grads, fid);

    const Channels z = detail::draw_noise(state.x, state.rng);
    const double noise = cfg.noise_scale * std::sqrt(d);
    for (std::size_t c = 0; c < state.x.size(); ++c) {
        const Modality m = state.modalities[c];
        const double eps = detail::guarded_ratio(cfg.lambda(m), norm(s[c]), norm(grads[c]));
        Image2D& x = state.x[c];
        for (std::size_t p = 0; p < x.size(); ++p) x[p] += d * (s[c][p] - eps * grads[c][p]) + noise * z[c][p];
    }
    detail::clamp_pet(state, cfg);
    state.step_index = from - 1;
    state.corrector_index = 0;
    detail::check_finite(state);
    return state;
}

/// Langevin correction at the current level:
/// x_c += mu_c (s_c - rho_c G_c) + sqrt(2 mu_c) z_c with
/// mu_c = 2 alpha_c (r_c ||z_c|| / ||s_c||)^2 and rho_c = beta_c ||s_c|| / ||G_c||.
template <Fidelity F>
SamplerState corrector_step(SamplerState state, const ScoreModel& score, const F& fid, const NoiseSchedule& sched,
                            const SamplerConfig& cfg, const TraceSink& trace = {})
{
    require(state.corrector_index < cfg.corrector_steps, ErrorKind::IndexOutOfRange,
            "corrector index already at corrector_steps");
    require(state.step_index >= 0 && state.step_index < sched.n_steps, ErrorKind::IndexOutOfRange,
            "corrector step_index outside [0, N)");
    detail::check_model(score, state.modalities);

    const Channels z = detail::draw_noise(state.x, state.rng);
    const Channels s = score.evaluate(std::span<const Image2D>(state.x), state.step_index);
    Channels grads;
    for (std::size_t c = 0; c < state.x.size(); ++c) {
        const Modality m = state.modalities[c];
        if ((cfg.beta(m) > 0.0 && cfg.alpha(m) > 0.0) || trace)
            grads.push_back(fid.gradient(m, state.x[c]));
        else
            grads.emplace_back(state.x[c].width(), state.x[c].height());
    }
    ++state.corrector_index;
    if (trace) detail::record(trace, state, s, grads, fid);

    for (std::size_t c = 0; c < state.x.size(); ++c) {
        const Modality m = state.modalities[c];
        if (cfg.alpha(m) == 0.0) continue;
        const double s_norm = norm(s[c]);
        require(s_norm > 0.0, ErrorKind::ZeroScoreField,
                to_string(m) + " score field vanished; Langevin step size is undefined");
        const double ratio = cfg.snr(m) * norm(z[c]) / s_norm;
        const double mu = 2.0 * cfg.alpha(m) * ratio * ratio;
        const double rho = detail::guarded_ratio(cfg.beta(m), s_norm, norm(grads[c]));
        const double noise = cfg.noise_scale * std::sqrt(2.0 * mu);
        Image2D& x = state.x[c];
        for (std::size_t p = 0; p < x.size(); ++p) x[p] += mu * (s[c][p] - rho * grads[c][p]) + noise * z[c][p];
    }
    detail::clamp_pet(state, cfg);
    detail::check_finite(state);
    return state;
}

/// Full predictor-corrector chain from sigma_max down to sigma_min over the
/// listed modalities; the final iterate at level 0 is returned as is.
template <Fidelity F>
Channels reconstruct_channels(std::vector<Modality> modalities, std::size_t width, std::size_t height,
                              const ScoreModel& score, const F& fid, const NoiseSchedule& sched,
                              const SamplerConfig& cfg, const TraceSink& trace = {})
{
    validate_sampler_config(cfg, sched);
    detail::check_model(score, modalities);
    SamplerState state = initial_state(std::move(modalities), width, height, sched, cfg.seed);
    while (state.step_index > 0) {
        state = predictor_step(std::move(state), score, fid, sched, cfg, trace);
        for (int j = 0; j < cfg.corrector_steps; ++j)
            state = corrector_step(std::move(state), score, fid, sched, cfg, trace);
    }
    return std::move(state.x);
}

template <Fidelity F>
ModalityPair joint_reconstruct(std::size_t width, std::size_t height, const ScoreModel& score, const F& fid,
                               const NoiseSchedule& sched, const SamplerConfig& cfg, const TraceSink& trace = {})
{
    Channels out = reconstruct_channels(joint_modalities(), width, height, score, fid, sched, cfg, trace);
    ModalityPair pair;
    pair.pet = std::move(out[0]);
    pair.mri = std::move(out[1]);
    return pair;
}

/// Same chain restricted to one modality; `score` must be a single-channel model.
template <Fidelity F>
Image2D standalone_reconstruct(Modality modality, std::size_t width, std::size_t height, const ScoreModel& score,
                               const F& fid, const NoiseSchedule& sched, const SamplerConfig& cfg,
                               const TraceSink& trace = {})
{
    Channels out = reconstruct_channels({modality}, width, height, score, fid, sched, cfg, trace);
    return std::move(out[0]);
}

/// Ancestral sampling of the prior:
/// x_{i-1} = x_i + (s_i^2 - s_{i-1}^2) s(x_i, i) + sqrt(s_{i-1}^2 (s_i^2 - s_{i-1}^2) / s_i^2) z.
inline Channels unconditional_sample(const ScoreModel& score, const NoiseSchedule& sched, std::size_t width,
                                     std::size_t height, std::uint64_t seed)
{
    SamplerState state = initial_state(score.modalities(), width, height, sched, seed);
    for (int i = sched.n_steps - 1; i >= 1; --i) {
        const double hi = sigma_at(sched, i), lo = sigma_at(sched, i - 1);
        const double d = hi * hi - lo * lo;
        const double noise = std::sqrt(lo * lo * d / (hi * hi));
        const Channels s = score.evaluate(std::span<const Image2D>(state.x), i);
        const Channels z = detail::draw_noise(state.x, state.rng);
        for (std::size_t c = 0; c < state.x.size(); ++c)
            for (std::size_t p = 0; p < state.x[c].size(); ++p)
                state.x[c][p] += d * s[c][p] + noise * z[c][p];
        state.step_index = i - 1;
        detail::check_finite(state);
    }
    return std::move(state.x);
}

} // namespace mcdiff

#endif
