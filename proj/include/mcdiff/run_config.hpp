#ifndef MCDIFF_RUN_CONFIG_HPP
#define MCDIFF_RUN_CONFIG_HPP

// One JSON document holding every knob of the command-line workflow.
// Reading rejects unknown keys; writing always emits every field.

#include "ablation.hpp"
#include "io.hpp"

namespace mcdiff {

struct OracleParams {
    double mean_pet = 0.0, mean_mri = 0.0;
    double std_pet = 1.0, std_mri = 1.0;
    double rho = 0.8;
};

struct RunConfig {
    std::uint64_t seed = 0;
    NoiseSchedule schedule;
    SamplerConfig sampler;
    double mri_weight = 1.0;
    double pet_dose = 100.0;
    double mri_noise_std = 0.0;
    double acceleration = 4.0;
    double center_fraction = 0.04;
    std::size_t n_angles = 0; // 0: default_angle_count(width)
    TrainConfig train;
    std::size_t hidden = 16;
    PhantomSpec phantom;
    int count = 1;
    int n_train = 200;
    int n_test = 10;
    OracleParams oracle;
    std::string dataset;
    std::string checkpoint;
};

inline std::string to_string(FidelityVariant v) { return v == FidelityVariant::PoissonRatio ? "poisson" : "fbp"; }

inline FidelityVariant fidelity_variant_from(const std::string& s)
{
    if (s == "fbp") return FidelityVariant::FbpResidual;
    if (s == "poisson") return FidelityVariant::PoissonRatio;
    fail(ErrorKind::InvalidArgument, "fidelity must be 'fbp' or 'poisson', got '" + s + "'");
}

inline io::json to_json(const RunConfig& c)
{
    const SamplerConfig& s = c.sampler;
    return {
        {"seed", c.seed},
        {"schedule", io::schedule_to_json(c.schedule)},
        {"sampler",
         {{"corrector_steps", s.corrector_steps},
          {"lambda1", s.lambda1},
          {"lambda2", s.lambda2},
          {"alpha1", s.alpha1},
          {"alpha2", s.alpha2},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"snr1", s.snr1},
          {"snr2", s.snr2},
          {"nonneg_pet", s.nonneg_pet},
          {"noise_scale", s.noise_scale}}},
        {"fidelity",
         {{"variant", to_string(s.fidelity_variant)}, {"ratio_clamp", s.ratio_clamp}, {"mri_weight", c.mri_weight}}},
        {"degrade",
         {{"pet_dose", c.pet_dose},
          {"mri_noise_std", c.mri_noise_std},
          {"acceleration", c.acceleration},
          {"center_fraction", c.center_fraction},
          {"n_angles", c.n_angles}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"final_learning_rate", c.train.final_learning_rate},
          {"hidden", c.hidden}}},
        {"phantom",
         {{"size", c.phantom.size},
          {"n_ellipses", c.phantom.n_ellipses},
          {"pet_smoothing", c.phantom.pet_smoothing},
          {"contrast_jitter", c.phantom.contrast_jitter},
          {"count", c.count}}},
        {"ablation", {{"n_train", c.n_train}, {"n_test", c.n_test}}},
        {"oracle",
         {{"mean_pet", c.oracle.mean_pet},
          {"mean_mri", c.oracle.mean_mri},
          {"std_pet", c.oracle.std_pet},
          {"std_mri", c.oracle.std_mri},
          {"rho", c.oracle.rho}}},
        {"paths", {{"dataset", c.dataset}, {"checkpoint", c.checkpoint}}},
    };
}

namespace detail {

inline void check_keys(const io::json& given, const io::json& known, const std::string& where)
{
    require(given.is_object(), ErrorKind::InvalidArgument, "config " + (where.empty() ? "root" : where) + " must be an object");
    for (const auto& [key, value] : given.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        require(known.contains(key), ErrorKind::InvalidArgument, "unknown config key '" + path + "'");
        if (known.at(key).is_object()) check_keys(value, known.at(key), path);
    }
}

} // namespace detail

inline RunConfig run_config_from_json(const io::json& given)
{
    const io::json defaults = to_json(RunConfig{});
    detail::check_keys(given, defaults, "");
    io::json j = defaults;
    for (const auto& [section, value] : given.items()) {
        if (value.is_object())
            for (const auto& [key, v] : value.items()) j[section][key] = v;
        else
            j[section] = value;
    }
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        const io::json& sc = j.at("schedule");
        c.schedule = {sc.at("sigma_min").get<double>(), sc.at("sigma_max").get<double>(), sc.at("n_steps").get<int>()};
        const io::json& s = j.at("sampler");
        c.sampler.corrector_steps = s.at("corrector_steps").get<int>();
        c.sampler.lambda1 = s.at("lambda1").get<double>();
        c.sampler.lambda2 = s.at("lambda2").get<double>();
        c.sampler.alpha1 = s.at("alpha1").get<double>();
        c.sampler.alpha2 = s.at("alpha2").get<double>();
        c.sampler.beta1 = s.at("beta1").get<double>();
        c.sampler.beta2 = s.at("beta2").get<double>();
        c.sampler.snr1 = s.at("snr1").get<double>();
        c.sampler.snr2 = s.at("snr2").get<double>();
        c.sampler.nonneg_pet = s.at("nonneg_pet").get<bool>();
        c.sampler.noise_scale = s.at("noise_scale").get<double>();
        const io::json& f = j.at("fidelity");
        c.sampler.fidelity_variant = fidelity_variant_from(f.at("variant").get<std::string>());
        c.sampler.ratio_clamp = f.at("ratio_clamp").get<double>();
        c.mri_weight = f.at("mri_weight").get<double>();
        const io::json& d = j.at("degrade");
        c.pet_dose = d.at("pet_dose").get<double>();
        c.mri_noise_std = d.at("mri_noise_std").get<double>();
        c.acceleration = d.at("acceleration").get<double>();
        c.center_fraction = d.at("center_fraction").get<double>();
        c.n_angles = d.at("n_angles").get<std::size_t>();
        const io::json& t = j.at("train");
        c.train.epochs = t.at("epochs").get<int>();
        c.train.batch_size = t.at("batch_size").get<int>();
        c.train.learning_rate = t.at("learning_rate").get<double>();
        c.train.final_learning_rate = t.at("final_learning_rate").get<double>();
        c.hidden = t.at("hidden").get<std::size_t>();
        const io::json& p = j.at("phantom");
        c.phantom.size = p.at("size").get<std::size_t>();
        c.phantom.n_ellipses = p.at("n_ellipses").get<int>();
        c.phantom.pet_smoothing = p.at("pet_smoothing").get<double>();
        c.phantom.contrast_jitter = p.at("contrast_jitter").get<double>();
        c.count = p.at("count").get<int>();
        c.n_train = j.at("ablation").at("n_train").get<int>();
        c.n_test = j.at("ablation").at("n_test").get<int>();
        const io::json& o = j.at("oracle");
        c.oracle = {o.at("mean_pet").get<double>(), o.at("mean_mri").get<double>(), o.at("std_pet").get<double>(),
                    o.at("std_mri").get<double>(), o.at("rho").get<double>()};
        c.dataset = j.at("paths").at("dataset").get<std::string>();
        c.checkpoint = j.at("paths").at("checkpoint").get<std::string>();
    } catch (const io::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("bad config value: ") + e.what());
    }
    validate_schedule(c.schedule);
    c.sampler.n_steps = c.schedule.n_steps;
    c.sampler.seed = c.seed;
    require(c.count >= 0, ErrorKind::InvalidArgument, "phantom.count must be >= 0");
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open config '" + path.string() + "'");
    io::json j;
    try {
        j = io::json::parse(in);
    } catch (const io::json::exception& e) {
        fail(ErrorKind::FormatError, "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

/// Hash of the canonical serialisation; stamped into every artifact header.
inline std::string config_hash(const RunConfig& c) { return io::hex(io::fnv1a(to_json(c).dump())); }

inline AblationConfig ablation_config(const RunConfig& c)
{
    AblationConfig a;
    a.size = c.phantom.size;
    a.n_train = c.n_train;
    a.n_test = c.n_test;
    a.n_ellipses = c.phantom.n_ellipses;
    a.pet_smoothing = c.phantom.pet_smoothing;
    a.contrast_jitter = c.phantom.contrast_jitter;
    a.sched = c.schedule;
    a.hidden = c.hidden;
    a.train = c.train;
    a.train.seed = c.seed;
    a.pet_dose = c.pet_dose;
    a.mri_noise_std = c.mri_noise_std;
    a.acceleration = c.acceleration;
    a.center_fraction = c.center_fraction;
    a.n_angles = c.n_angles;
    a.sampler = c.sampler;
    a.seed = c.seed;
    return a;
}

} // namespace mcdiff

#endif
