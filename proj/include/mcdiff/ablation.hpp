#ifndef MCDIFF_ABLATION_HPP
#define MCDIFF_ABLATION_HPP

// Joint versus stand-alone reconstruction on held-out phantom pairs, with
// the classical single-modality baselines (FBP of the counts for PET,
// zero-filled inverse FFT for MRI) for reference.

#include "degradation.hpp"
#include "metrics.hpp"
#include "phantoms.hpp"
#include "sampler.hpp"

#include <chrono>
#include <sstream>

namespace mcdiff {

struct AblationConfig {
    std::size_t size = 32;
    int n_train = 200;
    int n_test = 10;
    int n_ellipses = 6;
    double pet_smoothing = 1.0;
    double contrast_jitter = 0.5;

    NoiseSchedule sched{0.01, 20.0, 300};
    std::size_t hidden = 16;
    TrainConfig train{150, 8, 6e-3, 0, 1e-4};

    double pet_dose = 100.0;
    double mri_noise_std = 0.0;
    double acceleration = 4.0;
    double center_fraction = 0.04;
    std::size_t n_angles = 0; // 0: default_angle_count(size)

    SamplerConfig sampler;
    std::uint64_t seed = 0;
};

inline std::uint64_t train_pair_seed(const AblationConfig& c, int k)
{
    return c.seed * 1000003ULL + static_cast<std::uint64_t>(k);
}

inline std::uint64_t test_pair_seed(const AblationConfig& c, int k)
{
    return c.seed * 1000003ULL + 500000ULL + static_cast<std::uint64_t>(k);
}

inline PhantomSpec ablation_phantom(const AblationConfig& c, std::uint64_t seed)
{
    return {c.size, c.n_ellipses, seed, c.pet_smoothing, c.contrast_jitter};
}

inline std::vector<ModalityPair> training_pairs(const AblationConfig& c)
{
    std::vector<ModalityPair> out;
    for (int k = 0; k < c.n_train; ++k) out.push_back(gen_pair(ablation_phantom(c, train_pair_seed(c, k))));
    return out;
}

inline std::vector<ModalityPair> test_pairs(const AblationConfig& c)
{
    std::vector<ModalityPair> out;
    for (int k = 0; k < c.n_test; ++k) out.push_back(gen_pair(ablation_phantom(c, test_pair_seed(c, k))));
    return out;
}

inline std::size_t ablation_angles(const AblationConfig& c)
{
    return c.n_angles ? c.n_angles : default_angle_count(c.size);
}

/// Simulated measurements of one test pair plus the matching likelihood.
inline TomographicFidelity degrade_case(const ModalityPair& truth, const AblationConfig& c, std::uint64_t seed)
{
    TomographicFidelity fid;
    fid.cfg.variant = c.sampler.fidelity_variant;
    fid.cfg.ratio_clamp = c.sampler.ratio_clamp;
    fid.cfg.pet_scale = c.pet_dose;
    fid.cfg.geom = make_geometry(c.size, ablation_angles(c));
    fid.cfg.mask = make_cartesian_mask(c.size, c.acceleration, c.center_fraction, seed, c.size);
    DegradeConfig d;
    d.pet_dose = c.pet_dose;
    d.mri_noise_std = c.mri_noise_std;
    d.mask = fid.cfg.mask;
    d.seed = seed;
    fid.sinogram = simulate_pet(truth.pet, fid.cfg.geom, d);
    fid.kspace = simulate_mri(truth.mri, d);
    return fid;
}

inline Image2D fbp_baseline(const TomographicFidelity& fid)
{
    Sinogram scaled = *fid.sinogram;
    for (double& v : scaled.values()) v /= fid.cfg.pet_scale;
    return fbp(scaled, fid.cfg.geom, fid.kspace ? fid.kspace->width : fid.cfg.geom.n_detectors);
}

inline Image2D zero_filled_baseline(const TomographicFidelity& fid) { return ifft2_adjoint(*fid.kspace); }

struct AblationNets {
    ConvScoreNet joint;
    ConvScoreNet pet;
    ConvScoreNet mri;
};

inline AblationNets make_ablation_nets(const AblationConfig& c)
{
    AblationNets nets{ConvScoreNet(joint_modalities(), c.hidden, c.sched),
                      ConvScoreNet({Modality::Pet}, c.hidden, c.sched),
                      ConvScoreNet({Modality::Mri}, c.hidden, c.sched)};
    nets.joint.initialize(c.seed + 11);
    nets.pet.initialize(c.seed + 12);
    nets.mri.initialize(c.seed + 13);
    return nets;
}

/// Trains the three priors on the same pairs; single-modality nets see only
/// their own channel.
inline AblationNets train_ablation_nets(const AblationConfig& c, std::span<const ModalityPair> data,
                                        const std::function<void(const std::string&, int, double)>& on_epoch = {})
{
    AblationNets nets = make_ablation_nets(c);
    const auto run = [&](ConvScoreNet& net, const std::string& name) {
        TrainConfig t = c.train;
        t.seed = c.train.seed + (name == "joint" ? 0 : name == "pet" ? 1 : 2);
        train(net, data, t, c.sched, 0, [&](int e, double loss) {
            if (on_epoch) on_epoch(name, e, loss);
        });
    };
    run(nets.joint, "joint");
    run(nets.pet, "pet");
    run(nets.mri, "mri");
    return nets;
}

struct AblationCase {
    ModalityMetrics joint_pet, joint_mri;
    ModalityMetrics solo_pet, solo_mri;
    ModalityMetrics base_pet, base_mri;
};

inline AblationCase run_ablation_case(const ModalityPair& truth, const AblationConfig& c, const AblationNets& nets,
                                      std::uint64_t case_seed)
{
    const TomographicFidelity fid = degrade_case(truth, c, case_seed);
    SamplerConfig s = c.sampler;
    s.n_steps = c.sched.n_steps;
    s.seed = case_seed;
    const ModalityPair joint = joint_reconstruct(c.size, c.size, nets.joint, fid, c.sched, s);
    const Image2D pet = standalone_reconstruct(Modality::Pet, c.size, c.size, nets.pet, fid, c.sched, s);
    const Image2D mri = standalone_reconstruct(Modality::Mri, c.size, c.size, nets.mri, fid, c.sched, s);
    return {evaluate_image(joint.pet, truth.pet),  evaluate_image(joint.mri, truth.mri),
            evaluate_image(pet, truth.pet),        evaluate_image(mri, truth.mri),
            evaluate_image(fbp_baseline(fid), truth.pet), evaluate_image(zero_filled_baseline(fid), truth.mri)};
}

struct AblationReport {
    std::vector<AblationCase> cases;

    struct Row {
        std::string method;
        std::array<Aggregate, 6> cells; // pet psnr, ssim, nmse, mri psnr, ssim, nmse
    };

    template <class Pick>
    Row row(const std::string& method, Pick pick) const
    {
        Row r{method, {}};
        for (int m = 0; m < 2; ++m) {
            std::array<std::vector<double>, 3> v;
            for (const AblationCase& c : cases) {
                const ModalityMetrics& mm = pick(c, m == 0 ? Modality::Pet : Modality::Mri);
                v[0].push_back(mm.psnr);
                v[1].push_back(mm.ssim);
                v[2].push_back(mm.nmse);
            }
            for (int k = 0; k < 3; ++k) r.cells[static_cast<std::size_t>(m * 3 + k)] = aggregate(v[static_cast<std::size_t>(k)]);
        }
        return r;
    }

    Row standalone() const
    {
        return row("Stand-alone", [](const AblationCase& c, Modality m) -> const ModalityMetrics& {
            return m == Modality::Pet ? c.solo_pet : c.solo_mri;
        });
    }
    Row joint() const
    {
        return row("Joint", [](const AblationCase& c, Modality m) -> const ModalityMetrics& {
            return m == Modality::Pet ? c.joint_pet : c.joint_mri;
        });
    }
    Row baseline() const
    {
        return row("FBP / zero-filled", [](const AblationCase& c, Modality m) -> const ModalityMetrics& {
            return m == Modality::Pet ? c.base_pet : c.base_mri;
        });
    }
};

inline AblationReport run_ablation(const AblationConfig& c, const AblationNets& nets,
                                   std::span<const ModalityPair> truths,
                                   const std::function<void(int, const AblationCase&)>& on_case = {})
{
    AblationReport report;
    for (std::size_t k = 0; k < truths.size(); ++k) {
        report.cases.push_back(run_ablation_case(truths[k], c, nets, test_pair_seed(c, static_cast<int>(k))));
        if (on_case) on_case(static_cast<int>(k), report.cases.back());
    }
    return report;
}

inline AblationReport run_ablation(const AblationConfig& c, const AblationNets& nets,
                                   const std::function<void(int, const AblationCase&)>& on_case = {})
{
    const auto truths = test_pairs(c);
    return run_ablation(c, nets, truths, on_case);
}

/// Pipe table: one row per method, PET and MRI column groups.
inline std::string format_rows(const std::vector<AblationReport::Row>& rows)
{
    std::ostringstream os;
    os << "| Method | PET PSNR | PET SSIM | PET NMSE | MRI PSNR | MRI SSIM | MRI NMSE |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.method;
        for (const Aggregate& a : r.cells) os << " | " << a.format();
        os << " |\n";
    }
    return os.str();
}

inline std::string format_table(const AblationReport& report)
{
    return format_rows({report.standalone(), report.joint()});
}

} // namespace mcdiff

#endif
