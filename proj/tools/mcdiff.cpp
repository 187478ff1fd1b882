#include <mcdiff/mcdiff.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using mcdiff::io::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

void add_common(CLI::App& cmd, Common& c)
{
    cmd.add_option("--config", c.config, "JSON run configuration");
    cmd.add_option("--seed", c.seed, "random seed (overrides config)");
    cmd.add_option("--out", c.out, "output directory");
}

mcdiff::RunConfig effective_config(const Common& c)
{
    mcdiff::RunConfig cfg = c.config.empty() ? mcdiff::run_config_from_json(json::object())
                                             : mcdiff::load_run_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.sampler.seed = *c.seed;
    }
    return cfg;
}

fs::path prepare_out(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    mcdiff::require(!ec && fs::is_directory(dir), mcdiff::ErrorKind::IoError, "cannot create output directory '" + dir + "'");
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    mcdiff::require(static_cast<bool>(out), mcdiff::ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    out << text;
    mcdiff::require(static_cast<bool>(out), mcdiff::ErrorKind::IoError, "write to '" + path.string() + "' failed");
}

void write_config(const fs::path& dir, const mcdiff::RunConfig& cfg)
{
    write_text(dir / "config.json", mcdiff::to_json(cfg).dump(2) + "\n");
}

void require_file(const std::string& path)
{
    mcdiff::require(fs::is_regular_file(path), mcdiff::ErrorKind::IoError, "no such file '" + path + "'");
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<mcdiff::ModalityPair> load_dataset(const std::string& dir)
{
    mcdiff::require(fs::is_directory(dir), mcdiff::ErrorKind::IoError, "no such dataset directory '" + dir + "'");
    std::vector<fs::path> files;
    const fs::path manifest = fs::path(dir) / "manifest.json";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        json m;
        try {
            m = json::parse(in);
            for (const auto& e : m.at("entries")) files.push_back(fs::path(dir) / e.at("file").get<std::string>());
        } catch (const json::exception& e) {
            mcdiff::fail(mcdiff::ErrorKind::FormatError, "bad manifest '" + manifest.string() + "': " + e.what());
        }
    } else {
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".mcd" &&
                mcdiff::io::read_container(e.path()).kind() == "pair")
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
    }
    std::vector<mcdiff::ModalityPair> pairs;
    for (const auto& f : files) pairs.push_back(mcdiff::io::load_pair(f));
    return pairs;
}

int cmd_phantom(const Common& common, std::optional<int> count, std::optional<std::size_t> size)
{
    mcdiff::RunConfig cfg = effective_config(common);
    if (count) cfg.count = *count;
    if (size) cfg.phantom.size = *size;
    mcdiff::require(cfg.count >= 0, mcdiff::ErrorKind::InvalidArgument, "count must be >= 0");
    const fs::path out = prepare_out(common.out);
    const std::string hash = mcdiff::config_hash(cfg);
    json entries = json::array();
    for (int k = 0; k < cfg.count; ++k) {
        mcdiff::PhantomSpec spec = cfg.phantom;
        spec.seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(k);
        char name[32];
        std::snprintf(name, sizeof name, "pair_%04d.mcd", k);
        mcdiff::io::save_pair(out / name, mcdiff::gen_pair(spec), {{"config_hash", hash}, {"phantom_seed", spec.seed}});
        entries.push_back({{"file", name}, {"phantom_seed", spec.seed}});
    }
    const json manifest = {{"config_hash", hash}, {"count", cfg.count}, {"entries", entries}};
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    write_config(out, cfg);
    std::cout << manifest.dump(2) << "\n";
    return 0;
}

int cmd_degrade(const Common& common, const std::string& pair_path)
{
    const mcdiff::RunConfig cfg = effective_config(common);
    require_file(pair_path);
    const mcdiff::ModalityPair truth = mcdiff::io::load_pair(pair_path);
    const fs::path out = prepare_out(common.out);
    const std::string hash = mcdiff::config_hash(cfg);
    const std::size_t w = truth.pet.width(), h = truth.pet.height();

    mcdiff::DegradeConfig d;
    d.pet_dose = cfg.pet_dose;
    d.mri_noise_std = cfg.mri_noise_std;
    d.mask = mcdiff::make_cartesian_mask(h, cfg.acceleration, cfg.center_fraction, cfg.seed, w);
    d.seed = cfg.seed;
    const mcdiff::RadonGeometry geom = mcdiff::make_geometry(w, cfg.n_angles ? cfg.n_angles : mcdiff::default_angle_count(w));
    const mcdiff::Sinogram f = mcdiff::simulate_pet(truth.pet, geom, d);
    const mcdiff::KSpaceData g = mcdiff::simulate_mri(truth.mri, d);

    const json stamp = {{"config_hash", hash}};
    json sino_extra = stamp;
    sino_extra["pet_dose"] = cfg.pet_dose;
    sino_extra["image_width"] = w;
    sino_extra["image_height"] = h;
    mcdiff::io::save_sinogram(out / "sinogram.mcd", f, geom, sino_extra);
    mcdiff::io::save_kspace(out / "kspace.mcd", g, stamp);
    mcdiff::io::save_mask(out / "mask.mcd", d.mask, stamp);

    mcdiff::Sinogram scaled = f;
    for (double& v : scaled.values()) v /= cfg.pet_dose;
    const mcdiff::ModalityPair baseline{mcdiff::fbp(scaled, geom, w), mcdiff::ifft2_adjoint(g)};
    mcdiff::io::save_pair(out / "baseline.mcd", baseline, stamp);
    mcdiff::io::export_pgm(out / "baseline_pet.pgm", baseline.pet);
    mcdiff::io::export_pgm(out / "baseline_mri.pgm", baseline.mri);
    write_config(out, cfg);
    std::cout << "sinogram " << f.n_detectors() << "x" << f.n_angles() << ", mask " << d.mask.lines.size() << "/" << h
              << " lines, config " << hash << "\n";
    return 0;
}

int cmd_train(const Common& common, std::string dataset, const std::string& modalities, bool resume,
              std::optional<int> epochs)
{
    mcdiff::RunConfig cfg = effective_config(common);
    if (dataset.empty()) dataset = cfg.dataset;
    if (epochs) cfg.train.epochs = *epochs;
    mcdiff::require(!dataset.empty(), mcdiff::ErrorKind::InvalidArgument, "no dataset directory given");
    std::vector<mcdiff::Modality> mods;
    if (modalities == "joint") mods = mcdiff::joint_modalities();
    else if (modalities == "pet") mods = {mcdiff::Modality::Pet};
    else if (modalities == "mri") mods = {mcdiff::Modality::Mri};
    else mcdiff::fail(mcdiff::ErrorKind::InvalidArgument, "--modalities must be joint, pet or mri");

    const auto data = load_dataset(dataset);
    mcdiff::require(!data.empty(), mcdiff::ErrorKind::EmptyDataset, "dataset '" + dataset + "' holds no pairs");
    const fs::path out = prepare_out(common.out);
    const fs::path ckpt = out / "checkpoint.mcd", loss_csv = out / "loss.csv";
    const std::string hash = mcdiff::config_hash(cfg);

    mcdiff::ConvScoreNet net(mods, cfg.hidden, cfg.schedule);
    int done = 0;
    std::vector<std::string> rows;
    if (resume && fs::exists(ckpt)) {
        auto loaded = mcdiff::io::load_checkpoint(ckpt);
        mcdiff::require(loaded.net.modalities() == mods && loaded.net.hidden() == cfg.hidden &&
                            loaded.net.schedule() == cfg.schedule,
                        mcdiff::ErrorKind::InvalidArgument, "checkpoint does not match the configured network");
        net = std::move(loaded.net);
        done = loaded.info.epochs_completed;
        std::ifstream in(loss_csv);
        std::string line;
        std::getline(in, line); // header
        while (static_cast<int>(rows.size()) < done && std::getline(in, line)) rows.push_back(line);
        mcdiff::require(static_cast<int>(rows.size()) == done, mcdiff::ErrorKind::FormatError,
                        "loss CSV is shorter than the checkpoint's epoch count");
    } else {
        net.initialize(cfg.seed);
    }

    std::ofstream csv(loss_csv, std::ios::binary | std::ios::trunc);
    mcdiff::require(static_cast<bool>(csv), mcdiff::ErrorKind::IoError, "cannot open '" + loss_csv.string() + "'");
    csv << "epoch,loss\n";
    for (const auto& r : rows) csv << r << "\n";
    csv.flush();

    const int remaining = cfg.train.epochs - done;
    if (remaining > 0) {
        mcdiff::TrainConfig t = cfg.train;
        t.epochs = remaining;
        t.seed = cfg.seed;
        mcdiff::train(net, data, t, cfg.schedule, done, [&](int e, double loss) {
            csv << e << "," << num(loss) << "\n";
            csv.flush();
            const fs::path tmp = out / "checkpoint.mcd.tmp";
            mcdiff::io::save_checkpoint(tmp, net, {cfg.seed, e + 1});
            fs::rename(tmp, ckpt);
            std::cerr << "epoch " << e << " loss " << num(loss) << "\n";
        });
    } else if (!fs::exists(ckpt)) {
        mcdiff::io::save_checkpoint(ckpt, net, {cfg.seed, done});
    }
    write_config(out, cfg);
    std::cout << "checkpoint " << ckpt.string() << " (" << std::max(done, cfg.train.epochs) << " epochs, config " << hash
              << ")\n";
    return 0;
}

struct ReconstructArgs {
    std::string sinogram, kspace, mask, score = "oracle", standalone, fidelity;
    std::optional<int> steps, corrector;
};

int cmd_reconstruct(const Common& common, const ReconstructArgs& a)
{
    mcdiff::RunConfig cfg = effective_config(common);
    if (!a.fidelity.empty()) cfg.sampler.fidelity_variant = mcdiff::fidelity_variant_from(a.fidelity);
    if (a.corrector) cfg.sampler.corrector_steps = *a.corrector;
    if (a.steps) cfg.schedule.n_steps = *a.steps;

    std::optional<mcdiff::Modality> solo;
    if (a.standalone == "pet") solo = mcdiff::Modality::Pet;
    else if (a.standalone == "mri") solo = mcdiff::Modality::Mri;
    else mcdiff::require(a.standalone.empty(), mcdiff::ErrorKind::InvalidArgument, "--standalone must be pet or mri");
    const bool need_pet = !solo || *solo == mcdiff::Modality::Pet;
    const bool need_mri = !solo || *solo == mcdiff::Modality::Mri;

    std::unique_ptr<mcdiff::ScoreModel> score;
    if (a.score.rfind("checkpoint:", 0) == 0) {
        const std::string path = a.score.substr(11);
        require_file(path);
        auto loaded = mcdiff::io::load_checkpoint(path);
        mcdiff::require(!a.steps || *a.steps == loaded.net.schedule().n_steps, mcdiff::ErrorKind::InvalidArgument,
                        "--steps differs from the checkpoint's schedule");
        cfg.schedule = loaded.net.schedule();
        score = std::make_unique<mcdiff::ConvScoreNet>(std::move(loaded.net));
    } else if (a.score == "oracle") {
        mcdiff::validate_schedule(cfg.schedule);
        const auto& o = cfg.oracle;
        mcdiff::GaussianOracle oracle(o.mean_pet, o.mean_mri, o.std_pet, o.std_mri, o.rho, cfg.schedule);
        score = solo ? std::make_unique<mcdiff::GaussianOracle>(oracle.marginal(*solo))
                     : std::make_unique<mcdiff::GaussianOracle>(oracle);
    } else {
        mcdiff::fail(mcdiff::ErrorKind::InvalidArgument, "--score must be 'oracle' or 'checkpoint:PATH'");
    }
    cfg.sampler.n_steps = cfg.schedule.n_steps;

    mcdiff::TomographicFidelity fid;
    fid.cfg.variant = cfg.sampler.fidelity_variant;
    fid.cfg.ratio_clamp = cfg.sampler.ratio_clamp;
    fid.cfg.mri_weight = cfg.mri_weight;
    fid.cfg.pet_scale = cfg.pet_dose;
    std::size_t w = 0, h = 0;
    if (need_pet) {
        mcdiff::require(!a.sinogram.empty(), mcdiff::ErrorKind::InvalidArgument, "--sinogram is required for PET");
        require_file(a.sinogram);
        auto s = mcdiff::io::load_sinogram(a.sinogram);
        fid.cfg.geom = s.geometry;
        fid.cfg.pet_scale = s.extra.value("pet_dose", cfg.pet_dose);
        w = s.extra.value("image_width", s.geometry.n_detectors);
        h = s.extra.value("image_height", s.geometry.n_detectors);
        fid.sinogram = std::move(s.sinogram);
    }
    if (need_mri) {
        mcdiff::require(!a.kspace.empty(), mcdiff::ErrorKind::InvalidArgument, "--kspace is required for MRI");
        require_file(a.kspace);
        mcdiff::KSpaceData g = mcdiff::io::load_kspace(a.kspace);
        if (!a.mask.empty()) {
            require_file(a.mask);
            g.mask = mcdiff::io::load_mask(a.mask);
        }
        mcdiff::require(g.mask.has_value(), mcdiff::ErrorKind::InvalidArgument, "k-space carries no mask; pass --mask");
        mcdiff::require(w == 0 || (w == g.width && h == g.height), mcdiff::ErrorKind::DimensionMismatch,
                        "sinogram and k-space describe different image sizes");
        w = g.width;
        h = g.height;
        fid.cfg.mask = *g.mask;
        fid.kspace = std::move(g);
    }

    const fs::path out = prepare_out(common.out);
    const std::string hash = mcdiff::config_hash(cfg);
    std::ofstream trace(out / "trace.csv", std::ios::binary | std::ios::trunc);
    mcdiff::require(static_cast<bool>(trace), mcdiff::ErrorKind::IoError, "cannot write trace.csv");
    trace << "# config_hash=" << hash << "\n";
    trace << "i,j,score_norm_pet,score_norm_mri,grad_norm_pet,grad_norm_mri,nll_pet,nll_mri\n";
    const mcdiff::TraceSink sink = [&](const mcdiff::TraceRow& r) {
        trace << r.i << "," << r.j << "," << num(r.score_norm_pet) << "," << num(r.score_norm_mri) << ","
              << num(r.grad_norm_pet) << "," << num(r.grad_norm_mri) << "," << num(r.nll_pet) << ","
              << num(r.nll_mri) << "\n";
    };

    const json stamp = {{"config_hash", hash}};
    if (solo) {
        const mcdiff::Image2D img =
            mcdiff::standalone_reconstruct(*solo, w, h, *score, fid, cfg.schedule, cfg.sampler, sink);
        json extra = stamp;
        extra["modality"] = mcdiff::to_string(*solo);
        mcdiff::io::save_image(out / "recon.mcd", img, extra);
        mcdiff::io::export_pgm(out / ("recon_" + mcdiff::to_string(*solo) + ".pgm"), img);
    } else {
        const mcdiff::ModalityPair pair = mcdiff::joint_reconstruct(w, h, *score, fid, cfg.schedule, cfg.sampler, sink);
        mcdiff::io::save_pair(out / "recon.mcd", pair, stamp);
        mcdiff::io::export_pgm(out / "recon_pet.pgm", pair.pet);
        mcdiff::io::export_pgm(out / "recon_mri.pgm", pair.mri);
    }
    trace.close();
    mcdiff::require(static_cast<bool>(trace), mcdiff::ErrorKind::IoError, "write to trace.csv failed");
    write_config(out, cfg);
    std::cout << "reconstruction written to " << (out / "recon.mcd").string() << " (config " << hash << ")\n";
    return 0;
}

int cmd_eval(const Common& common, const std::string& recon_path, const std::string& truth_path)
{
    require_file(recon_path);
    require_file(truth_path);
    const mcdiff::ModalityPair truth = mcdiff::io::load_pair(truth_path);
    const mcdiff::io::Container head = mcdiff::io::read_container(recon_path);
    json report = json::object();
    if (head.kind() == "pair") {
        const mcdiff::ModalityPair recon = mcdiff::io::load_pair(recon_path);
        report["pet"] = mcdiff::io::metrics_to_json(mcdiff::evaluate_image(recon.pet, truth.pet));
        report["mri"] = mcdiff::io::metrics_to_json(mcdiff::evaluate_image(recon.mri, truth.mri));
    } else {
        const std::string mod = head.extra().value("modality", "");
        mcdiff::require(mod == "pet" || mod == "mri", mcdiff::ErrorKind::FormatError,
                        "reconstruction image does not name its modality");
        const mcdiff::Image2D recon = mcdiff::io::load_image(recon_path);
        const mcdiff::Modality m = mod == "pet" ? mcdiff::Modality::Pet : mcdiff::Modality::Mri;
        report[mod] = mcdiff::io::metrics_to_json(mcdiff::evaluate_image(recon, truth.channel(m)));
    }
    const fs::path out = prepare_out(common.out);
    write_text(out / "metrics.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
}

json case_json(const mcdiff::AblationCase& c)
{
    using mcdiff::io::metrics_to_json;
    return {{"joint", {{"pet", metrics_to_json(c.joint_pet)}, {"mri", metrics_to_json(c.joint_mri)}}},
            {"standalone", {{"pet", metrics_to_json(c.solo_pet)}, {"mri", metrics_to_json(c.solo_mri)}}},
            {"baseline", {{"pet", metrics_to_json(c.base_pet)}, {"mri", metrics_to_json(c.base_mri)}}}};
}

int cmd_ablate(const Common& common, std::string dataset, const std::string& test_dir)
{
    const mcdiff::RunConfig cfg = effective_config(common);
    if (dataset.empty()) dataset = cfg.dataset;
    const mcdiff::AblationConfig ac = mcdiff::ablation_config(cfg);
    const fs::path out = prepare_out(common.out);
    const std::string hash = mcdiff::config_hash(cfg);

    const auto train_data = dataset.empty() ? mcdiff::training_pairs(ac) : load_dataset(dataset);
    mcdiff::require(!train_data.empty(), mcdiff::ErrorKind::EmptyDataset, "no training pairs");
    const auto truths = test_dir.empty() ? mcdiff::test_pairs(ac) : load_dataset(test_dir);

    std::ofstream loss(out / "loss.csv", std::ios::binary | std::ios::trunc);
    loss << "# config_hash=" << hash << "\nnet,epoch,loss\n";
    const mcdiff::AblationNets nets = mcdiff::train_ablation_nets(ac, train_data, [&](const std::string& n, int e, double l) {
        loss << n << "," << e << "," << num(l) << "\n";
        loss.flush();
        std::cerr << n << " epoch " << e << " loss " << num(l) << "\n";
    });
    mcdiff::io::save_checkpoint(out / "joint.mcd", nets.joint, {cfg.seed, cfg.train.epochs});
    mcdiff::io::save_checkpoint(out / "pet.mcd", nets.pet, {cfg.seed, cfg.train.epochs});
    mcdiff::io::save_checkpoint(out / "mri.mcd", nets.mri, {cfg.seed, cfg.train.epochs});

    json cases = json::array();
    const mcdiff::AblationReport report = mcdiff::run_ablation(ac, nets, truths, [&](int k, const mcdiff::AblationCase& c) {
        cases.push_back(case_json(c));
        std::cerr << "case " << k << " done\n";
    });
    const std::string table = mcdiff::format_table(report);
    const std::string baseline = mcdiff::format_rows({report.baseline()});
    write_text(out / "table.md", table + "\nBaselines:\n\n" + baseline);
    write_text(out / "ablation.json", json({{"config_hash", hash}, {"cases", cases}}).dump(2) + "\n");
    write_config(out, cfg);
    std::cout << table << "\nBaselines:\n\n" << baseline;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Joint PET-MRI reconstruction with score-based diffusion priors"};
    app.require_subcommand(1);

    Common common;

    auto* phantom = app.add_subcommand("phantom", "generate synthetic PET/MRI phantom pairs");
    add_common(*phantom, common);
    std::optional<int> count;
    std::optional<std::size_t> size;
    phantom->add_option("--count,-n", count, "number of pairs (overrides phantom.count)");
    phantom->add_option("--size", size, "image side length (overrides phantom.size)");

    auto* degrade = app.add_subcommand("degrade", "simulate PET counts and undersampled k-space for a pair");
    add_common(*degrade, common);
    std::string pair_path;
    degrade->add_option("pair", pair_path, "pair file")->required();

    auto* train = app.add_subcommand("train", "train a convolutional score network");
    add_common(*train, common);
    std::string dataset, modalities = "joint";
    bool resume = false;
    std::optional<int> epochs;
    train->add_option("dataset", dataset, "directory of pair files (default: paths.dataset)");
    train->add_option("--modalities", modalities, "joint, pet or mri");
    train->add_option("--epochs", epochs, "total epochs (overrides train.epochs)");
    train->add_flag("--resume", resume, "continue from OUT/checkpoint.mcd");

    auto* recon = app.add_subcommand("reconstruct", "sample a reconstruction from measurements");
    add_common(*recon, common);
    ReconstructArgs ra;
    recon->add_option("--sinogram", ra.sinogram, "PET sinogram file");
    recon->add_option("--kspace", ra.kspace, "MRI k-space file");
    recon->add_option("--mask", ra.mask, "sampling mask file (default: the one stored with the k-space)");
    recon->add_option("--score", ra.score, "oracle or checkpoint:PATH");
    recon->add_option("--standalone", ra.standalone, "reconstruct only pet or mri");
    recon->add_option("--fidelity", ra.fidelity, "fbp or poisson");
    recon->add_option("--steps", ra.steps, "number of noise levels");
    recon->add_option("--corrector", ra.corrector, "corrector steps per level");

    auto* eval = app.add_subcommand("eval", "PSNR, SSIM and NMSE of a reconstruction");
    add_common(*eval, common);
    std::string recon_path, truth_path;
    eval->add_option("recon", recon_path, "reconstruction file")->required();
    eval->add_option("truth", truth_path, "ground-truth pair file")->required();

    auto* ablate = app.add_subcommand("ablate", "joint versus stand-alone reconstruction table");
    add_common(*ablate, common);
    std::string abl_dataset, abl_test;
    ablate->add_option("dataset", abl_dataset, "training pairs (default: generated from the config)");
    ablate->add_option("--test", abl_test, "held-out pairs (default: generated from the config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "mcdiff: " << e.what() << "\n";
        return e.get_exit_code() ? e.get_exit_code() : 2;
    }

    try {
        if (phantom->parsed()) return cmd_phantom(common, count, size);
        if (degrade->parsed()) return cmd_degrade(common, pair_path);
        if (train->parsed()) return cmd_train(common, dataset, modalities, resume, epochs);
        if (recon->parsed()) return cmd_reconstruct(common, ra);
        if (eval->parsed()) return cmd_eval(common, recon_path, truth_path);
        if (ablate->parsed()) return cmd_ablate(common, abl_dataset, abl_test);
    } catch (const mcdiff::Error& e) {
        std::cerr << "mcdiff: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "mcdiff: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
