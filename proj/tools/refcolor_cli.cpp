// Command-line entry point: corpus generation, reference indexing, the two
// training stages, colorization, super-resolution, and metric evaluation.
//
// Exit codes: 0 success, 2 configuration error (the message names the
// offending option), 1 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "refcolor/bench.hpp"
#include "refcolor/colorizer.hpp"
#include "refcolor/errors.hpp"
#include "refcolor/imaging.hpp"
#include "refcolor/log.hpp"
#include "refcolor/metrics.hpp"
#include "refcolor/png_io.hpp"
#include "refcolor/superres.hpp"

namespace fs = std::filesystem;
using namespace refcolor;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int default_workers() {
    const unsigned hc = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hc == 0 ? 1u : hc, 8u));
}

void require_file(const std::string& path, const std::string& key) {
    if (!fs::is_regular_file(path))
        throw ConfigError(key + ": file not found: " + path);
}

void require_dir(const std::string& path, const std::string& key) {
    if (!fs::is_directory(path))
        throw ConfigError(key + ": directory not found: " + path);
}

void write_snapshot(const std::string& out_dir, const nlohmann::json& resolved) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "config_snapshot.json");
    f << resolved.dump(2) << "\n";
}

std::pair<std::vector<Raster>, std::vector<std::string>> load_pool(const std::string& dir) {
    std::vector<Raster> pool;
    std::vector<std::string> ids;
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) {
        pool.push_back(read_png((fs::path(dir) / n).string()));
        ids.push_back(n);
    }
    if (pool.empty()) throw ConfigError("--pool: no .png files in " + dir);
    return {std::move(pool), std::move(ids)};
}

// Side-by-side contact sheet; rows of equal-height cells, 0.5 gray filler.
Raster contact_sheet(const std::vector<std::vector<Raster>>& rows, int cell_w, int cell_h) {
    size_t cols = 0;
    for (const auto& r : rows) cols = std::max(cols, r.size());
    const int pad = 2;
    Raster sheet(static_cast<int>(cols) * (cell_w + pad) + pad,
                 static_cast<int>(rows.size()) * (cell_h + pad) + pad, 3, 0.5);
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[r].size(); ++c) {
            Raster cell = resample(rows[r][c].to_rgb(), cell_w, cell_h);
            sheet.paste(cell, static_cast<int>(c) * (cell_w + pad) + pad,
                        static_cast<int>(r) * (cell_h + pad) + pad);
        }
    return sheet;
}

// ---------------------------------------------------------------- commands

int cmd_gen_corpus(const std::string& out_root, const std::string& chapter_id, SyntheticSpec spec,
                   const std::vector<std::string>& hue_overrides, int workers) {
    for (const auto& ov : hue_overrides) {
        const auto colon = ov.find(':');
        if (colon == std::string::npos)
            throw ConfigError("--hue-override: expected <char_index>:<degrees>, got " + ov);
        spec.hue_overrides[std::stoi(ov.substr(0, colon))] = std::stod(ov.substr(colon + 1));
    }
    try {
        spec.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("gen-corpus: ") + e.what());
    }
    ChapterManifest man = generate_chapter(spec, out_root, chapter_id, workers);
    RC_LOG_INFO("chapter '%s': %zu refs, %zu test pages at %s", chapter_id.c_str(),
                man.refs.size(), man.tests.size(), man.root.c_str());

    nlohmann::json snap{{"command", "gen-corpus"},
                        {"chapter_id", chapter_id},
                        {"n_characters", spec.n_characters},
                        {"n_refs", spec.n_refs},
                        {"n_pages", spec.n_pages},
                        {"page_w", spec.page_w},
                        {"page_h", spec.page_h},
                        {"style", spec.style},
                        {"seed", spec.seed},
                        {"workers", workers}};
    write_snapshot(man.root, snap);
    return 0;
}

int cmd_index(const std::string& refs_dir, const std::string& out_file,
              const std::string& encoder_choice, int workers) {
    require_dir(refs_dir, "--refs");
    auto encoder = make_encoder(encoder_choice);
    auto [pool, ids] = load_pool(refs_dir);
    ReferenceIndex idx = build_reference_index(pool, ids, *encoder, workers);
    fs::create_directories(fs::path(out_file).parent_path().empty()
                               ? "."
                               : fs::path(out_file).parent_path().string());
    idx.save(out_file);
    RC_LOG_INFO("index: %zu entries (%zu references) -> %s", idx.entries.size(), pool.size(),
                out_file.c_str());
    return 0;
}

int cmd_train_icp(const std::string& manifest_path, const std::string& out_dir,
                  const std::string& resume, IcpTrainConfig tcfg, double mu, int rank,
                  const std::string& encoder_choice, const std::string& resolution, int workers) {
    require_file(manifest_path, "--corpus");
    tcfg.workers = workers;

    IcpBundleConfig bcfg;
    bcfg.mu = mu;
    bcfg.lora_rank = rank;
    bcfg.lora_alpha = static_cast<double>(rank);
    bcfg.init_seed = mix_seed(tcfg.seed, 0x1c9);

    IcpBundle bundle = resume.empty() ? IcpBundle(bcfg) : IcpBundle::load(resume);
    if (!resume.empty()) RC_LOG_INFO("resumed bundle from %s", resume.c_str());

    ChapterManifest man = load_manifest(manifest_path);
    auto encoder = make_encoder(encoder_choice);
    LayoutConfig layout = ColorizeConfig::preset(resolution);
    IcpDataset data(man, *encoder, layout, workers);
    RC_LOG_INFO("dataset: %zu pages, index %zu entries", data.page_count(),
                data.index().entries.size());

    TrainLog log = train_icp(bundle, data, tcfg);

    fs::create_directories(out_dir);
    const std::string ckpt = (fs::path(out_dir) / "icp.ckpt").string();
    bundle.save(ckpt);

    nlohmann::json losses{{"ae", log.ae_losses}, {"unet", log.unet_losses}, {"icp", log.icp_losses}};
    std::ofstream lf(fs::path(out_dir) / "train_losses.json");
    lf << losses.dump() << "\n";

    write_snapshot(out_dir, nlohmann::json{{"command", "train-icp"},
                                           {"corpus", manifest_path},
                                           {"resume", resume},
                                           {"ae_steps", tcfg.ae_steps},
                                           {"unet_steps", tcfg.unet_steps},
                                           {"icp_steps", tcfg.icp_steps},
                                           {"batch", tcfg.icp_batch},
                                           {"mu", mu},
                                           {"rank", rank},
                                           {"resolution", resolution},
                                           {"encoder", encoder_choice},
                                           {"seed", tcfg.seed},
                                           {"workers", workers}});
    RC_LOG_INFO("checkpoint written to %s", ckpt.c_str());
    return 0;
}

int cmd_train_gsrp(const std::string& manifest_path, const std::string& out_dir,
                   const std::string& icp_ckpt, SrTrainConfig scfg, int scale,
                   const std::string& l1_target) {
    require_file(manifest_path, "--corpus");
    ChapterManifest man = load_manifest(manifest_path);

    SrBundleConfig bcfg;
    bcfg.scale_factor = scale;
    bcfg.l1_target = l1_target;
    bcfg.init_seed = mix_seed(scfg.seed, 0x95b);
    SrBundle bundle(bcfg);

    std::optional<IcpBundle> icp;
    if (!icp_ckpt.empty()) {
        require_file(icp_ckpt, "--icp-ckpt");
        icp.emplace(IcpBundle::load(icp_ckpt));
        bundle.init_from_autoencoder(icp->ae());
        RC_LOG_INFO("sr encoder warm-started from %s", icp_ckpt.c_str());
    }

    std::vector<double> losses =
        train_gsrp(bundle, man, icp ? &icp->ae() : nullptr, scfg);

    fs::create_directories(out_dir);
    const std::string ckpt = (fs::path(out_dir) / "gsrp.ckpt").string();
    bundle.save(ckpt);
    std::ofstream lf(fs::path(out_dir) / "train_losses.json");
    lf << nlohmann::json{{"gsrp", losses}}.dump() << "\n";

    write_snapshot(out_dir, nlohmann::json{{"command", "train-gsrp"},
                                           {"corpus", manifest_path},
                                           {"icp_ckpt", icp_ckpt},
                                           {"steps", scfg.steps},
                                           {"batch", scfg.batch},
                                           {"crop", scfg.crop},
                                           {"lr", scfg.lr},
                                           {"scale", scale},
                                           {"l1_target", l1_target},
                                           {"seed", scfg.seed}});
    RC_LOG_INFO("checkpoint written to %s", ckpt.c_str());
    return 0;
}

int cmd_colorize(const std::string& bw_path, const std::string& pool_dir,
                 const std::string& ckpt_path, const std::string& out_dir,
                 const std::string& index_path, const std::string& gt_path, int steps,
                 uint64_t seed, const std::string& resolution, const std::string& encoder_choice,
                 bool emit_gallery) {
    require_file(bw_path, "--bw");
    require_dir(pool_dir, "--pool");
    require_file(ckpt_path, "--ckpt");

    IcpBundle bundle = IcpBundle::load(ckpt_path);
    auto encoder = make_encoder(encoder_choice);

    ColorizeConfig cfg;
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.layout = ColorizeConfig::preset(resolution);
    cfg.encoder = encoder_choice;

    Raster bw = read_png(bw_path);
    if (bw.channels() != 1) bw = to_grayscale(bw);
    auto [pool, ids] = load_pool(pool_dir);

    std::optional<ReferenceIndex> prebuilt;
    if (!index_path.empty()) {
        require_file(index_path, "--index");
        prebuilt = ReferenceIndex::load(index_path, encoder->id());
    }

    Raster out = colorize(bw, pool, ids, bundle, *encoder, cfg,
                          prebuilt ? &*prebuilt : nullptr);

    fs::create_directories(out_dir);
    const std::string out_png =
        (fs::path(out_dir) / (fs::path(bw_path).stem().string() + "_color.png")).string();
    write_png(out, out_png);

    if (emit_gallery) {
        std::vector<std::vector<Raster>> rows;
        std::vector<Raster> row{bw, out};
        if (!gt_path.empty()) {
            require_file(gt_path, "--gt");
            row.push_back(read_png(gt_path));
        }
        rows.push_back(std::move(row));
        write_png(contact_sheet(rows, cfg.layout.target_w, cfg.layout.target_h),
                  (fs::path(out_dir) / "gallery.png").string());
    }

    write_snapshot(out_dir, nlohmann::json{{"command", "colorize"},
                                           {"bw", bw_path},
                                           {"pool", pool_dir},
                                           {"ckpt", ckpt_path},
                                           {"index", index_path},
                                           {"steps", steps},
                                           {"seed", seed},
                                           {"resolution", resolution},
                                           {"encoder", encoder_choice}});
    RC_LOG_INFO("colorized page written to %s", out_png.c_str());
    return 0;
}

int cmd_sr(const std::string& bw_path, const std::string& color_low_path,
           const std::string& ckpt_path, const std::string& out_dir) {
    require_file(bw_path, "--bw");
    require_file(color_low_path, "--color-low");
    require_file(ckpt_path, "--ckpt");

    SrBundle bundle = SrBundle::load(ckpt_path);
    Raster bw = read_png(bw_path);
    Raster low = read_png(color_low_path);
    Raster out = super_resolve(bw, low, bundle);

    fs::create_directories(out_dir);
    const std::string out_png =
        (fs::path(out_dir) / (fs::path(bw_path).stem().string() + "_sr.png")).string();
    write_png(out, out_png);
    write_snapshot(out_dir, nlohmann::json{{"command", "sr"},
                                           {"bw", bw_path},
                                           {"color_low", color_low_path},
                                           {"ckpt", ckpt_path}});
    RC_LOG_INFO("high-resolution page written to %s", out_png.c_str());
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_dir,
             const std::string& encoder_choice, const std::string& extractor_choice,
             int ssim_window, bool ssim_gaussian, bool emit_gallery, int workers) {
    require_dir(pred_dir, "--pred");
    require_dir(gt_dir, "--gt");

    EvaluateConfig cfg;
    cfg.encoder = make_encoder(encoder_choice);
    cfg.extractor = make_encoder(extractor_choice);
    cfg.ssim_opts.window = ssim_window;
    cfg.ssim_opts.gaussian = ssim_gaussian;
    cfg.workers = workers;

    MetricsReport report = evaluate(pred_dir, gt_dir, cfg);

    fs::create_directories(out_dir);
    {
        std::ofstream f(fs::path(out_dir) / "report.txt");
        f << report.to_text();
    }
    {
        std::ofstream f(fs::path(out_dir) / "report.json");
        f << report.to_json() << "\n";
    }

    if (emit_gallery) {
        std::vector<std::vector<Raster>> rows;
        for (size_t i = 0; i < report.per_image.size() && i < 8; ++i) {
            const std::string& name = report.per_image[i].name;
            rows.push_back({read_png((fs::path(pred_dir) / name).string()),
                            read_png((fs::path(gt_dir) / name).string())});
        }
        write_png(contact_sheet(rows, 128, 192), (fs::path(out_dir) / "gallery.png").string());
    }

    write_snapshot(out_dir, nlohmann::json{{"command", "eval"},
                                           {"pred", pred_dir},
                                           {"gt", gt_dir},
                                           {"encoder", encoder_choice},
                                           {"extractor", extractor_choice},
                                           {"ssim_window", ssim_window},
                                           {"ssim_gaussian", ssim_gaussian},
                                           {"workers", workers}});

    RC_LOG_INFO("report: psnr=%s ssim=%.4f clip_is=%.4f fid=%.4f (%d images)",
                std::isinf(report.mean_psnr) ? "inf" : std::to_string(report.mean_psnr).c_str(),
                report.mean_ssim, report.mean_clip_is, report.fid, report.count);
    std::printf("%s", report.to_text().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reference-based image-sequence colorization pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI file");
    app.allow_config_extras(false);

    std::string log_level = "info";
    int workers = default_workers();
    app.add_option("--log-level", log_level, "debug|info|warn|error")->capture_default_str();
    app.add_option("--workers", workers, "Worker threads for parallel stages")
        ->capture_default_str();

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic benchmark chapter");
    std::string g_out = "corpus", g_id = "chapter_000";
    SyntheticSpec g_spec;
    std::vector<std::string> g_hues;
    gen->add_option("--out", g_out, "Corpus root directory")->capture_default_str();
    gen->add_option("--chapter-id", g_id, "Chapter directory name")->capture_default_str();
    gen->add_option("--chars", g_spec.n_characters, "Recurring characters")->capture_default_str();
    gen->add_option("--refs", g_spec.n_refs, "Reference pages")->capture_default_str();
    gen->add_option("--pages", g_spec.n_pages, "Test pages")->capture_default_str();
    gen->add_option("--page-w", g_spec.page_w)->capture_default_str();
    gen->add_option("--page-h", g_spec.page_h)->capture_default_str();
    gen->add_option("--panels-min", g_spec.min_panels)->capture_default_str();
    gen->add_option("--panels-max", g_spec.max_panels)->capture_default_str();
    gen->add_option("--style", g_spec.style, "grayscale|screenstyle")->capture_default_str();
    gen->add_option("--seed", g_spec.seed)->capture_default_str();
    gen->add_option("--hue-override", g_hues, "<char_index>:<degrees> (repeatable)");

    // index
    auto* idx = app.add_subcommand("index", "Build and persist a reference index");
    std::string i_refs, i_out = "reference.index", i_encoder = "toy";
    idx->add_option("--refs", i_refs, "Directory of reference PNGs")->required();
    idx->add_option("--out", i_out, "Output index file")->capture_default_str();
    idx->add_option("--encoder", i_encoder, "toy | linear:<path>")->capture_default_str();

    // train-icp
    auto* ticp = app.add_subcommand("train-icp", "Train the in-context colorization stage");
    std::string t_corpus, t_out = "runs/icp", t_resume, t_encoder = "toy", t_resolution = "desk";
    IcpTrainConfig t_cfg;
    double t_mu = 1.5;
    int t_rank = 64;
    ticp->add_option("--corpus", t_corpus, "Chapter manifest.json")->required();
    ticp->add_option("--out-dir", t_out)->capture_default_str();
    ticp->add_option("--resume", t_resume, "Existing icp.ckpt to continue from");
    ticp->add_option("--ae-steps", t_cfg.ae_steps)->capture_default_str();
    ticp->add_option("--unet-steps", t_cfg.unet_steps)->capture_default_str();
    ticp->add_option("--steps", t_cfg.icp_steps, "Colorization training steps")
        ->capture_default_str();
    ticp->add_option("--batch", t_cfg.icp_batch)->capture_default_str();
    ticp->add_option("--lr", t_cfg.icp_lr)->capture_default_str();
    ticp->add_option("--mu", t_mu, "Timestep-shift strength")->capture_default_str();
    ticp->add_option("--rank", t_rank, "LoRA rank")->capture_default_str();
    ticp->add_option("--resolution", t_resolution, "desk|512x800|1024x1600|1280x2000")
        ->capture_default_str();
    ticp->add_option("--encoder", t_encoder)->capture_default_str();
    ticp->add_option("--seed", t_cfg.seed)->capture_default_str();

    // train-gsrp
    auto* tsr = app.add_subcommand("train-gsrp", "Train the guided super-resolution stage");
    std::string s_corpus, s_out = "runs/gsrp", s_icp, s_l1 = "color";
    SrTrainConfig s_cfg;
    int s_scale = 2;
    tsr->add_option("--corpus", s_corpus, "Chapter manifest.json")->required();
    tsr->add_option("--out-dir", s_out)->capture_default_str();
    tsr->add_option("--icp-ckpt", s_icp, "Warm-start encoder + degradation VAE");
    tsr->add_option("--steps", s_cfg.steps)->capture_default_str();
    tsr->add_option("--batch", s_cfg.batch)->capture_default_str();
    tsr->add_option("--crop", s_cfg.crop)->capture_default_str();
    tsr->add_option("--lr", s_cfg.lr)->capture_default_str();
    tsr->add_option("--scale", s_scale, "Super-resolution factor k")->capture_default_str();
    tsr->add_option("--l1-target", s_l1, "color|bw reconstruction target")->capture_default_str();
    tsr->add_option("--seed", s_cfg.seed)->capture_default_str();

    // colorize
    auto* col = app.add_subcommand("colorize", "Colorize one page against a reference pool");
    std::string c_bw, c_pool, c_ckpt, c_out = "runs/colorize", c_index, c_gt,
                c_encoder = "toy", c_resolution = "desk";
    int c_steps = 20;
    uint64_t c_seed = 0;
    bool c_gallery = false;
    col->add_option("--bw", c_bw, "Black-and-white input page")->required();
    col->add_option("--pool", c_pool, "Directory of colored reference PNGs")->required();
    col->add_option("--ckpt", c_ckpt, "icp.ckpt")->required();
    col->add_option("--out-dir", c_out)->capture_default_str();
    col->add_option("--index", c_index, "Prebuilt reference index (optional)");
    col->add_option("--gt", c_gt, "Ground truth (gallery only)");
    col->add_option("--steps", c_steps, "Sampling steps")->capture_default_str();
    col->add_option("--seed", c_seed)->capture_default_str();
    col->add_option("--resolution", c_resolution)->capture_default_str();
    col->add_option("--encoder", c_encoder)->capture_default_str();
    col->add_flag("--emit-gallery", c_gallery, "Write a bw/prediction contact sheet");

    // sr
    auto* sr = app.add_subcommand("sr", "Guided super-resolution of a colorized page");
    std::string r_bw, r_low, r_ckpt, r_out = "runs/sr";
    sr->add_option("--bw", r_bw, "High-resolution bw page")->required();
    sr->add_option("--color-low", r_low, "Low-resolution colorized page")->required();
    sr->add_option("--ckpt", r_ckpt, "gsrp.ckpt")->required();
    sr->add_option("--out-dir", r_out)->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "Metric report over prediction/ground-truth dirs");
    std::string e_pred, e_gt, e_out = "runs/eval", e_encoder = "toy", e_extractor = "toy";
    int e_window = 8;
    bool e_gaussian = false, e_gallery = false;
    ev->add_option("--pred", e_pred)->required();
    ev->add_option("--gt", e_gt)->required();
    ev->add_option("--out-dir", e_out)->capture_default_str();
    ev->add_option("--encoder", e_encoder, "CLIP-IS embedding encoder")->capture_default_str();
    ev->add_option("--extractor", e_extractor, "FID feature extractor")->capture_default_str();
    ev->add_option("--ssim-window", e_window)->capture_default_str();
    ev->add_flag("--ssim-gaussian", e_gaussian, "11x11 Gaussian SSIM window");
    ev->add_flag("--emit-gallery", e_gallery, "Write a prediction/gt contact sheet");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n\n%s", e.what(), app.help().c_str());
        return 2;
    }

    set_log_level(log_level);

    try {
        if (gen->parsed())
            return cmd_gen_corpus(g_out, g_id, g_spec, g_hues, workers);
        if (idx->parsed()) return cmd_index(i_refs, i_out, i_encoder, workers);
        if (ticp->parsed())
            return cmd_train_icp(t_corpus, t_out, t_resume, t_cfg, t_mu, t_rank, t_encoder,
                                 t_resolution, workers);
        if (tsr->parsed()) return cmd_train_gsrp(s_corpus, s_out, s_icp, s_cfg, s_scale, s_l1);
        if (col->parsed())
            return cmd_colorize(c_bw, c_pool, c_ckpt, c_out, c_index, c_gt, c_steps, c_seed,
                                c_resolution, c_encoder, c_gallery);
        if (sr->parsed()) return cmd_sr(r_bw, r_low, r_ckpt, r_out);
        if (ev->parsed())
            return cmd_eval(e_pred, e_gt, e_out, e_encoder, e_extractor, e_window, e_gaussian,
                            e_gallery, workers);
    } catch (const ConfigError& e) {
        RC_LOG_ERROR("configuration error: %s", e.what());
        return 2;
    } catch (const std::exception& e) {
        RC_LOG_ERROR("%s", e.what());
        return 1;
    }
    return 2;
}
