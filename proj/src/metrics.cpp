#include "refcolor/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "refcolor/errors.hpp"
#include "refcolor/png_io.hpp"

namespace refcolor {

double psnr(const Raster& a, const Raster& b, double peak) {
    if (!a.same_shape(b)) throw InvalidArgument("psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data().size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> ssim_kernel(const SsimOptions& opts) {
    if (opts.gaussian) {
        const int n = 11;
        const double sigma = 1.5;
        std::vector<double> k(n * n);
        double sum = 0.0;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dx = x - (n - 1) / 2.0, dy = y - (n - 1) / 2.0;
                k[y * n + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                sum += k[y * n + x];
            }
        for (double& v : k) v /= sum;
        return k;
    }
    const int n = opts.window;
    return std::vector<double>(static_cast<size_t>(n) * n, 1.0 / (n * n));
}

}  // namespace

double ssim(const Raster& a, const Raster& b, const SsimOptions& opts) {
    if (!a.same_shape(b)) throw InvalidArgument("ssim: shape mismatch");
    const int win = opts.gaussian ? 11 : opts.window;
    if (a.width() < win || a.height() < win)
        throw InvalidArgument("ssim: image smaller than the window");

    const std::vector<double> kernel = ssim_kernel(opts);
    double total = 0.0;
    int64_t positions = 0;

    for (int c = 0; c < a.channels(); ++c) {
        for (int y = 0; y + win <= a.height(); ++y) {
            for (int x = 0; x + win <= a.width(); ++x) {
                double ma = 0.0, mb = 0.0;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double k = kernel[wy * win + wx];
                        ma += k * a.at(x + wx, y + wy, c);
                        mb += k * b.at(x + wx, y + wy, c);
                    }
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double k = kernel[wy * win + wx];
                        const double da = a.at(x + wx, y + wy, c) - ma;
                        const double db = b.at(x + wx, y + wy, c) - mb;
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                const double num = (2.0 * ma * mb + opts.c1) * (2.0 * cov + opts.c2);
                const double den = (ma * ma + mb * mb + opts.c1) * (va + vb + opts.c2);
                total += num / den;
                ++positions;
            }
        }
    }
    return total / static_cast<double>(positions);
}

double clip_is(const Raster& pred, const Raster& gt, const ImageEncoder& encoder) {
    return cosine_similarity(encoder.encode(pred), encoder.encode(gt));
}

FidResult fid(const std::vector<std::vector<double>>& set_a,
              const std::vector<std::vector<double>>& set_b) {
    if (set_a.empty() || set_b.empty()) throw InvalidArgument("fid: empty feature set");
    const int d = static_cast<int>(set_a[0].size());
    for (const auto& v : set_a)
        if (static_cast<int>(v.size()) != d) throw InvalidArgument("fid: ragged feature set");
    for (const auto& v : set_b)
        if (static_cast<int>(v.size()) != d) throw InvalidArgument("fid: ragged feature set");
    if (static_cast<int>(set_a.size()) < d + 1 || static_cast<int>(set_b.size()) < d + 1)
        throw InvalidArgument("fid: needs at least d+1 samples per set for d-dim features");

    using Mat = Eigen::MatrixXd;
    using Vec = Eigen::VectorXd;

    auto stats = [d](const std::vector<std::vector<double>>& set, Vec& mu, Mat& sigma) {
        const int n = static_cast<int>(set.size());
        Mat X(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) X(i, j) = set[i][j];
        mu = X.colwise().mean();
        Mat centered = X.rowwise() - mu.transpose();
        sigma = centered.transpose() * centered / static_cast<double>(n - 1);
    };

    Vec mu_a, mu_b;
    Mat sig_a, sig_b;
    stats(set_a, mu_a, sig_a);
    stats(set_b, mu_b, sig_b);

    // Tr((Sa Sb)^{1/2}) via the symmetric form (Sa^{1/2} Sb Sa^{1/2})^{1/2}.
    Eigen::SelfAdjointEigenSolver<Mat> es_a(sig_a);
    if (es_a.info() != Eigen::Success) throw NumericError("fid: eigendecomposition failed");
    Vec ev_a = es_a.eigenvalues();
    double clipped = 0.0;
    for (int i = 0; i < d; ++i) {
        if (ev_a[i] < 0.0) clipped += -ev_a[i];
        ev_a[i] = std::sqrt(std::max(0.0, ev_a[i]));
    }
    Mat sqrt_a = es_a.eigenvectors() * ev_a.asDiagonal() * es_a.eigenvectors().transpose();

    Mat inner = sqrt_a * sig_b * sqrt_a;
    inner = 0.5 * (inner + inner.transpose());  // enforce symmetry before solving
    Eigen::SelfAdjointEigenSolver<Mat> es_i(inner);
    if (es_i.info() != Eigen::Success) throw NumericError("fid: eigendecomposition failed");

    double tr_sqrt = 0.0;
    for (int i = 0; i < d; ++i) {
        const double ev = es_i.eigenvalues()[i];
        if (ev < 0.0) clipped += -ev;
        tr_sqrt += std::sqrt(std::max(0.0, ev));
    }

    const double mean_term = (mu_a - mu_b).squaredNorm();
    const double value = mean_term + sig_a.trace() + sig_b.trace() - 2.0 * tr_sqrt;
    return {std::max(value, 0.0), clipped};
}

namespace {

nlohmann::json record_json(const ImageRecord& r) {
    nlohmann::json j;
    j["name"] = r.name;
    if (std::isinf(r.psnr_db)) j["psnr_db"] = "inf";
    else j["psnr_db"] = r.psnr_db;
    j["ssim"] = r.ssim;
    j["clip_is"] = r.clip_is;
    return j;
}

}  // namespace

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << "# image metrics (encoder=" << encoder_id << ", extractor=" << extractor_id << ")\n";
    os << "# name psnr_db ssim clip_is\n";
    for (const auto& r : per_image) {
        os << r.name << " ";
        if (std::isinf(r.psnr_db)) os << "inf";
        else os << r.psnr_db;
        os << " " << r.ssim << " " << r.clip_is << "\n";
    }
    os << "# summary over " << count << " images\n";
    os << "mean_psnr_db ";
    if (std::isinf(mean_psnr)) os << "inf";
    else os << mean_psnr;
    os << "\nmean_ssim " << mean_ssim << "\nmean_clip_is " << mean_clip_is << "\nfid " << fid
       << "\nfid_clipped_eigen_mass " << fid_clipped_mass << "\n";
    return os.str();
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["encoder_id"] = encoder_id;
    j["extractor_id"] = extractor_id;
    j["count"] = count;
    if (std::isinf(mean_psnr)) j["mean_psnr_db"] = "inf";
    else j["mean_psnr_db"] = mean_psnr;
    j["mean_ssim"] = mean_ssim;
    j["mean_clip_is"] = mean_clip_is;
    j["fid"] = fid;
    j["fid_clipped_eigen_mass"] = fid_clipped_mass;
    j["per_image"] = nlohmann::json::array();
    for (const auto& r : per_image) j["per_image"].push_back(record_json(r));
    return j.dump(2);
}

MetricsReport evaluate(const std::string& pred_dir, const std::string& gt_dir,
                       const EvaluateConfig& cfg) {
    namespace fs = std::filesystem;
    if (!cfg.encoder || !cfg.extractor)
        throw InvalidArgument("evaluate: encoder and extractor are required");

    auto list_pngs = [](const std::string& dir) {
        std::set<std::string> names;
        if (!fs::is_directory(dir)) throw IoError("evaluate: not a directory: " + dir);
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png")
                names.insert(e.path().filename().string());
        return names;
    };

    const std::set<std::string> preds = list_pngs(pred_dir);
    const std::set<std::string> gts = list_pngs(gt_dir);

    std::vector<std::string> missing;
    for (const auto& n : preds)
        if (!gts.count(n)) missing.push_back("gt missing: " + n);
    for (const auto& n : gts)
        if (!preds.count(n)) missing.push_back("pred missing: " + n);
    if (!missing.empty()) {
        std::string msg = "evaluate: unpaired files:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw InvalidArgument(msg);
    }
    if (preds.empty()) throw InvalidArgument("evaluate: no .png files found");

    std::vector<std::string> names(preds.begin(), preds.end());
    const int n = static_cast<int>(names.size());

    MetricsReport report;
    report.per_image.resize(n);
    report.encoder_id = cfg.encoder->id();
    report.extractor_id = cfg.extractor->id();
    report.count = n;

    std::vector<std::vector<double>> feats_pred(n), feats_gt(n);

    auto eval_one = [&](int i) {
        const Raster pred_raw = read_png((fs::path(pred_dir) / names[i]).string());
        const Raster gt_raw = read_png((fs::path(gt_dir) / names[i]).string());
        // Unify channel counts so a grayscale prediction of a color page
        // still compares.
        const bool want_rgb = pred_raw.channels() == 3 || gt_raw.channels() == 3;
        const Raster pred = want_rgb ? pred_raw.to_rgb() : pred_raw;
        const Raster gt = want_rgb ? gt_raw.to_rgb() : gt_raw;
        ImageRecord& r = report.per_image[i];
        r.name = names[i];
        r.psnr_db = psnr(pred, gt);
        r.ssim = ssim(pred, gt, cfg.ssim_opts);
        r.clip_is = clip_is(pred, gt, *cfg.encoder);
        feats_pred[i] = cfg.extractor->encode(pred).values;
        feats_gt[i] = cfg.extractor->encode(gt).values;
    };

    const int workers = std::max(1, cfg.workers);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) eval_one(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) eval_one(i);
            });
        for (auto& t : pool) t.join();
    }

    double sp = 0.0, ss = 0.0, sc = 0.0;
    for (const auto& r : report.per_image) {
        sp += r.psnr_db;
        ss += r.ssim;
        sc += r.clip_is;
    }
    report.mean_psnr = sp / n;
    report.mean_ssim = ss / n;
    report.mean_clip_is = sc / n;

    const int d = cfg.extractor->dim();
    if (n < d + 1)
        throw InvalidArgument("evaluate: FID needs at least " + std::to_string(d + 1) +
                              " images for extractor '" + cfg.extractor->id() + "' (got " +
                              std::to_string(n) + ")");
    FidResult f = fid(feats_pred, feats_gt);
    report.fid = f.value;
    report.fid_clipped_mass = f.clipped_eigen_mass;
    return report;
}

}  // namespace refcolor
