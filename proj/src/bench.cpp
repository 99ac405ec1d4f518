#include "refcolor/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "refcolor/errors.hpp"
#include "refcolor/imaging.hpp"
#include "refcolor/png_io.hpp"
#include "refcolor/rng.hpp"

namespace refcolor {

namespace fs = std::filesystem;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

double rgb_hue_deg(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double c = mx - mn;
    if (c <= 1e-12) return 0.0;
    double h;
    if (mx == r) h = std::fmod((g - b) / c, 6.0);
    else if (mx == g) h = (b - r) / c + 2.0;
    else h = (r - g) / c + 4.0;
    h *= 60.0;
    return h < 0.0 ? h + 360.0 : h;
}

void SyntheticSpec::validate() const {
    if (n_characters < 1) throw InvalidArgument("SyntheticSpec: need at least one character");
    if (page_w < 64 || page_h < 64) throw InvalidArgument("SyntheticSpec: page size below 64x64");
    if (n_refs < 1 || n_pages < 1)
        throw InvalidArgument("SyntheticSpec: reference and test page counts must be positive");
    if (min_panels < 1 || max_panels < min_panels)
        throw InvalidArgument("SyntheticSpec: bad panel range");
    if (style != "grayscale" && style != "screenstyle")
        throw InvalidArgument("SyntheticSpec: style must be 'grayscale' or 'screenstyle'");
    // Palettes must stay distinguishable: min pairwise hue distance >= 40 deg.
    std::vector<double> hues;
    for (int i = 0; i < n_characters; ++i) hues.push_back(character_style(*this, i).hue_deg);
    for (size_t i = 0; i < hues.size(); ++i)
        for (size_t j = i + 1; j < hues.size(); ++j) {
            double d = std::fabs(hues[i] - hues[j]);
            d = std::min(d, 360.0 - d);
            if (d < 40.0)
                throw InvalidArgument(
                    "SyntheticSpec: character palettes closer than 40 degrees in hue; "
                    "reduce n_characters or adjust hue_overrides");
        }
}

CharacterStyle character_style(const SyntheticSpec& spec, int index) {
    CharacterStyle st;
    st.shape_index = index % 10;
    Rng rng(mix_seed(spec.seed, 0x9a1e77u, static_cast<uint64_t>(index)));
    double hue = 360.0 * index / spec.n_characters + rng.uniform(-2.0, 2.0);
    auto it = spec.hue_overrides.find(index);
    if (it != spec.hue_overrides.end()) hue = it->second;
    st.hue_deg = std::fmod(std::fmod(hue, 360.0) + 360.0, 360.0);
    st.anchors[0] = hsv_to_rgb(st.hue_deg, 0.85, 0.90);  // body
    st.anchors[1] = hsv_to_rgb(st.hue_deg, 0.55, 0.70);  // accent core
    st.anchors[2] = hsv_to_rgb(st.hue_deg, 0.95, 0.40);  // trim band
    return st;
}

namespace {

// Point-in-shape tests on normalized coordinates u,v in [-1,1].
bool inside_shape(int shape, double u, double v) {
    switch (shape % 10) {
        case 0: return u * u + v * v <= 1.0;
        case 1: return std::max(std::fabs(u), std::fabs(v)) <= 0.88;
        case 2: return v >= -0.85 && std::fabs(u) <= 0.55 * (0.9 - v);
        case 3: return std::fabs(u) + std::fabs(v) <= 1.0;
        case 4: {
            const double r = std::sqrt(u * u + v * v);
            return r <= 1.0 && r >= 0.45;
        }
        case 5:
            return (std::fabs(u) <= 0.32 || std::fabs(v) <= 0.32) && u * u + v * v <= 1.0;
        case 6: {
            const double r = std::sqrt(u * u + v * v);
            const double a = std::atan2(v, u);
            return r <= 0.55 + 0.45 * std::cos(5.0 * a);
        }
        case 7:
            return u * u + v * v <= 1.0 &&
                   (u - 0.45) * (u - 0.45) + v * v >= 0.85 * 0.85;
        case 8: {
            const double a = std::fabs(u);
            const double b = std::fabs(0.5 * u + 0.866 * v);
            const double c = std::fabs(0.5 * u - 0.866 * v);
            return std::max({a, b, c}) <= 0.9;
        }
        default: {  // heart
            const double x = u * 1.2, y = -v * 1.2 + 0.2;
            const double e = x * x + y * y - 1.0;
            return e * e * e - x * x * y * y * y <= 0.0;
        }
    }
}

struct PageRender {
    Raster color;
    std::map<int, Raster> masks;  // per character, union of visible pixels
    std::vector<GlyphPlacement> placements;
};

void draw_glyph(Raster& page, std::vector<int>& owner, const CharacterStyle& st, double cx,
                double cy, double radius, int char_index) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(page.width() - 1, static_cast<int>(std::ceil(cx + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(page.height() - 1, static_cast<int>(std::ceil(cy + radius)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double u = (x - cx) / radius;
            const double v = (y - cy) / radius;
            if (!inside_shape(st.shape_index, u, v)) continue;
            const std::array<double, 3>* color = &st.anchors[0];
            if (!inside_shape(st.shape_index, u / 0.8, v / 0.8)) color = &st.anchors[2];
            else if (inside_shape(st.shape_index, u / 0.45, v / 0.45)) color = &st.anchors[1];
            for (int c = 0; c < 3; ++c) page.at(x, y, c) = (*color)[c];
            owner[static_cast<size_t>(y) * page.width() + x] = char_index;
        }
}

void fill_panel_background(Raster& page, int px, int py, int pw, int ph, Rng& rng) {
    const double hue = rng.uniform(0.0, 360.0);
    const auto base = hsv_to_rgb(hue, 0.10, 0.92);
    const int pattern = static_cast<int>(rng.randint(0, 3));
    const int period = static_cast<int>(rng.randint(5, 9));
    for (int y = py; y < py + ph; ++y)
        for (int x = px; x < px + pw; ++x) {
            double mod;
            switch (pattern) {
                case 0: mod = ((y - py) / period) % 2 == 0 ? 0.05 : -0.05; break;
                case 1: mod = ((x - px) / period) % 2 == 0 ? 0.05 : -0.05; break;
                case 2:
                    mod = (((x - px) / period + (y - py) / period) % 2 == 0) ? 0.05 : -0.05;
                    break;
                default: {
                    const int lx = (x - px) % (2 * period) - period;
                    const int ly = (y - py) % (2 * period) - period;
                    mod = lx * lx + ly * ly < period * period / 2 ? -0.07 : 0.03;
                }
            }
            for (int c = 0; c < 3; ++c) page.at(x, y, c) = std::clamp(base[c] + mod, 0.0, 1.0);
        }
}

PageRender render_page(const SyntheticSpec& spec, uint64_t page_seed, int page_index,
                       bool is_ref) {
    Rng rng(page_seed);
    PageRender out;
    out.color = Raster(spec.page_w, spec.page_h, 3, 1.0);  // white gutters
    std::vector<int> owner(out.color.pixel_count(), -1);

    const int n_panels = static_cast<int>(rng.randint(spec.min_panels, spec.max_panels));
    const int rows = n_panels <= 2 ? n_panels : (n_panels <= 4 ? 2 : 3);
    const int cols = (n_panels + rows - 1) / rows;
    const int margin = 4;
    const int cell_w = (spec.page_w - margin * (cols + 1)) / cols;
    const int cell_h = (spec.page_h - margin * (rows + 1)) / rows;

    int glyph_slot = 0;
    for (int p = 0; p < n_panels; ++p) {
        const int r = p / cols, c = p % cols;
        const int px = margin + c * (cell_w + margin);
        const int py = margin + r * (cell_h + margin);
        fill_panel_background(out.color, px, py, cell_w, cell_h, rng);

        const int n_glyphs = static_cast<int>(rng.randint(1, 3));
        for (int gidx = 0; gidx < n_glyphs; ++gidx) {
            // First two glyph slots cycle deterministically so every
            // character keeps recurring across the chapter; the rest are
            // free draws.
            int char_id;
            if (glyph_slot < 2)
                char_id = (page_index + glyph_slot) % spec.n_characters;
            else
                char_id = static_cast<int>(rng.randint(0, spec.n_characters - 1));
            const CharacterStyle st = character_style(spec, char_id);

            const double max_r = 0.5 * std::min(cell_w, cell_h);
            const double radius = std::max(6.0, max_r * rng.uniform(0.55, 0.9));
            const double cx = px + cell_w * ((gidx + 0.5) / n_glyphs) +
                              rng.uniform(-0.05, 0.05) * cell_w;
            const double cy = py + cell_h * 0.5 + rng.uniform(-0.15, 0.15) * cell_h;
            draw_glyph(out.color, owner, st, cx, cy, radius, char_id);
            out.placements.push_back(
                {page_index, is_ref, char_id, st.shape_index, cx, cy, radius});
            ++glyph_slot;
        }
    }

    for (int char_id = 0; char_id < spec.n_characters; ++char_id) {
        bool present = false;
        for (int i = 0; i < static_cast<int>(owner.size()) && !present; ++i)
            present = owner[i] == char_id;
        if (!present) continue;
        Raster mask(spec.page_w, spec.page_h, 1, 0.0);
        for (size_t i = 0; i < owner.size(); ++i)
            if (owner[i] == char_id) mask.data()[i] = 1.0;
        out.masks.emplace(char_id, std::move(mask));
    }
    out.color = out.color.quantize8();
    return out;
}

std::string page_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", i);
    return buf;
}

}  // namespace

std::string ChapterManifest::resolve(const std::string& rel) const {
    return (fs::path(root) / rel).string();
}

void ChapterManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["version"] = version;
    j["chapter_id"] = chapter_id;
    j["style"] = style;
    j["page_w"] = page_w;
    j["page_h"] = page_h;
    j["refs"] = refs;
    j["tests"] = nlohmann::json::array();
    for (const auto& t : tests) {
        nlohmann::json jt;
        jt["bw"] = t.bw;
        jt["gt"] = t.gt;
        jt["seed"] = t.page_seed;
        nlohmann::json jm = nlohmann::json::object();
        for (const auto& [c, m] : t.masks) jm[std::to_string(c)] = m;
        jt["masks"] = jm;
        j["tests"].push_back(jt);
    }
    j["characters"] = nlohmann::json::array();
    for (const auto& c : characters)
        j["characters"].push_back({{"index", c.index}, {"shape", c.shape}, {"hue", c.hue_deg}});
    std::ofstream f(path);
    if (!f) throw IoError("ChapterManifest::save: cannot open " + path);
    f << j.dump(2) << "\n";
}

Raster render_character_portrait(const CharacterStyle& style, int w, int h, uint64_t seed) {
    Rng rng(mix_seed(seed));
    Raster img(w, h, 3, 0.97);
    std::vector<int> owner(img.pixel_count(), -1);
    const double radius = 0.5 * std::min(w, h) * rng.uniform(0.62, 0.82);
    const double cx = w * 0.5 + rng.uniform(-0.08, 0.08) * w;
    const double cy = h * 0.5 + rng.uniform(-0.08, 0.08) * h;
    draw_glyph(img, owner, style, cx, cy, radius, 0);
    return img.quantize8();
}

ChapterManifest generate_chapter(const SyntheticSpec& spec, const std::string& out_root,
                                 const std::string& chapter_id, int workers) {
    spec.validate();
    const fs::path dir = fs::path(out_root) / chapter_id;
    fs::create_directories(dir / "refs");
    fs::create_directories(dir / "test_bw");
    fs::create_directories(dir / "test_gt");
    fs::create_directories(dir / "masks");

    ChapterManifest man;
    man.chapter_id = chapter_id;
    man.style = spec.style;
    man.page_w = spec.page_w;
    man.page_h = spec.page_h;
    man.root = dir.string();
    man.refs.resize(spec.n_refs);
    man.tests.resize(spec.n_pages);
    for (int i = 0; i < spec.n_characters; ++i) {
        const CharacterStyle st = character_style(spec, i);
        man.characters.push_back({i, st.shape_index, st.hue_deg});
    }

    std::vector<std::vector<GlyphPlacement>> placement_log(spec.n_refs + spec.n_pages);

    auto do_page = [&](int i) {
        if (i < spec.n_refs) {
            const uint64_t seed = mix_seed(spec.seed, 0x5ef1ull, static_cast<uint64_t>(i));
            PageRender pr = render_page(spec, seed, i, true);
            const std::string rel = "refs/ref_" + page_name(i) + ".png";
            write_png(pr.color, (dir / rel).string());
            man.refs[i] = rel;
            placement_log[i] = std::move(pr.placements);
            return;
        }
        const int t = i - spec.n_refs;
        const uint64_t seed = mix_seed(spec.seed, 0x7e57ull, static_cast<uint64_t>(t));
        // Test pages continue the character rotation after the refs.
        PageRender pr = render_page(spec, seed, spec.n_refs + t, false);
        ManifestTestPage& page = man.tests[t];
        page.page_seed = seed;
        page.gt = "test_gt/page_" + page_name(t) + ".png";
        page.bw = "test_bw/page_" + page_name(t) + ".png";
        write_png(pr.color, (dir / page.gt).string());

        const Raster gray = to_grayscale(pr.color).quantize8();
        const Raster bw =
            spec.style == "screenstyle" ? screenstyle_proxy(gray, seed).quantize8() : gray;
        write_png(bw, (dir / page.bw).string());

        for (const auto& [char_id, mask] : pr.masks) {
            const std::string rel =
                "masks/page_" + page_name(t) + "_c" + std::to_string(char_id) + ".png";
            write_png(mask, (dir / rel).string());
            page.masks[char_id] = rel;
        }
        placement_log[i] = std::move(pr.placements);
    };

    const int total = spec.n_refs + spec.n_pages;
    workers = std::max(1, workers);
    if (workers == 1) {
        for (int i = 0; i < total; ++i) do_page(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < total; i = next.fetch_add(1)) do_page(i);
            });
        for (auto& t : pool) t.join();
    }

    man.save((dir / "manifest.json").string());

    nlohmann::json plog = nlohmann::json::array();
    for (const auto& page : placement_log)
        for (const auto& g : page)
            plog.push_back({{"page", g.page},
                            {"is_ref", g.is_ref},
                            {"character", g.character},
                            {"shape", g.shape},
                            {"cx", g.cx},
                            {"cy", g.cy},
                            {"radius", g.radius}});
    std::ofstream pf((dir / "placement.json").string());
    pf << plog.dump() << "\n";

    return load_manifest((dir / "manifest.json").string());
}

ChapterManifest load_manifest(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("load_manifest: cannot open " + manifest_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_manifest: malformed manifest " + manifest_path + ": " + e.what());
    }

    ChapterManifest man;
    man.root = fs::path(manifest_path).parent_path().string();
    man.version = j.at("version").get<int>();
    if (man.version != 1) throw IoError("load_manifest: unsupported manifest version");
    man.chapter_id = j.at("chapter_id").get<std::string>();
    man.style = j.at("style").get<std::string>();
    man.page_w = j.at("page_w").get<int>();
    man.page_h = j.at("page_h").get<int>();
    man.refs = j.at("refs").get<std::vector<std::string>>();
    for (const auto& jt : j.at("tests")) {
        ManifestTestPage t;
        t.bw = jt.at("bw").get<std::string>();
        t.gt = jt.at("gt").get<std::string>();
        t.page_seed = jt.at("seed").get<uint64_t>();
        for (auto it = jt.at("masks").begin(); it != jt.at("masks").end(); ++it)
            t.masks[std::stoi(it.key())] = it.value().get<std::string>();
        man.tests.push_back(std::move(t));
    }
    if (j.contains("characters"))
        for (const auto& jc : j.at("characters"))
            man.characters.push_back({jc.at("index").get<int>(), jc.at("shape").get<int>(),
                                      jc.at("hue").get<double>()});

    if (man.refs.empty() || man.tests.empty())
        throw InvalidArgument("load_manifest: empty reference or test list");

    std::vector<std::string> missing;
    auto check = [&](const std::string& rel) {
        if (!fs::exists(man.resolve(rel))) missing.push_back(rel);
    };
    for (const auto& r : man.refs) check(r);
    for (const auto& t : man.tests) {
        check(t.bw);
        check(t.gt);
        for (const auto& [c, m] : t.masks) check(m);
    }
    if (!missing.empty()) {
        std::string msg = "load_manifest: missing files:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw IoError(msg);
    }

    // Style integrity: bw pages must be single-channel, ground truth RGB.
    const Raster bw0 = read_png(man.resolve(man.tests[0].bw));
    if (bw0.channels() != 1)
        throw InvalidArgument("load_manifest: style mismatch, bw page is not single-channel");
    const Raster gt0 = read_png(man.resolve(man.tests[0].gt));
    if (gt0.channels() != 3)
        throw InvalidArgument("load_manifest: ground-truth page is not RGB");
    return man;
}

}  // namespace refcolor
