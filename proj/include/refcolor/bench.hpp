#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "refcolor/raster.hpp"

namespace refcolor {

// Recipe for one synthetic chapter: recurring "characters" (distinct glyph
// shapes with distinct palettes) drawn into paneled pages over textured
// backgrounds. Deterministic given the seed.
struct SyntheticSpec {
    int n_characters = 6;
    int n_refs = 40;
    int n_pages = 50;  // test pages (bw + color ground truth)
    int page_w = 256;
    int page_h = 384;
    int min_panels = 2;
    int max_panels = 6;
    std::string style = "grayscale";  // bw rendering: "grayscale" | "screenstyle"
    uint64_t seed = 0;
    // Forces a character's palette hue (degrees); used for the palette-swap
    // identity tests. Keyed by character index.
    std::map<int, double> hue_overrides;

    void validate() const;  // includes the 40-degree min palette separation
};

// Palette anchors (body/accent/trim RGB) plus glyph shape for a character.
struct CharacterStyle {
    int shape_index = 0;
    double hue_deg = 0.0;
    std::array<std::array<double, 3>, 3> anchors{};
};

CharacterStyle character_style(const SyntheticSpec& spec, int index);

// h in degrees, s/v in [0,1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v);
// Hue in degrees of an RGB triple; gray pixels return 0.
double rgb_hue_deg(double r, double g, double b);

// Single glyph on a plain background; building block for retrieval tests.
Raster render_character_portrait(const CharacterStyle& style, int w, int h, uint64_t seed);

struct GlyphPlacement {
    int page = 0;
    bool is_ref = false;
    int character = 0;
    int shape = 0;
    double cx = 0.0, cy = 0.0, radius = 0.0;
};

struct ManifestTestPage {
    std::string bw;
    std::string gt;
    uint64_t page_seed = 0;
    std::map<int, std::string> masks;  // character index -> mask path
};

struct ManifestCharacter {
    int index = 0;
    int shape = 0;
    double hue_deg = 0.0;
};

struct ChapterManifest {
    int version = 1;
    std::string chapter_id;
    std::string style;
    int page_w = 0, page_h = 0;
    std::vector<std::string> refs;          // paths relative to root
    std::vector<ManifestTestPage> tests;
    std::vector<ManifestCharacter> characters;
    std::string root;  // directory holding the manifest; not serialized

    std::string resolve(const std::string& rel) const;
    void save(const std::string& path) const;
};

// Renders refs/, test_bw/, test_gt/, masks/ under <out_root>/<chapter_id>,
// writes manifest.json and placement.json, returns the loaded manifest.
// On-disk alignment: test_bw(gray) == quantize8(to_grayscale(test_gt)) and
// test_bw(screenstyle) == quantize8(screenstyle_proxy(gray, page_seed)).
ChapterManifest generate_chapter(const SyntheticSpec& spec, const std::string& out_root,
                                 const std::string& chapter_id, int workers = 1);

// Validates eagerly: all paths resolvable (missing files are listed by
// name), bw pages single-channel, ground truth 3-channel.
ChapterManifest load_manifest(const std::string& manifest_path);

}  // namespace refcolor
