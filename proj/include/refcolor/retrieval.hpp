#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "refcolor/encoder.hpp"
#include "refcolor/raster.hpp"

namespace refcolor {

enum class PatchRole : uint8_t { TL = 0, TR = 1, BL = 2, BR = 3, FULL = 4 };

const char* patch_role_name(PatchRole role);

// Rectangle of a query or reference patch inside its source image.
// Quadrant patches cover 3/4 of each source dimension (round-half-up) and
// are anchored so the far edges touch the image border; FULL is the whole
// image at origin (0,0).
struct PatchSpec {
    int origin_x = 0;
    int origin_y = 0;
    int width = 0;
    int height = 0;
    PatchRole role = PatchRole::FULL;
    std::string source_id;

    bool operator==(const PatchSpec&) const = default;
};

// round-half-up of 3*d/4; shared by the geometry checks in tests.
int quadrant_extent(int dim);

// The four overlapping TL/TR/BL/BR patches of an image. Errors below 8x8.
std::array<PatchSpec, 4> extract_query_patches(int width, int height,
                                               const std::string& source_id = "");
std::array<PatchSpec, 4> extract_query_patches(const Raster& img,
                                               const std::string& source_id = "");

// Quadrants plus the FULL patch; 5 entries per reference image.
std::array<PatchSpec, 5> extract_reference_patches(int width, int height,
                                                   const std::string& source_id);
std::array<PatchSpec, 5> extract_reference_patches(const Raster& img,
                                                   const std::string& source_id);

// Embed the pixels of one patch. The encoder resamples internally.
Embedding embed(const Raster& patch_pixels, const ImageEncoder& encoder);

struct IndexEntry {
    PatchSpec patch;
    Embedding embedding;
};

// Immutable after build; every reference image contributes 5 entries.
// Embeddings are quantized to float32 on insertion so that the on-disk
// round trip is bit-exact.
struct ReferenceIndex {
    std::string encoder_id;
    int dim = 0;
    std::vector<IndexEntry> entries;

    void save(const std::string& path) const;
    // Refuses to load when expected_encoder_id is nonempty and differs.
    static ReferenceIndex load(const std::string& path,
                               const std::string& expected_encoder_id = "");
};

ReferenceIndex build_reference_index(const std::vector<Raster>& pool,
                                     const std::vector<std::string>& source_ids,
                                     const ImageEncoder& encoder, int workers = 1);

struct ScoredPatch {
    PatchSpec patch;
    double score = 0.0;
    size_t entry_index = 0;  // insertion order in the index; tie-break key
};

// Per-quadrant top-3 matches, descending by cosine similarity; ties break
// toward the lowest insertion index. 12 entries total.
struct RetrievalResult {
    std::map<PatchRole, std::vector<ScoredPatch>> per_quadrant;
};

RetrievalResult retrieve(const Raster& bw, const ReferenceIndex& index,
                         const ImageEncoder& encoder);

}  // namespace refcolor
