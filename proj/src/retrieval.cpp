#include "refcolor/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "refcolor/errors.hpp"

namespace refcolor {

const char* patch_role_name(PatchRole role) {
    switch (role) {
        case PatchRole::TL: return "TL";
        case PatchRole::TR: return "TR";
        case PatchRole::BL: return "BL";
        case PatchRole::BR: return "BR";
        case PatchRole::FULL: return "FULL";
    }
    return "?";
}

int quadrant_extent(int dim) { return (3 * dim + 2) / 4; }

std::array<PatchSpec, 4> extract_query_patches(int width, int height,
                                               const std::string& source_id) {
    if (width < 8 || height < 8)
        throw InvalidArgument("extract_query_patches: image smaller than 8x8");
    const int w = quadrant_extent(width);
    const int h = quadrant_extent(height);
    const int rx = width - w;   // right-column origin
    const int by = height - h;  // bottom-row origin
    return {
        PatchSpec{0, 0, w, h, PatchRole::TL, source_id},
        PatchSpec{rx, 0, w, h, PatchRole::TR, source_id},
        PatchSpec{0, by, w, h, PatchRole::BL, source_id},
        PatchSpec{rx, by, w, h, PatchRole::BR, source_id},
    };
}

std::array<PatchSpec, 4> extract_query_patches(const Raster& img, const std::string& source_id) {
    return extract_query_patches(img.width(), img.height(), source_id);
}

std::array<PatchSpec, 5> extract_reference_patches(int width, int height,
                                                   const std::string& source_id) {
    auto quads = extract_query_patches(width, height, source_id);
    return {quads[0], quads[1], quads[2], quads[3],
            PatchSpec{0, 0, width, height, PatchRole::FULL, source_id}};
}

std::array<PatchSpec, 5> extract_reference_patches(const Raster& img,
                                                   const std::string& source_id) {
    return extract_reference_patches(img.width(), img.height(), source_id);
}

Embedding embed(const Raster& patch_pixels, const ImageEncoder& encoder) {
    Embedding e = encoder.encode(patch_pixels);
    if (e.dim() != encoder.dim())
        throw NumericError("embed: encoder returned wrong dimension");
    for (double v : e.values)
        if (!std::isfinite(v)) throw NumericError("embed: non-finite embedding value");
    return e;
}

namespace {

Embedding quantize_f32(const Embedding& e) {
    Embedding q = e;
    for (double& v : q.values) v = static_cast<double>(static_cast<float>(v));
    return q;
}

constexpr char kIndexMagic[8] = {'R', 'C', 'I', 'D', 'X', '0', '0', '1'};

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_i32(std::ofstream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
int32_t read_i32(std::ifstream& f) {
    int32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

void ReferenceIndex::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("ReferenceIndex::save: cannot open " + path);
    f.write(kIndexMagic, 8);
    write_u32(f, static_cast<uint32_t>(encoder_id.size()));
    f.write(encoder_id.data(), static_cast<std::streamsize>(encoder_id.size()));
    write_u32(f, static_cast<uint32_t>(dim));
    uint64_t n = entries.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    for (const auto& entry : entries) {
        const PatchSpec& p = entry.patch;
        write_u32(f, static_cast<uint32_t>(p.source_id.size()));
        f.write(p.source_id.data(), static_cast<std::streamsize>(p.source_id.size()));
        uint8_t role = static_cast<uint8_t>(p.role);
        f.write(reinterpret_cast<const char*>(&role), 1);
        write_i32(f, p.origin_x);
        write_i32(f, p.origin_y);
        write_i32(f, p.width);
        write_i32(f, p.height);
        for (double v : entry.embedding.values) {
            float fv = static_cast<float>(v);
            f.write(reinterpret_cast<const char*>(&fv), 4);
        }
    }
    if (!f) throw IoError("ReferenceIndex::save: write failed for " + path);
}

ReferenceIndex ReferenceIndex::load(const std::string& path,
                                    const std::string& expected_encoder_id) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("ReferenceIndex::load: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kIndexMagic, 8) != 0)
        throw IoError("ReferenceIndex::load: bad magic/version in " + path);

    ReferenceIndex idx;
    uint32_t id_len = read_u32(f);
    if (!f || id_len > 4096) throw IoError("ReferenceIndex::load: corrupt header");
    idx.encoder_id.resize(id_len);
    f.read(idx.encoder_id.data(), id_len);
    idx.dim = static_cast<int>(read_u32(f));
    uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    if (!f) throw IoError("ReferenceIndex::load: truncated header");

    if (!expected_encoder_id.empty() && idx.encoder_id != expected_encoder_id)
        throw IoError("ReferenceIndex::load: encoder_id mismatch (index built with '" +
                      idx.encoder_id + "', expected '" + expected_encoder_id + "')");

    idx.entries.resize(n);
    for (auto& entry : idx.entries) {
        uint32_t src_len = read_u32(f);
        if (!f || src_len > 65536) throw IoError("ReferenceIndex::load: corrupt entry");
        entry.patch.source_id.resize(src_len);
        f.read(entry.patch.source_id.data(), src_len);
        uint8_t role = 0;
        f.read(reinterpret_cast<char*>(&role), 1);
        if (role > 4) throw IoError("ReferenceIndex::load: corrupt patch role");
        entry.patch.role = static_cast<PatchRole>(role);
        entry.patch.origin_x = read_i32(f);
        entry.patch.origin_y = read_i32(f);
        entry.patch.width = read_i32(f);
        entry.patch.height = read_i32(f);
        entry.embedding.values.resize(idx.dim);
        for (int i = 0; i < idx.dim; ++i) {
            float fv = 0.0f;
            f.read(reinterpret_cast<char*>(&fv), 4);
            entry.embedding.values[i] = static_cast<double>(fv);
        }
        if (!f) throw IoError("ReferenceIndex::load: truncated entries");
    }
    return idx;
}

ReferenceIndex build_reference_index(const std::vector<Raster>& pool,
                                     const std::vector<std::string>& source_ids,
                                     const ImageEncoder& encoder, int workers) {
    if (pool.empty()) throw InvalidArgument("build_reference_index: empty pool");
    if (pool.size() != source_ids.size())
        throw InvalidArgument("build_reference_index: pool/source_id count mismatch");

    ReferenceIndex idx;
    idx.encoder_id = encoder.id();
    idx.dim = encoder.dim();
    idx.entries.resize(pool.size() * 5);

    auto build_one = [&](size_t i) {
        auto patches = extract_reference_patches(pool[i], source_ids[i]);
        for (size_t k = 0; k < 5; ++k) {
            const PatchSpec& p = patches[k];
            Raster pixels = pool[i].crop(p.origin_x, p.origin_y, p.width, p.height);
            idx.entries[i * 5 + k] = {p, quantize_f32(embed(pixels, encoder))};
        }
    };

    workers = std::max(1, workers);
    if (workers == 1 || pool.size() < 2) {
        for (size_t i = 0; i < pool.size(); ++i) build_one(i);
    } else {
        std::vector<std::thread> threads;
        std::atomic<size_t> next{0};
        for (int t = 0; t < workers; ++t)
            threads.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < pool.size(); i = next.fetch_add(1))
                    build_one(i);
            });
        for (auto& th : threads) th.join();
    }
    return idx;
}

RetrievalResult retrieve(const Raster& bw, const ReferenceIndex& index,
                         const ImageEncoder& encoder) {
    if (index.entries.size() < 3)
        throw InvalidArgument("retrieve: index needs at least 3 entries");
    if (index.encoder_id != encoder.id())
        throw InvalidArgument("retrieve: index encoder_id '" + index.encoder_id +
                              "' does not match encoder '" + encoder.id() + "'");

    RetrievalResult result;
    for (const PatchSpec& q : extract_query_patches(bw)) {
        Raster pixels = bw.crop(q.origin_x, q.origin_y, q.width, q.height);
        Embedding qe = embed(pixels, encoder);

        // Exhaustive scan; pools are small by contract. Stable sort keeps
        // the lowest insertion index first among ties.
        std::vector<ScoredPatch> scored;
        scored.reserve(index.entries.size());
        for (size_t i = 0; i < index.entries.size(); ++i)
            scored.push_back({index.entries[i].patch,
                              cosine_similarity(qe, index.entries[i].embedding), i});
        std::stable_sort(scored.begin(), scored.end(),
                         [](const ScoredPatch& a, const ScoredPatch& b) { return a.score > b.score; });
        scored.resize(3);
        result.per_quadrant[q.role] = std::move(scored);
    }
    return result;
}

}  // namespace refcolor
