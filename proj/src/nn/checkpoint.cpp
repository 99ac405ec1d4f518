#include "refcolor/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "refcolor/errors.hpp"

namespace refcolor::nn {

namespace {

constexpr char kMagic[8] = {'R', 'C', 'C', 'K', 'P', 'T', '0', '1'};

void write_string(std::ofstream& f, const std::string& s) {
    uint32_t len = static_cast<uint32_t>(s.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(s.data(), len);
}

std::string read_string(std::ifstream& f) {
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    if (!f || len > (1u << 20)) throw IoError("checkpoint: corrupt string field");
    std::string s(len, '\0');
    f.read(s.data(), len);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_id,
                     const ParamList& tensors, const std::map<std::string, double>& scalars) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);
    write_string(f, config_id);

    uint32_t n_scalars = static_cast<uint32_t>(scalars.size());
    f.write(reinterpret_cast<const char*>(&n_scalars), 4);
    for (const auto& [name, value] : scalars) {
        write_string(f, name);
        f.write(reinterpret_cast<const char*>(&value), 8);
    }

    uint32_t n_tensors = static_cast<uint32_t>(tensors.size());
    f.write(reinterpret_cast<const char*>(&n_tensors), 4);
    for (const auto& [name, value] : tensors) {
        write_string(f, name);
        uint32_t ndim = static_cast<uint32_t>(value->val.shape.size());
        f.write(reinterpret_cast<const char*>(&ndim), 4);
        for (int d : value->val.shape) {
            int32_t dd = d;
            f.write(reinterpret_cast<const char*>(&dd), 4);
        }
        f.write(reinterpret_cast<const char*>(value->val.data.data()),
                static_cast<std::streamsize>(value->val.data.size() * sizeof(double)));
    }
    if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_config_id) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("load_checkpoint: bad magic/version in " + path);

    Checkpoint ckpt;
    ckpt.config_id = read_string(f);
    if (!expected_config_id.empty() && ckpt.config_id != expected_config_id)
        throw IoError("load_checkpoint: config mismatch in " + path + " (stored '" +
                      ckpt.config_id + "', expected '" + expected_config_id + "')");

    uint32_t n_scalars = 0;
    f.read(reinterpret_cast<char*>(&n_scalars), 4);
    for (uint32_t i = 0; i < n_scalars; ++i) {
        std::string name = read_string(f);
        double value = 0.0;
        f.read(reinterpret_cast<char*>(&value), 8);
        ckpt.scalars[name] = value;
    }

    uint32_t n_tensors = 0;
    f.read(reinterpret_cast<char*>(&n_tensors), 4);
    if (!f) throw IoError("load_checkpoint: truncated header");
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = read_string(f);
        uint32_t ndim = 0;
        f.read(reinterpret_cast<char*>(&ndim), 4);
        if (!f || ndim > 8) throw IoError("load_checkpoint: corrupt tensor header");
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) {
            int32_t dd = 0;
            f.read(reinterpret_cast<char*>(&dd), 4);
            shape[d] = dd;
        }
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!f) throw IoError("load_checkpoint: truncated tensor data");
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, const ParamList& params) {
    for (const auto& [name, value] : params) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw IoError("restore_params: checkpoint is missing tensor '" + name + "'");
        if (it->second.shape != value->val.shape)
            throw IoError("restore_params: shape mismatch for tensor '" + name + "'");
        value->val = it->second;
    }
}

std::string fnv1a_hex(const std::string& text) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace refcolor::nn
