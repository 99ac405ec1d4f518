#pragma once

#include <map>
#include <string>

#include "refcolor/nn/layers.hpp"

namespace refcolor::nn {

// Named-tensor container with a config-identity string. Loading refuses to
// proceed when the stored config string differs from the expected one, so
// checkpoints never silently attach to a mismatched architecture.
void save_checkpoint(const std::string& path, const std::string& config_id,
                     const ParamList& tensors,
                     const std::map<std::string, double>& scalars = {});

struct Checkpoint {
    std::string config_id;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, double> scalars;
};

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_config_id);

// Copies checkpoint tensors into the live parameters; throws if a name is
// missing or a shape differs.
void restore_params(const Checkpoint& ckpt, const ParamList& params);

// FNV-1a hex digest; used to derive config ids from canonical JSON.
std::string fnv1a_hex(const std::string& text);

}  // namespace refcolor::nn
