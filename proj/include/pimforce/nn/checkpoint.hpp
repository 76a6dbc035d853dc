#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "pimforce/nn/model.hpp"

namespace pimforce::nn {

// Archive layout: "PIMA", u16 version, u32 metadata length, metadata JSON,
// u32 entry count, then per entry a u32 name length, the name and one PIMF
// tensor (f64). Entries are the parameters followed by the buffers.
// The metadata always carries "model" (the ModelConfig); callers add the
// rest (training config, loss history, scaler, seed).
void save_checkpoint(const std::string& path, const PiMForceModel& model, nlohmann::json meta);

struct LoadedCheckpoint {
    PiMForceModel model;
    nlohmann::json meta;
};

// Throws InvalidInput on a malformed archive or a tensor set that does not
// match the stored model config.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace pimforce::nn
