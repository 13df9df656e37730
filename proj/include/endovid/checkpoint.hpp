#pragma once

// Checkpoint file layout
//
//   ENDOVID-CKPT <header-bytes>\n
//   <header: UTF-8 JSON, exactly header-bytes long>
//   <payload: little-endian float32 arrays, back to back>
//
// The header holds the format version, model configuration, step, seed,
// optimizer scalars and an offset table
//   arrays: [{name, shape, offset, bytes}, ...]
// with offsets relative to the first payload byte. Array names are prefixed
// with their role: student/, teacher/, adam.m/, adam.v/, plus a single "center".

#include <cstdint>
#include <filesystem>
#include <string>

#include "endovid/distill.hpp"
#include "endovid/model.hpp"

namespace endovid::data {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointVersion;
    model::ModelConfig model;
    distill::TrainState state;
};

/// Write via a temporary file and an atomic rename.
void save_checkpoint(const std::filesystem::path& path, const model::ModelConfig& model,
                     const distill::TrainState& state);

/// Throws FormatError on a version mismatch, a malformed header or a truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace endovid::data
