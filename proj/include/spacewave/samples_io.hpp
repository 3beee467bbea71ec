#pragma once

#include "spacewave/likelihood.hpp"
#include "spacewave/sampler.hpp"

#include <json.hpp>

#include <filesystem>

namespace spacewave {

/// Writes one CSV per non-empty block (row = kept draw, first column the iteration) and
/// manifest.json with the schedule, config, block shapes, cell map and acceptance rates.
/// `data_source` is stored verbatim so the fit can be reassembled later.
void write_samples(const std::filesystem::path& dir, const PosteriorSamples& samples, const ModelContext& ctx,
                   const SpectraDataset& ds, const nlohmann::json& data_source);

[[nodiscard]] nlohmann::json read_samples_manifest(const std::filesystem::path& dir);

/// Reads draws back into states shaped for `ctx`; values round-trip exactly.
[[nodiscard]] PosteriorSamples read_samples(const std::filesystem::path& dir, const ModelContext& ctx);

}  // namespace spacewave
