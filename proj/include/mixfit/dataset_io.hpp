#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>

#include "mixfit/types.hpp"

namespace mixfit {

// Text dataset format: header line "n=<N> d=<d>", then N whitespace-separated
// rows of d decimal floats. Binary variant: 16-byte header (8-byte magic
// "MIXDATA1", uint32 N, uint32 d, little-endian) followed by float64 row-major.
void write_dataset_text(const Dataset& data, const std::string& path);
void write_dataset_binary(const Dataset& data, const std::string& path);

// Autodetects binary by magic, otherwise parses the text format.
Dataset read_dataset(const std::string& path);

// Big-endian IDX (IDX3 images / IDX1 labels, unsigned-byte payload). Pixels
// scale to [0, 1]; images flatten row-major to one row per item.
Dataset ingest_idx(const std::string& path);

nlohmann::json model_to_json(const MixtureModel& model);
MixtureModel model_from_json(const nlohmann::json& j);
void write_model_json(const MixtureModel& model, const std::string& path);
MixtureModel read_model_json(const std::string& path);

// Canonical float formatting shared by all writers (shortest round-trip "%.17g").
std::string format_double(double v);

}  // namespace mixfit
