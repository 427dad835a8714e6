#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "sepbart/model.hpp"

namespace sepbart {

// Draw files are JSON-lines: a header object (format version, resolved
// config, seed, anchors, normalization, normalized training data) followed by
// one line per retained draw (model state only; identified caches are
// recomputed on load by the same fresh-evaluation path used at retention).
// Round-trips are lossless: doubles are emitted shortest-round-trip.

inline constexpr int kDrawFormatVersion = 1;

void save_draws(const std::string& path, const PosteriorSet& set, const std::string& config_hash);

PosteriorSet load_draws(const std::string& path);

// Canonical hash of a resolved configuration string (FNV-1a 64, hex).
std::string fnv1a_hex(const std::string& text);

nlohmann::json fit_config_to_json(const FitConfig& cfg);
FitConfig fit_config_from_json(const nlohmann::json& j);

// Atomically replaces path with content (write temp + rename).
void atomic_write(const std::string& path, const std::string& content);

}  // namespace sepbart
