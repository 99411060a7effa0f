#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "detpro/losses.hpp"
#include "detpro/prompt.hpp"

namespace detpro::trainer {

// Full training configuration. The file form is flat "key=value" text; the
// canonicalized form (sorted keys, re-serialized values) is what gets hashed
// into checkpoints and reports.
struct TrainConfig {
    std::size_t context_length = 8;   // L
    std::size_t word_dim = 32;        // D_w
    std::size_t embed_dim = 32;       // D_e
    std::size_t max_len = 32;         // encoder capacity
    double init_std = 0.02;
    double lr = 0.002;
    std::size_t epochs = 6;
    std::size_t batch_size = 64;
    double temperature = 0.01;
    losses::BgMode bg_mode = losses::BgMode::soft_bg;
    double neg_fraction = 0.1;
    prompt::TokenPosition token_position = prompt::TokenPosition::end;
    double iou_threshold = 0.5;       // positive/negative split
    double iou_low = 0.5;             // grading range [iou_low, iou_high], step iou_step
    double iou_high = 1.0;
    double iou_step = 0.1;
    bool gt_in_all_groups = false;
    bool use_gt = true;               // training-data source toggles
    bool use_fg = true;
    bool use_bg = true;
    enum class EnsembleLevel { context, embedding };
    EnsembleLevel ensemble_level = EnsembleLevel::context;
    std::uint64_t seed_init = 1;
    std::uint64_t seed_data = 2;
    std::uint64_t seed_encoder = 3;

    std::size_t group_count() const; // K from the grading range
    void validate() const;           // throws config_error
};

// Parses "key=value" lines (''#' comments and blank lines ignored); unknown
// keys are rejected. Missing keys keep their defaults.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

// Applies one "key=value" override in place.
void apply_override(TrainConfig& cfg, const std::string& key_value);

// Sorted-key, trimmed, re-serialized form; the basis of the config digest.
std::string canonical_config_text(const TrainConfig& cfg);
std::array<std::uint8_t, 32> config_hash(const TrainConfig& cfg);

std::string format_double(double v); // shortest round-trip representation

} // namespace detpro::trainer
