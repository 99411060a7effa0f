#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detpro/config.hpp"
#include "detpro/prompt.hpp"

namespace detpro::prompt {

// Everything needed to replay or evaluate a training run: the full config
// (with seeds), the per-group learned contexts, background contexts when the
// run trained them, and the ensembled result.
struct Checkpoint {
    trainer::TrainConfig config;
    std::vector<PromptContext> group_contexts;
    std::vector<BackgroundContext> group_bg_contexts; // empty unless learnable_bg
    PromptContext ensembled;
    std::optional<BackgroundContext> ensembled_bg;

    bool has_bg() const { return !group_bg_contexts.empty(); }
};

// Binary layout (little-endian): magic "DPRO", u32 version, u32 L/D_w/D_e/K,
// u32 flags (bit0 = background contexts present), u32 canonical-config length,
// three u64 seeds, the 32-byte config digest, the canonical config text, then
// raw 64-bit float arrays (K group contexts, K background contexts if
// present, the ensembled context, the ensembled background context if
// present). Round-trips bit-exactly.
std::string save_checkpoint(const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::string_view bytes);

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

} // namespace detpro::prompt
