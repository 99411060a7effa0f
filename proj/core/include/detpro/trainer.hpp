#pragma once

#include <optional>
#include <string>
#include <vector>

#include "detpro/checkpoint.hpp"
#include "detpro/config.hpp"
#include "detpro/encoder.hpp"
#include "detpro/geometry.hpp"
#include "detpro/losses.hpp"
#include "detpro/prompt.hpp"

namespace detpro::trainer {

// Trainable state: the shared context, plus a background context in
// learnable_bg mode. The encoder and token table are never updated.
struct ModelState {
    prompt::PromptContext context;
    std::optional<prompt::BackgroundContext> bg_context;
};

// One proposal prepared for the training loop.
struct TrainItem {
    std::string id;
    std::optional<int> label; // nullopt marks a negative
    std::vector<double> embedding;
};

struct GradResult {
    double loss = 0.0;
    Matrix grad_context;              // dL/d context vectors
    std::optional<Matrix> grad_bg;    // dL/d background context, learnable_bg only
};

// Batch loss and its exact reverse-mode gradient with respect to the
// trainable context(s). The two batch means (negatives, positives) are taken
// over the batch; an absent side contributes nothing. Accumulation is
// sequential in input order, so results are bit-reproducible.
GradResult grad(const ModelState& state, const std::vector<const TrainItem*>& batch,
                const encoder::FrozenTextEncoder& enc, const prompt::ClassTokenTable& table,
                const TrainConfig& cfg);

// Forward-only evaluation of the same batch loss (the finite-difference side
// of gradient checks).
double batch_loss(const ModelState& state, const std::vector<const TrainItem*>& batch,
                  const encoder::FrozenTextEncoder& enc, const prompt::ClassTokenTable& table,
                  const TrainConfig& cfg);

// lr0 * (1 + cos(pi * step / total_steps)) / 2, annealing to zero.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct GroupTrainResult {
    prompt::PromptContext context;
    std::optional<prompt::BackgroundContext> bg_context;
    double initial_loss = 0.0; // whole-pool loss before the first step
    double final_loss = 0.0;   // whole-pool loss after the last step
    std::size_t steps = 0;
};

// Trains one IoU band: fresh seeded context, epochs x shuffled batches of the
// band's positives plus the shared negatives, SGD with cosine annealing.
GroupTrainResult train_group(const geometry::ContextGroup& group,
                             const std::vector<geometry::ProposalRecord>& negatives,
                             const TrainConfig& cfg, const encoder::FrozenTextEncoder& enc,
                             const prompt::ClassTokenTable& table, std::size_t group_index);

struct TrainRun {
    prompt::Checkpoint checkpoint;
    std::vector<GroupTrainResult> groups;
};

// Full pipeline: data-source toggles, negative subsampling, grading, K
// independent group runs, ensembling. Only base-split positives train; novel
// records are held out for evaluation.
TrainRun train_all(const geometry::ProposalPartition& part, const TrainConfig& cfg,
                   const encoder::FrozenTextEncoder& enc, const prompt::ClassTokenTable& table);

struct GradientReport {
    struct ModeReport {
        losses::BgMode mode;
        double max_rel_err = 0.0;
        // flattened context (+ background) gradients of the worst instance
        std::vector<double> analytic;
        std::vector<double> finite_diff;
    };
    std::vector<ModeReport> modes;
    double max_rel_err = 0.0;
};

// Central finite differences against grad() on randomized small instances,
// one sweep per bg mode. Step 1e-5; relative error is normalized by
// max(1, |analytic|, |fd|).
GradientReport gradcheck(const TrainConfig& cfg, std::uint64_t seed,
                         std::size_t instances = 20);

} // namespace detpro::trainer
