#pragma once

#include <cstdint>
#include <vector>

#include "detpro/encoder.hpp"
#include "detpro/geometry.hpp"
#include "detpro/matrix.hpp"
#include "detpro/prompt.hpp"

namespace detpro::synth {

using geometry::ProposalRecord;

struct WorldParams {
    std::size_t base_classes = 20;
    std::size_t novel_classes = 10;
    double sigma0 = 0.1;        // embedding noise at IoU 1
    double lambda = 2.0;        // noise growth per unit of (1 - IoU)
    double rho = 0.2;           // negative rejection ceiling on max class cosine
    std::uint64_t seed = 1;
    std::size_t oracle_length = 8; // hidden context length used to plant targets
    double oracle_std = 0.065;     // hidden context scale
    std::size_t clutter_dim = 2;   // dimension of the background clutter span
    double clutter_spread = 0.02;  // isotropic dusting around the clutter span
    prompt::TokenPosition token_position = prompt::TokenPosition::end;
};

// A seeded benchmark world. The hidden linear bridge from token space to
// embedding space is solved so that a hidden oracle context realizes every
// class direction through the frozen encoder; that is what makes contexts
// trained on base classes carry over to novel ones. The bridge, the oracle
// context and the per-class directions are never shown to training.
struct PlantedWorld {
    WorldParams params;
    prompt::ClassTokenTable tokens;
    Matrix bridge;                         // hidden map, embed_dim x word_dim
    std::vector<std::vector<double>> directions; // unit u_c per class id
    Matrix clutter_basis;                  // orthonormal rows spanning the background cone
    prompt::PromptContext oracle_context;  // diagnostic only
    geometry::Box gt_box;                  // planted ground truth, same per image

    std::size_t class_count() const { return directions.size(); }
};

// Token vectors are unit-normalized seeded Gaussians; per-class target
// directions derive from the hidden bridge. Requires
// base + novel <= word_dim so the bridge admits an exact solution.
PlantedWorld gen_world(const WorldParams& params, const encoder::FrozenTextEncoder& enc);

// One ground-truth record per class (IoU 1.0 noise level).
std::vector<ProposalRecord> gen_ground_truths(const PlantedWorld& world);

// n region proposals of class c cycling through the requested IoU levels.
// Boxes realize each level exactly against the planted ground truth; the
// embedding is normalize(u_c + sigma(q) * noise) with
// sigma(q) = sigma0 * (1 + lambda * (1 - q)).
std::vector<ProposalRecord> gen_positives(const PlantedWorld& world, int class_id, std::size_t n,
                                          const std::vector<double>& iou_levels);

// n background records: unit embeddings concentrated near the world's
// low-dimensional clutter span (background crops do not fill the sphere),
// rejection-sampled until every class cosine is below rho; boxes placed with
// max IoU < 0.5.
std::vector<ProposalRecord> gen_negatives(const PlantedWorld& world, std::size_t n);

// The full benchmark dataset: ground truths, graded positives per class,
// negatives. Round-trips through the proposal file format losslessly.
std::vector<ProposalRecord> gen_dataset(const PlantedWorld& world, std::size_t pos_per_class,
                                        std::size_t negatives,
                                        const std::vector<double>& iou_levels);

} // namespace detpro::synth
