#pragma once

#include <optional>
#include <span>
#include <vector>

#include "detpro/encoder.hpp"

namespace detpro::losses {

using encoder::ClassEmbedding;

// Softmax sharpness divisor on cosine similarities. Must be positive.
class Temperature {
public:
    explicit Temperature(double value);
    double value() const { return value_; }

private:
    double value_;
};

// Per-class probabilities; entries in (0,1), summing to 1.
struct ScoreVector {
    std::vector<double> p;

    std::size_t size() const { return p.size(); }
    double operator[](std::size_t i) const { return p[i]; }
};

constexpr double kLogClamp = 1e-12; // probability floor before logs

// Cosine similarity computed on f scaled by its max-magnitude component, so
// exactly representable rescalings of f give bit-identical results and large
// inputs cannot overflow.
double cosine(std::span<const double> f, std::span<const double> t);

// d cos(f, t) / d t, holding f fixed.
std::vector<double> cosine_grad_embedding(std::span<const double> f, std::span<const double> t);

// Temperature-scaled softmax over cosine similarities (max-subtracted).
ScoreVector class_probs(std::span<const double> f, const std::vector<ClassEmbedding>& embeddings,
                        Temperature tau);

// Cross entropy against the labeled class: -log p_label.
double positive_loss(std::span<const double> f, int label,
                     const std::vector<ClassEmbedding>& base_embeddings, Temperature tau);

// Pushes a background region toward scoring every class equally:
// -(1/|C_B|) sum_c log p_c, minimized at the uniform distribution.
double soft_bg_loss(std::span<const double> f, const std::vector<ClassEmbedding>& base_embeddings,
                    Temperature tau);
double soft_bg_loss_from_probs(const ScoreVector& probs);

// Probability of a background region under the learnable background
// embedding: its softmax slot against all base classes.
double learnable_bg_prob(std::span<const double> f,
                         const std::vector<ClassEmbedding>& base_embeddings,
                         std::span<const double> bg_embedding, Temperature tau);
double learnable_bg_loss(double p_bg);

enum class BgMode { soft_bg, learnable_bg, no_bg };

BgMode bg_mode_from(const std::string& name);
std::string to_string(BgMode mode);

struct LabeledEmbedding {
    std::vector<double> embedding;
    int label = -1;
};

// Per-group objective: mean negative loss (by bg mode) plus mean positive
// loss. In no_bg mode the negative term is omitted.
double group_loss(const std::vector<LabeledEmbedding>& positives,
                  const std::vector<std::vector<double>>& negatives, BgMode mode,
                  const std::vector<ClassEmbedding>& base_embeddings,
                  const std::optional<std::vector<double>>& bg_embedding, Temperature tau);

} // namespace detpro::losses
