#pragma once

#include <map>
#include <string>
#include <vector>

#include "detpro/checkpoint.hpp"
#include "detpro/config.hpp"
#include "detpro/encoder.hpp"
#include "detpro/geometry.hpp"
#include "detpro/losses.hpp"
#include "detpro/prompt.hpp"

namespace detpro::harness {

using encoder::ClassEmbedding;
using geometry::ProposalRecord;

// Proposal classification accuracy per split, plus background diagnostics
// that track how uniformly negatives score across base classes.
struct EvalReport {
    double top1_base = 0.0, top5_base = 0.0;
    double top1_novel = 0.0, top5_novel = 0.0;
    std::map<int, double> per_class_top1;
    double neg_mean_max_prob = 0.0;
    double neg_mean_entropy = 0.0;
    std::size_t positives_base = 0, positives_novel = 0, negatives = 0;
    std::string config_hash;
    std::uint64_t seed_init = 0, seed_data = 0, seed_encoder = 0;
};

// Class ids ranked by cosine similarity to f (equivalently by softmax
// probability, which is monotone in the cosine); ties break toward the
// lower id. Returns the top k.
std::vector<int> classify_topk(std::span<const double> f,
                               const std::vector<ClassEmbedding>& embeddings,
                               losses::Temperature tau, std::size_t k);

// Class embeddings for evaluation, honoring the checkpoint's ensemble level:
// either one encode of the ensembled context, or the renormalized mean of
// per-group encodings.
std::vector<ClassEmbedding> build_class_embeddings(const prompt::Checkpoint& ckpt,
                                                   const encoder::FrozenTextEncoder& enc,
                                                   const prompt::ClassTokenTable& table,
                                                   const std::vector<int>& subset);

// Scores every partition positive against the supplied base+novel embeddings;
// negatives contribute only the diagnostics.
EvalReport evaluate(const std::vector<ProposalRecord>& records,
                    const std::vector<ClassEmbedding>& class_embeddings,
                    const prompt::ClassTokenTable& table, const trainer::TrainConfig& cfg);

// Convenience: evaluate a single context (a learned ensemble or a random
// baseline) by encoding all table classes with it.
EvalReport evaluate(const std::vector<ProposalRecord>& records,
                    const prompt::PromptContext& context,
                    const encoder::FrozenTextEncoder& enc,
                    const prompt::ClassTokenTable& table, const trainer::TrainConfig& cfg);

// Elementwise geometric mean of two score vectors over the same class set,
// renormalized to sum 1. Rankings shared by both inputs are preserved.
losses::ScoreVector fuse_scores(const losses::ScoreVector& text_scores,
                                const losses::ScoreVector& image_scores);

// Writes class embeddings for the subset in the external class-embedding
// format (re-importable as the encoder-bypass input).
void export_embeddings(const prompt::PromptContext& context,
                       const encoder::FrozenTextEncoder& enc,
                       const prompt::ClassTokenTable& table, const std::vector<int>& subset,
                       const std::string& path,
                       prompt::TokenPosition pos = prompt::TokenPosition::end);

// One "metric<TAB>split<TAB>value" line per report entry.
std::string format_report(const EvalReport& report);

// One configuration sweep cell: a full train + eval cycle.
struct AblationRow {
    std::string cell;
    double top1_base = 0.0;
    double top1_novel = 0.0;
};

// The sweep matrices behind the ablate subcommand, keyed by table id:
// 3 = background modes, 4 = negative fractions, 5 = data-source toggles,
// 6 = IoU ranges and ensembles, 7 = context lengths, 8 = token positions.
std::vector<AblationRow> run_ablation(const std::vector<ProposalRecord>& records,
                                      const prompt::ClassTokenTable& table,
                                      const trainer::TrainConfig& base_cfg,
                                      const std::vector<int>& tables);

} // namespace detpro::harness
