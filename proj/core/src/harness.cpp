#include "detpro/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "detpro/errors.hpp"
#include "detpro/sha256.hpp"
#include "detpro/trainer.hpp"

namespace detpro::harness {

using geometry::ClassSplit;
using losses::Temperature;

std::vector<int> classify_topk(std::span<const double> f,
                               const std::vector<ClassEmbedding>& embeddings,
                               losses::Temperature tau, std::size_t k) {
    (void)tau; // rank by cosine; Eq-style probabilities are monotone in it
    if (k > embeddings.size())
        throw data_error("classify_topk: k exceeds the class count");
    std::vector<std::pair<double, int>> scored;
    scored.reserve(embeddings.size());
    for (const ClassEmbedding& e : embeddings)
        scored.emplace_back(losses::cosine(f, e.vector), e.class_id);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
    return out;
}

std::vector<ClassEmbedding> build_class_embeddings(const prompt::Checkpoint& ckpt,
                                                   const encoder::FrozenTextEncoder& enc,
                                                   const prompt::ClassTokenTable& table,
                                                   const std::vector<int>& subset) {
    const trainer::TrainConfig& cfg = ckpt.config;
    if (cfg.ensemble_level == trainer::TrainConfig::EnsembleLevel::context)
        return encoder::encode_class_set(enc, ckpt.ensembled, table, cfg.token_position, subset);

    // Embedding-level ensemble: average the per-group encodings, renormalize
    // (the ranking is cosine-based, so the renormalization is cosmetic).
    std::vector<ClassEmbedding> out;
    out.reserve(subset.size());
    std::size_t n_group = ckpt.group_contexts.size();
    for (int id : subset) {
        std::vector<long double> sum(enc.embed_dim(), 0.0L);
        for (const prompt::PromptContext& ctx : ckpt.group_contexts) {
            Matrix seq = prompt::assemble(ctx, table.token(id), cfg.token_position);
            std::vector<double> t = enc.encode(seq);
            for (std::size_t e = 0; e < t.size(); ++e) sum[e] += t[e];
        }
        std::vector<double> mean(enc.embed_dim());
        for (std::size_t e = 0; e < mean.size(); ++e)
            mean[e] = static_cast<double>(sum[e] / static_cast<long double>(n_group));
        double sq = 0.0;
        for (double v : mean) sq += v * v;
        double norm = std::sqrt(sq);
        if (norm == 0.0) throw data_error("build_class_embeddings: zero-norm ensemble");
        for (double& v : mean) v /= norm;
        out.push_back(ClassEmbedding{id, std::move(mean)});
    }
    return out;
}

EvalReport evaluate(const std::vector<ProposalRecord>& records,
                    const std::vector<ClassEmbedding>& class_embeddings,
                    const prompt::ClassTokenTable& table, const trainer::TrainConfig& cfg) {
    Temperature tau(cfg.temperature);

    std::vector<ProposalRecord> gts, proposals;
    for (const ProposalRecord& r : records) {
        if (r.kind == geometry::RecordKind::ground_truth) gts.push_back(r);
        else proposals.push_back(r);
    }
    geometry::ProposalPartition part = geometry::partition(proposals, gts, cfg.iou_threshold);

    std::vector<ClassEmbedding> base_embeddings;
    for (const ClassEmbedding& e : class_embeddings)
        if (table.split(e.class_id) == ClassSplit::base) base_embeddings.push_back(e);

    std::size_t top_k = std::min<std::size_t>(5, class_embeddings.size());

    EvalReport report;
    std::map<int, std::pair<std::size_t, std::size_t>> per_class; // hits, total
    std::size_t hit1_base = 0, hit5_base = 0, hit1_novel = 0, hit5_novel = 0;

    for (const ProposalRecord& p : part.positives) {
        if (!p.embedding)
            throw data_error("evaluate: proposal " + p.id + " has no embedding");
        if (!p.label) continue;
        int label = *p.label;
        std::vector<int> ranked = classify_topk(*p.embedding, class_embeddings, tau, top_k);
        bool top1 = !ranked.empty() && ranked.front() == label;
        bool top5 = std::find(ranked.begin(), ranked.end(), label) != ranked.end();

        auto& pc = per_class[label];
        pc.second += 1;
        if (top1) pc.first += 1;

        if (table.split(label) == ClassSplit::base) {
            report.positives_base += 1;
            hit1_base += top1;
            hit5_base += top5;
        } else {
            report.positives_novel += 1;
            hit1_novel += top1;
            hit5_novel += top5;
        }
    }

    if (report.positives_base > 0) {
        report.top1_base = double(hit1_base) / double(report.positives_base);
        report.top5_base = double(hit5_base) / double(report.positives_base);
    }
    if (report.positives_novel > 0) {
        report.top1_novel = double(hit1_novel) / double(report.positives_novel);
        report.top5_novel = double(hit5_novel) / double(report.positives_novel);
    }
    for (const auto& [id, counts] : per_class)
        report.per_class_top1[id] = double(counts.first) / double(counts.second);

    double max_prob_sum = 0.0, entropy_sum = 0.0;
    for (const ProposalRecord& n : part.negatives) {
        if (!n.embedding)
            throw data_error("evaluate: proposal " + n.id + " has no embedding");
        losses::ScoreVector probs = losses::class_probs(*n.embedding, base_embeddings, tau);
        double mx = 0.0, ent = 0.0;
        for (double p : probs.p) {
            mx = std::max(mx, p);
            if (p > 0.0) ent -= p * std::log(p);
        }
        max_prob_sum += mx;
        entropy_sum += ent;
        report.negatives += 1;
    }
    if (report.negatives > 0) {
        report.neg_mean_max_prob = max_prob_sum / double(report.negatives);
        report.neg_mean_entropy = entropy_sum / double(report.negatives);
    }

    report.config_hash = to_hex(trainer::config_hash(cfg));
    report.seed_init = cfg.seed_init;
    report.seed_data = cfg.seed_data;
    report.seed_encoder = cfg.seed_encoder;
    return report;
}

EvalReport evaluate(const std::vector<ProposalRecord>& records,
                    const prompt::PromptContext& context,
                    const encoder::FrozenTextEncoder& enc,
                    const prompt::ClassTokenTable& table, const trainer::TrainConfig& cfg) {
    std::vector<ClassEmbedding> embeddings =
        encoder::encode_class_set(enc, context, table, cfg.token_position, table.all_ids());
    return evaluate(records, embeddings, table, cfg);
}

losses::ScoreVector fuse_scores(const losses::ScoreVector& text_scores,
                                const losses::ScoreVector& image_scores) {
    if (text_scores.size() != image_scores.size())
        throw data_error("fuse_scores: score vectors differ in length");
    if (text_scores.size() == 0) throw data_error("fuse_scores: empty score vectors");
    std::vector<double> fused(text_scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < fused.size(); ++i) {
        fused[i] = std::sqrt(text_scores[i] * image_scores[i]);
        sum += fused[i];
    }
    if (sum == 0.0) throw data_error("fuse_scores: all fused scores are zero");
    for (double& v : fused) v /= sum;
    return losses::ScoreVector{std::move(fused)};
}

void export_embeddings(const prompt::PromptContext& context,
                       const encoder::FrozenTextEncoder& enc,
                       const prompt::ClassTokenTable& table, const std::vector<int>& subset,
                       const std::string& path, prompt::TokenPosition pos) {
    std::vector<ClassEmbedding> embeddings =
        encoder::encode_class_set(enc, context, table, pos, subset);
    encoder::write_class_embeddings(path, embeddings, table);
}

std::string format_report(const EvalReport& report) {
    std::ostringstream os;
    auto line = [&os](const std::string& metric, const std::string& split, const std::string& v) {
        os << metric << '\t' << split << '\t' << v << '\n';
    };
    line("top1", "base", trainer::format_double(report.top1_base));
    line("top5", "base", trainer::format_double(report.top5_base));
    line("top1", "novel", trainer::format_double(report.top1_novel));
    line("top5", "novel", trainer::format_double(report.top5_novel));
    for (const auto& [id, acc] : report.per_class_top1)
        line("class_top1_" + std::to_string(id), "all", trainer::format_double(acc));
    line("neg_mean_max_prob", "all", trainer::format_double(report.neg_mean_max_prob));
    line("neg_mean_entropy", "all", trainer::format_double(report.neg_mean_entropy));
    line("positives", "base", std::to_string(report.positives_base));
    line("positives", "novel", std::to_string(report.positives_novel));
    line("negatives", "all", std::to_string(report.negatives));
    line("config_hash", "all", report.config_hash);
    line("seed_init", "all", std::to_string(report.seed_init));
    line("seed_data", "all", std::to_string(report.seed_data));
    line("seed_encoder", "all", std::to_string(report.seed_encoder));
    return os.str();
}

namespace {

AblationRow ablation_cell(const std::string& cell, const trainer::TrainConfig& cfg,
                          const std::vector<ProposalRecord>& records,
                          const prompt::ClassTokenTable& table) {
    cfg.validate();
    encoder::FrozenTextEncoder enc(cfg.seed_encoder, cfg.word_dim, cfg.embed_dim, cfg.max_len);
    std::vector<ProposalRecord> gts, proposals;
    for (const ProposalRecord& r : records) {
        if (r.kind == geometry::RecordKind::ground_truth) gts.push_back(r);
        else proposals.push_back(r);
    }
    geometry::ProposalPartition part = geometry::partition(proposals, gts, cfg.iou_threshold);
    trainer::TrainRun run = trainer::train_all(part, cfg, enc, table);
    std::vector<ClassEmbedding> embeddings =
        build_class_embeddings(run.checkpoint, enc, table, table.all_ids());
    EvalReport report = evaluate(records, embeddings, table, cfg);
    return AblationRow{cell, report.top1_base, report.top1_novel};
}

} // namespace

std::vector<AblationRow> run_ablation(const std::vector<ProposalRecord>& records,
                                      const prompt::ClassTokenTable& table,
                                      const trainer::TrainConfig& base_cfg,
                                      const std::vector<int>& tables) {
    auto wants = [&tables](int t) {
        return std::find(tables.begin(), tables.end(), t) != tables.end();
    };
    std::vector<AblationRow> rows;

    if (wants(3)) { // background interpretation strategies
        for (losses::BgMode mode :
             {losses::BgMode::no_bg, losses::BgMode::learnable_bg, losses::BgMode::soft_bg}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.bg_mode = mode;
            rows.push_back(
                ablation_cell("table3.bg_mode=" + losses::to_string(mode), cfg, records, table));
        }
    }
    if (wants(4)) { // negative proposal fraction
        for (double fraction : {0.1, 0.3, 0.5, 1.0}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.neg_fraction = fraction;
            rows.push_back(ablation_cell(
                "table4.neg_fraction=" + trainer::format_double(fraction), cfg, records, table));
        }
    }
    if (wants(5)) { // training data sources
        struct Source { bool gt, fg, bg; const char* name; };
        for (Source row : {Source{true, false, false, "gt"}, Source{true, true, false, "gt+fg"},
                           Source{true, false, true, "gt+bg"},
                           Source{true, true, true, "gt+fg+bg"}}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.use_gt = row.gt;
            cfg.use_fg = row.fg;
            cfg.use_bg = row.bg;
            if (!row.bg) cfg.bg_mode = losses::BgMode::no_bg;
            rows.push_back(
                ablation_cell(std::string("table5.data=") + row.name, cfg, records, table));
        }
    }
    if (wants(6)) { // IoU ranges and ensembles
        struct Range { double lo, hi, step; };
        for (Range r : {Range{0.5, 0.6, 0.1}, Range{0.6, 0.7, 0.1}, Range{0.7, 0.8, 0.1},
                        Range{0.8, 0.9, 0.1}, Range{0.9, 1.0, 0.1}, Range{0.5, 1.0, 0.5},
                        Range{0.6, 1.0, 0.4}, Range{0.7, 1.0, 0.3}, Range{0.8, 1.0, 0.2}}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.iou_low = r.lo;
            cfg.iou_high = r.hi;
            cfg.iou_step = r.step;
            rows.push_back(ablation_cell("table6.range=" + trainer::format_double(r.lo) + "-" +
                                             trainer::format_double(r.hi),
                                         cfg, records, table));
        }
        for (double lo : {0.5, 0.6, 0.7, 0.8}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.iou_low = lo;
            cfg.iou_high = 1.0;
            cfg.iou_step = 0.1;
            rows.push_back(ablation_cell(
                "table6.ensemble=" + trainer::format_double(lo) + ":1:0.1", cfg, records, table));
        }
    }
    if (wants(7)) { // context length
        for (std::size_t length : {std::size_t{4}, std::size_t{8}, std::size_t{16}}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.context_length = length;
            rows.push_back(ablation_cell("table7.context_length=" + std::to_string(length), cfg,
                                         records, table));
        }
    }
    if (wants(8)) { // class token position
        for (prompt::TokenPosition pos : {prompt::TokenPosition::front,
                                          prompt::TokenPosition::middle,
                                          prompt::TokenPosition::end}) {
            trainer::TrainConfig cfg = base_cfg;
            cfg.token_position = pos;
            rows.push_back(
                ablation_cell("table8.position=" + prompt::to_string(pos), cfg, records, table));
        }
    }
    return rows;
}

} // namespace detpro::harness
