#include "detpro/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "detpro/errors.hpp"
#include "detpro/rng.hpp"

namespace detpro::trainer {

using encoder::ClassEmbedding;
using encoder::EncodeCache;
using encoder::FrozenTextEncoder;
using geometry::ProposalRecord;
using losses::BgMode;
using losses::Temperature;
using prompt::PromptContext;

namespace {

struct ClassForward {
    int class_id;
    Matrix sequence;
    EncodeCache cache;
};

// Forward pass for every base class (and the background prompt), shared by
// the loss and gradient paths.
struct ModelForward {
    std::vector<ClassForward> classes;
    std::vector<ClassEmbedding> embeddings;
    std::optional<ClassForward> bg;
    std::vector<double> bg_embedding;
};

ModelForward forward_classes(const ModelState& state, const FrozenTextEncoder& enc,
                             const prompt::ClassTokenTable& table, const TrainConfig& cfg) {
    ModelForward fwd;
    for (int id : table.base_ids()) {
        ClassForward cf;
        cf.class_id = id;
        cf.sequence = prompt::assemble(state.context, table.token(id), cfg.token_position);
        std::vector<double> t = enc.encode(cf.sequence, cf.cache);
        fwd.embeddings.push_back(ClassEmbedding{id, std::move(t)});
        fwd.classes.push_back(std::move(cf));
    }
    if (cfg.bg_mode == BgMode::learnable_bg) {
        if (!state.bg_context)
            throw data_error("grad: learnable_bg mode without a background context");
        ClassForward cf;
        cf.class_id = -1;
        cf.sequence = prompt::assemble_bg(*state.bg_context);
        fwd.bg_embedding = enc.encode(cf.sequence, cf.cache);
        fwd.bg = std::move(cf);
    }
    return fwd;
}

// dL/dz for the temperature-scaled softmax given dL/dp (zeros where the
// probability clamp made the loss locally constant).
std::vector<double> softmax_pullback(const losses::ScoreVector& probs,
                                     const std::vector<double>& dldp) {
    double inner = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) inner += dldp[j] * probs[j];
    std::vector<double> dldz(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) dldz[i] = probs[i] * (dldp[i] - inner);
    return dldz;
}

struct LossAccumulator {
    std::vector<std::vector<double>> grad_embedding; // per base class, D_e
    std::vector<double> grad_bg_embedding;

    void add_cosine_grads(const std::vector<double>& dldz, double inv_tau,
                          const TrainItem& item, const ModelForward& fwd, double coeff) {
        for (std::size_t i = 0; i < fwd.embeddings.size(); ++i) {
            double g = dldz[i] * inv_tau * coeff;
            if (g == 0.0) continue;
            std::vector<double> dcos =
                losses::cosine_grad_embedding(item.embedding, fwd.embeddings[i].vector);
            for (std::size_t e = 0; e < dcos.size(); ++e) grad_embedding[i][e] += g * dcos[e];
        }
        if (dldz.size() > fwd.embeddings.size()) { // background slot
            double g = dldz.back() * inv_tau * coeff;
            if (g != 0.0) {
                std::vector<double> dcos =
                    losses::cosine_grad_embedding(item.embedding, fwd.bg_embedding);
                for (std::size_t e = 0; e < dcos.size(); ++e)
                    grad_bg_embedding[e] += g * dcos[e];
            }
        }
    }
};

} // namespace

static GradResult run_batch(const ModelState& state, const std::vector<const TrainItem*>& batch,
                            const FrozenTextEncoder& enc, const prompt::ClassTokenTable& table,
                            const TrainConfig& cfg, bool want_grad) {
    Temperature tau(cfg.temperature);
    ModelForward fwd = forward_classes(state, enc, table, cfg);
    std::size_t n_class = fwd.embeddings.size();
    if (n_class == 0) throw data_error("grad: token table has no base classes");

    std::vector<const TrainItem*> positives, negatives;
    for (const TrainItem* item : batch) {
        if (item->label) positives.push_back(item);
        else if (cfg.bg_mode != BgMode::no_bg) negatives.push_back(item);
    }

    // Augmented embedding list with the background slot last.
    std::vector<ClassEmbedding> with_bg;
    if (cfg.bg_mode == BgMode::learnable_bg) {
        with_bg = fwd.embeddings;
        with_bg.push_back(ClassEmbedding{-1, fwd.bg_embedding});
    }

    LossAccumulator acc;
    acc.grad_embedding.assign(n_class, std::vector<double>(enc.embed_dim(), 0.0));
    if (fwd.bg) acc.grad_bg_embedding.assign(enc.embed_dim(), 0.0);

    double inv_tau = 1.0 / tau.value();
    double neg_loss_sum = 0.0, pos_loss_sum = 0.0;
    double inv_neg = negatives.empty() ? 0.0 : 1.0 / static_cast<double>(negatives.size());
    double inv_pos = positives.empty() ? 0.0 : 1.0 / static_cast<double>(positives.size());

    for (const TrainItem* item : negatives) {
        if (cfg.bg_mode == BgMode::soft_bg) {
            losses::ScoreVector probs = losses::class_probs(item->embedding, fwd.embeddings, tau);
            double term = losses::soft_bg_loss_from_probs(probs);
            if (!std::isfinite(term))
                throw data_error("non-finite negative loss for proposal " + item->id);
            neg_loss_sum += term;
            if (want_grad) {
                double w = 1.0 / static_cast<double>(n_class);
                std::vector<double> dldp(probs.size(), 0.0);
                for (std::size_t j = 0; j < probs.size(); ++j)
                    if (probs[j] > losses::kLogClamp) dldp[j] = -w / probs[j];
                acc.add_cosine_grads(softmax_pullback(probs, dldp), inv_tau, *item, fwd, inv_neg);
            }
        } else { // learnable_bg
            losses::ScoreVector probs = losses::class_probs(item->embedding, with_bg, tau);
            double p_bg = probs.p.back();
            double term = -std::log(std::max(p_bg, losses::kLogClamp));
            if (!std::isfinite(term))
                throw data_error("non-finite negative loss for proposal " + item->id);
            neg_loss_sum += term;
            if (want_grad && p_bg > losses::kLogClamp) {
                std::vector<double> dldp(probs.size(), 0.0);
                dldp.back() = -1.0 / p_bg;
                acc.add_cosine_grads(softmax_pullback(probs, dldp), inv_tau, *item, fwd, inv_neg);
            }
        }
    }

    for (const TrainItem* item : positives) {
        std::size_t idx = n_class;
        for (std::size_t i = 0; i < n_class; ++i)
            if (fwd.embeddings[i].class_id == *item->label) { idx = i; break; }
        if (idx == n_class)
            throw data_error("proposal " + item->id + ": label " +
                             std::to_string(*item->label) + " is not a base class");
        losses::ScoreVector probs = losses::class_probs(item->embedding, fwd.embeddings, tau);
        double term = -std::log(std::max(probs[idx], losses::kLogClamp));
        if (!std::isfinite(term))
            throw data_error("non-finite positive loss for proposal " + item->id);
        pos_loss_sum += term;
        if (want_grad && probs[idx] > losses::kLogClamp) {
            std::vector<double> dldp(probs.size(), 0.0);
            dldp[idx] = -1.0 / probs[idx];
            acc.add_cosine_grads(softmax_pullback(probs, dldp), inv_tau, *item, fwd, inv_pos);
        }
    }

    GradResult result;
    result.loss = neg_loss_sum * inv_neg + pos_loss_sum * inv_pos;
    if (!std::isfinite(result.loss)) throw data_error("non-finite batch loss");
    if (!want_grad) return result;

    // Pull the per-embedding gradients back through the frozen encoder and
    // gather the context rows. The class-token row is fixed and dropped.
    result.grad_context = Matrix(state.context.length(), state.context.word_dim());
    std::size_t token_row = prompt::token_row(state.context.length(), cfg.token_position);
    for (std::size_t i = 0; i < n_class; ++i) {
        bool nonzero = false;
        for (double g : acc.grad_embedding[i]) nonzero = nonzero || g != 0.0;
        if (!nonzero) continue;
        Matrix g_seq = enc.backward(fwd.classes[i].sequence, fwd.classes[i].cache,
                                    acc.grad_embedding[i]);
        std::size_t src = 0;
        for (std::size_t r = 0; r < g_seq.rows; ++r) {
            if (r == token_row) continue;
            double* dst = result.grad_context.row(src++);
            const double* from = g_seq.row(r);
            for (std::size_t c = 0; c < g_seq.cols; ++c) dst[c] += from[c];
        }
    }
    if (fwd.bg) {
        result.grad_bg = Matrix(state.bg_context->length(), state.bg_context->word_dim());
        bool nonzero = false;
        for (double g : acc.grad_bg_embedding) nonzero = nonzero || g != 0.0;
        if (nonzero) {
            Matrix g_seq = enc.backward(fwd.bg->sequence, fwd.bg->cache, acc.grad_bg_embedding);
            add_inplace(*result.grad_bg, g_seq);
        }
    }
    return result;
}

GradResult grad(const ModelState& state, const std::vector<const TrainItem*>& batch,
                const FrozenTextEncoder& enc, const prompt::ClassTokenTable& table,
                const TrainConfig& cfg) {
    return run_batch(state, batch, enc, table, cfg, true);
}

double batch_loss(const ModelState& state, const std::vector<const TrainItem*>& batch,
                  const FrozenTextEncoder& enc, const prompt::ClassTokenTable& table,
                  const TrainConfig& cfg) {
    return run_batch(state, batch, enc, table, cfg, false).loss;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw config_error("cosine_lr: total_steps must be positive");
    if (step > total_steps) throw config_error("cosine_lr: step beyond total_steps");
    double phase = 3.14159265358979323846 * static_cast<double>(step) /
                   static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(phase));
}

namespace {

std::vector<TrainItem> build_pool(const geometry::ContextGroup& group,
                                  const std::vector<ProposalRecord>& negatives,
                                  const TrainConfig& cfg) {
    std::vector<TrainItem> pool;
    std::vector<std::string> missing;
    for (const ProposalRecord& rec : group.members) {
        if (!rec.embedding) { missing.push_back(rec.id); continue; }
        if (!rec.label) { missing.push_back(rec.id); continue; }
        pool.push_back(TrainItem{rec.id, rec.label, *rec.embedding});
    }
    if (cfg.bg_mode != BgMode::no_bg) {
        for (const ProposalRecord& rec : negatives) {
            if (!rec.embedding) { missing.push_back(rec.id); continue; }
            pool.push_back(TrainItem{rec.id, std::nullopt, *rec.embedding});
        }
    }
    if (!missing.empty()) {
        std::string ids;
        for (const std::string& id : missing) ids += (ids.empty() ? "" : ", ") + id;
        throw data_error("train_group: records missing embeddings or labels: " + ids);
    }
    return pool;
}

void sgd_step(Matrix& params, const Matrix& g, double lr) {
    for (std::size_t i = 0; i < params.data.size(); ++i) params.data[i] -= lr * g.data[i];
}

} // namespace

GroupTrainResult train_group(const geometry::ContextGroup& group,
                             const std::vector<ProposalRecord>& negatives,
                             const TrainConfig& cfg, const FrozenTextEncoder& enc,
                             const prompt::ClassTokenTable& table, std::size_t group_index) {
    if (group.members.empty()) throw data_error("train_group: empty group");

    ModelState state;
    state.context = prompt::init_context(cfg.context_length, cfg.word_dim, cfg.init_std,
                                         mix_seed(cfg.seed_init, 2 * group_index));
    if (cfg.bg_mode == BgMode::learnable_bg)
        state.bg_context = prompt::init_context(cfg.context_length, cfg.word_dim, cfg.init_std,
                                                mix_seed(cfg.seed_init, 2 * group_index + 1));

    std::vector<TrainItem> pool = build_pool(group, negatives, cfg);

    std::vector<const TrainItem*> everything;
    everything.reserve(pool.size());
    for (const TrainItem& item : pool) everything.push_back(&item);

    GroupTrainResult result;
    result.initial_loss = batch_loss(state, everything, enc, table, cfg);

    std::size_t batches_per_epoch = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total_steps = cfg.epochs * batches_per_epoch;

    if (total_steps > 0) {
        SeededRng shuffle_rng(mix_seed(cfg.seed_data, group_index + 1));
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                std::vector<const TrainItem*> batch;
                batch.reserve(stop - start);
                for (std::size_t i = start; i < stop; ++i) batch.push_back(&pool[order[i]]);

                GradResult g = grad(state, batch, enc, table, cfg);
                double lr = cosine_lr(step, total_steps, cfg.lr);
                sgd_step(state.context.vectors, g.grad_context, lr);
                if (state.bg_context && g.grad_bg)
                    sgd_step(state.bg_context->vectors, *g.grad_bg, lr);
                ++step;
            }
        }
        result.steps = step;
    }

    result.final_loss = total_steps > 0 ? batch_loss(state, everything, enc, table, cfg)
                                        : result.initial_loss;
    result.context = std::move(state.context);
    result.bg_context = std::move(state.bg_context);
    return result;
}

TrainRun train_all(const geometry::ProposalPartition& part, const TrainConfig& cfg,
                   const FrozenTextEncoder& enc, const prompt::ClassTokenTable& table) {
    cfg.validate();

    // Data-source toggles, and only base-split records ever train.
    geometry::ProposalPartition filtered;
    filtered.threshold = part.threshold;
    for (const ProposalRecord& rec : part.positives) {
        bool is_gt = rec.kind == geometry::RecordKind::ground_truth;
        if (is_gt && !cfg.use_gt) continue;
        if (!is_gt && !cfg.use_fg) continue;
        if (rec.label && table.contains(*rec.label) &&
            table.split(*rec.label) == geometry::ClassSplit::base)
            filtered.positives.push_back(rec);
    }
    if (cfg.use_bg && cfg.bg_mode != BgMode::no_bg) filtered.negatives = part.negatives;

    std::vector<ProposalRecord> shared_negatives;
    if (!filtered.negatives.empty())
        shared_negatives =
            geometry::subsample_negatives(filtered.negatives, cfg.neg_fraction, cfg.seed_data);

    std::vector<geometry::ContextGroup> groups =
        geometry::grade(filtered, cfg.iou_low, cfg.iou_high, cfg.iou_step, cfg.gt_in_all_groups);

    TrainRun run;
    std::vector<PromptContext> contexts;
    std::vector<PromptContext> bg_contexts;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        // Bands left empty by the data-source toggles (e.g. ground-truth-only
        // runs populate just the top band) contribute nothing to the ensemble.
        if (groups[k].members.empty()) continue;
        GroupTrainResult r = train_group(groups[k], shared_negatives, cfg, enc, table, k);
        contexts.push_back(r.context);
        if (r.bg_context) bg_contexts.push_back(*r.bg_context);
        run.groups.push_back(std::move(r));
    }
    if (contexts.empty()) throw data_error("train_all: no IoU band has any positives");

    run.checkpoint.config = cfg;
    run.checkpoint.group_contexts = contexts;
    run.checkpoint.ensembled = prompt::ensemble(contexts);
    if (!bg_contexts.empty()) {
        run.checkpoint.group_bg_contexts = bg_contexts;
        run.checkpoint.ensembled_bg = prompt::ensemble(bg_contexts);
    }
    return run;
}

GradientReport gradcheck(const TrainConfig& cfg, std::uint64_t seed, std::size_t instances) {
    constexpr double kStep = 1e-5;
    constexpr std::size_t kLen = 3, kWordDim = 6, kEmbedDim = 5, kClasses = 4;

    GradientReport report;
    for (BgMode mode : {BgMode::soft_bg, BgMode::learnable_bg, BgMode::no_bg}) {
        GradientReport::ModeReport mr;
        mr.mode = mode;

        for (std::size_t inst = 0; inst < instances; ++inst) {
            SeededRng rng(mix_seed(seed, inst * 8 + static_cast<std::size_t>(mode)));

            TrainConfig small = cfg;
            small.context_length = kLen;
            small.word_dim = kWordDim;
            small.embed_dim = kEmbedDim;
            small.max_len = kLen + 1;
            small.bg_mode = mode;

            FrozenTextEncoder enc(rng.next_u64(), kWordDim, kEmbedDim, kLen + 1);
            prompt::ClassTokenTable table(kWordDim);
            for (std::size_t c = 0; c < kClasses; ++c) {
                std::vector<double> tok(kWordDim);
                double sq = 0.0;
                for (double& v : tok) { v = rng.normal(); sq += v * v; }
                for (double& v : tok) v /= std::sqrt(sq);
                table.add(static_cast<int>(c), geometry::ClassSplit::base, tok);
            }

            ModelState state;
            state.context = prompt::init_context(kLen, kWordDim, 0.05, rng.next_u64());
            if (mode == BgMode::learnable_bg)
                state.bg_context = prompt::init_context(kLen, kWordDim, 0.05, rng.next_u64());

            std::vector<TrainItem> items;
            for (int i = 0; i < 3; ++i) {
                TrainItem it;
                it.id = "pos" + std::to_string(i);
                it.label = static_cast<int>(rng.uniform_int(kClasses));
                it.embedding.resize(kEmbedDim);
                for (double& v : it.embedding) v = rng.normal();
                items.push_back(std::move(it));
            }
            if (mode != BgMode::no_bg) {
                for (int i = 0; i < 3; ++i) {
                    TrainItem it;
                    it.id = "neg" + std::to_string(i);
                    it.embedding.resize(kEmbedDim);
                    for (double& v : it.embedding) v = rng.normal();
                    items.push_back(std::move(it));
                }
            }
            std::vector<const TrainItem*> batch;
            for (const TrainItem& it : items) batch.push_back(&it);

            GradResult g = grad(state, batch, enc, table, small);

            std::vector<double> analytic(g.grad_context.data);
            if (g.grad_bg)
                analytic.insert(analytic.end(), g.grad_bg->data.begin(), g.grad_bg->data.end());

            std::vector<double> fd;
            fd.reserve(analytic.size());
            auto probe = [&](Matrix& params, std::size_t i) {
                double saved = params.data[i];
                params.data[i] = saved + kStep;
                double up = batch_loss(state, batch, enc, table, small);
                params.data[i] = saved - kStep;
                double down = batch_loss(state, batch, enc, table, small);
                params.data[i] = saved;
                fd.push_back((up - down) / (2.0 * kStep));
            };
            for (std::size_t i = 0; i < state.context.vectors.data.size(); ++i)
                probe(state.context.vectors, i);
            if (state.bg_context)
                for (std::size_t i = 0; i < state.bg_context->vectors.data.size(); ++i)
                    probe(state.bg_context->vectors, i);

            double worst = 0.0;
            for (std::size_t i = 0; i < analytic.size(); ++i) {
                double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(fd[i])});
                worst = std::max(worst, std::fabs(analytic[i] - fd[i]) / denom);
            }
            if (worst >= mr.max_rel_err) {
                mr.max_rel_err = worst;
                mr.analytic = std::move(analytic);
                mr.finite_diff = std::move(fd);
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, mr.max_rel_err);
        report.modes.push_back(std::move(mr));
    }
    return report;
}

} // namespace detpro::trainer
