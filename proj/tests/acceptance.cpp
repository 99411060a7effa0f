// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria are property-based plus seeded synthetic end-to-end runs
// on the default benchmark (20 base / 10 novel classes, dims 32, 50 positives
// per class over IoU levels 0.5..1.0, 1000 negatives, 6 epochs).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "detpro/encoder.hpp"
#include "detpro/geometry.hpp"
#include "detpro/harness.hpp"
#include "detpro/losses.hpp"
#include "detpro/prompt.hpp"
#include "detpro/rng.hpp"
#include "detpro/synthdata.hpp"
#include "detpro/trainer.hpp"

using namespace detpro;
using losses::ScoreVector;
using losses::Temperature;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail) {
    std::printf("criterion %d (%s): %s%s%s\n", number, name.c_str(), pass ? "PASS" : "FAIL",
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<encoder::ClassEmbedding> axis_embeddings(std::size_t count, std::size_t dim) {
    std::vector<encoder::ClassEmbedding> out;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> v(dim, 0.0);
        v[i] = 1.0;
        out.push_back(encoder::ClassEmbedding{static_cast<int>(i), v});
    }
    return out;
}

// ---------------------------------------------------------------- criterion 1
void criterion_gradcheck() {
    auto start = std::chrono::steady_clock::now();

    trainer::TrainConfig mild;
    mild.temperature = 1.0;
    trainer::GradientReport mild_report = trainer::gradcheck(mild, 2024, 20);

    trainer::TrainConfig sharp;
    sharp.temperature = 0.01;
    trainer::GradientReport sharp_report = trainer::gradcheck(sharp, 2025, 20);

    double elapsed = seconds_since(start);
    bool pass = mild_report.modes.size() == 3 && sharp_report.modes.size() == 3 &&
                mild_report.max_rel_err <= 1e-5 && sharp_report.max_rel_err <= 1e-4 &&
                elapsed < 60.0;
    std::ostringstream detail;
    detail << "max rel err " << mild_report.max_rel_err << " (tau=1), "
           << sharp_report.max_rel_err << " (tau=0.01), " << elapsed << " s";
    report(1, "gradient correctness", pass, detail.str());
}

// ---------------------------------------------------------------- criterion 2
void criterion_probability_contract() {
    SeededRng rng(7);
    auto embs = axis_embeddings(6, 8);
    bool sums_ok = true, scale_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        // dyadic entries make x0.5, x2, x10 exactly representable
        std::vector<double> f(8);
        bool nonzero = false;
        for (double& v : f) {
            v = static_cast<double>(static_cast<long long>(rng.normal() * (1 << 20))) /
                double(1 << 20);
            nonzero = nonzero || v != 0.0;
        }
        if (!nonzero) f[0] = 1.0;
        ScoreVector p = losses::class_probs(f, embs, Temperature(0.01));
        double sum = 0.0;
        for (double v : p.p) sum += v;
        sums_ok = sums_ok && std::fabs(sum - 1.0) <= 1e-12;

        for (double alpha : {0.5, 2.0, 10.0}) {
            std::vector<double> g(f);
            for (double& v : g) v *= alpha;
            ScoreVector q = losses::class_probs(g, embs, Temperature(0.01));
            scale_ok = scale_ok && q.p == p.p;
        }
    }

    // max probability strictly decreasing in tau on fixed distinct cosines
    // (gaps chosen so no temperature saturates the softmax in floating point)
    bool monotone_ok = true;
    std::vector<double> f = {0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15};
    double last = 1.0;
    for (double tau : {0.01, 0.02, 0.05, 0.1, 0.5, 1.0, 2.0, 10.0}) {
        ScoreVector p = losses::class_probs(f, embs, Temperature(tau));
        double mx = *std::max_element(p.p.begin(), p.p.end());
        monotone_ok = monotone_ok && mx < last;
        last = mx;
    }

    bool pass = sums_ok && scale_ok && monotone_ok;
    std::ostringstream detail;
    detail << "sums " << (sums_ok ? "ok" : "bad") << ", scale invariance "
           << (scale_ok ? "exact" : "broken") << ", sharpening "
           << (monotone_ok ? "monotone" : "broken");
    report(2, "softmax contract", pass, detail.str());
}

// ---------------------------------------------------------------- criterion 3
void criterion_soft_bg_minimizer() {
    bool exact_ok = true;
    for (std::size_t c : {std::size_t{2}, std::size_t{4}, std::size_t{16}}) {
        ScoreVector uniform{std::vector<double>(c, 1.0 / double(c))};
        exact_ok = exact_ok &&
                   losses::soft_bg_loss_from_probs(uniform) == std::log(double(c));
    }

    SeededRng rng(11);
    bool strict_ok = true;
    const std::size_t n = 4;
    double floor_value = std::log(double(n));
    int tested = 0;
    while (tested < 100) {
        std::vector<double> p(n);
        double sum = 0.0;
        for (double& v : p) { v = 0.01 + rng.uniform(); sum += v; }
        for (double& v : p) v /= sum;
        double spread = 0.0;
        for (double v : p) spread = std::max(spread, std::fabs(v - 0.25));
        if (spread < 1e-6) continue; // effectively uniform, skip
        ++tested;
        strict_ok = strict_ok && losses::soft_bg_loss_from_probs(ScoreVector{p}) > floor_value;
    }

    report(3, "uniform minimizer", exact_ok && strict_ok,
           std::string("ln|C| ") + (exact_ok ? "exact" : "off") + ", perturbations " +
               (strict_ok ? "all larger" : "violated"));
}

// ---------------------------------------------------------------- criterion 4
double oracle_iou(const geometry::Box& a, const geometry::Box& b) {
    double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    double inter = w * h;
    double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void criterion_partition_oracle() {
    SeededRng rng(404);
    bool scenes_ok = true;
    for (int scene = 0; scene < 200 && scenes_ok; ++scene) {
        std::vector<geometry::ProposalRecord> gts, proposals;
        std::size_t n_gt = 1 + rng.uniform_int(7);
        std::size_t n_prop = rng.uniform_int(44);
        for (std::size_t i = 0; i < n_gt; ++i) {
            geometry::ProposalRecord gt;
            gt.id = "g" + std::to_string(i);
            gt.image_id = "img" + std::to_string(i % 3);
            double x = 50 * rng.uniform(), y = 50 * rng.uniform();
            gt.box = {x, y, x + 5 + 20 * rng.uniform(), y + 5 + 20 * rng.uniform()};
            gt.kind = geometry::RecordKind::ground_truth;
            gt.label = static_cast<int>(i);
            gts.push_back(std::move(gt));
        }
        for (std::size_t i = 0; i < n_prop; ++i) {
            geometry::ProposalRecord p;
            p.id = "p" + std::to_string(i);
            p.image_id = "img" + std::to_string(rng.uniform_int(3));
            double x = 50 * rng.uniform(), y = 50 * rng.uniform();
            p.box = {x, y, x + 5 + 20 * rng.uniform(), y + 5 + 20 * rng.uniform()};
            proposals.push_back(std::move(p));
        }

        geometry::ProposalPartition part = geometry::partition(proposals, gts, 0.5);

        // brute-force pairwise IoU then threshold
        std::set<std::string> expect_pos;
        for (const auto& gt : gts) expect_pos.insert(gt.id);
        for (const auto& p : proposals) {
            double best = 0.0;
            for (const auto& gt : gts)
                if (gt.image_id == p.image_id) best = std::max(best, oracle_iou(p.box, gt.box));
            if (best >= 0.5) expect_pos.insert(p.id);
        }
        std::set<std::string> got_pos;
        for (const auto& r : part.positives) got_pos.insert(r.id);
        scenes_ok = scenes_ok && got_pos == expect_pos &&
                    part.positives.size() + part.negatives.size() == gts.size() + proposals.size();
    }

    // grading on (0.5 : 1.0 : 0.1) gives exactly five disjoint covering groups
    geometry::ProposalPartition part;
    part.threshold = 0.5;
    SeededRng grng(405);
    for (int i = 0; i < 500; ++i) {
        geometry::ProposalRecord p;
        p.id = "q" + std::to_string(i);
        p.image_id = "img";
        p.box = {0, 0, 1, 1};
        p.label = 0;
        p.max_iou = 0.5 + 0.5 * grng.uniform();
        part.positives.push_back(std::move(p));
    }
    auto groups = geometry::grade(part, 0.5, 1.0, 0.1);
    bool grade_ok = groups.size() == 5;
    std::set<std::string> seen;
    std::size_t assigned = 0;
    for (const auto& g : groups)
        for (const auto& m : g.members) {
            grade_ok = grade_ok && seen.insert(m.id).second;
            grade_ok = grade_ok && m.max_iou >= g.lo;
            ++assigned;
        }
    grade_ok = grade_ok && assigned == part.positives.size();

    report(4, "partition oracle + grading", scenes_ok && grade_ok,
           std::string("200 scenes ") + (scenes_ok ? "match" : "diverge") + ", 5-band cover " +
               (grade_ok ? "ok" : "broken"));
}

// ------------------------------------------------------- default benchmark
struct Benchmark {
    trainer::TrainConfig cfg;
    synth::PlantedWorld world;
    std::vector<geometry::ProposalRecord> records;
    geometry::ProposalPartition part;
};

Benchmark make_benchmark(std::uint64_t seed_tag) {
    Benchmark b;
    b.cfg = trainer::TrainConfig{}; // paper defaults: L=8, lr 2e-3, 6 epochs, tau 0.01
    b.cfg.seed_init = 1 + seed_tag * 100;
    b.cfg.seed_data = 2 + seed_tag * 100;
    b.cfg.seed_encoder = 3;

    encoder::FrozenTextEncoder enc(b.cfg.seed_encoder, b.cfg.word_dim, b.cfg.embed_dim,
                                   b.cfg.max_len);
    synth::WorldParams params; // 20/10 classes, sigma0 0.1, lambda 2, rho 0.2
    params.seed = 1 + seed_tag;
    params.oracle_length = b.cfg.context_length;
    b.world = synth::gen_world(params, enc);
    b.records = synth::gen_dataset(b.world, 50, 1000, {0.5, 0.6, 0.7, 0.8, 0.9, 1.0});

    std::vector<geometry::ProposalRecord> gts, proposals;
    for (geometry::ProposalRecord& r : b.records) {
        if (r.kind == geometry::RecordKind::ground_truth) gts.push_back(r);
        else proposals.push_back(r);
    }
    b.part = geometry::partition(proposals, gts, b.cfg.iou_threshold);
    return b;
}

harness::EvalReport eval_run(const Benchmark& b, const trainer::TrainRun& run) {
    encoder::FrozenTextEncoder enc(b.cfg.seed_encoder, b.cfg.word_dim, b.cfg.embed_dim,
                                   b.cfg.max_len);
    auto embeddings =
        harness::build_class_embeddings(run.checkpoint, enc, b.world.tokens,
                                        b.world.tokens.all_ids());
    return harness::evaluate(b.records, embeddings, b.world.tokens, run.checkpoint.config);
}

// ---------------------------------------------------------------- criterion 5
void criterion_determinism() {
    Benchmark b = make_benchmark(50);
    // reduced schedule keeps this fast; determinism is schedule-independent
    b.cfg.epochs = 2;

    encoder::FrozenTextEncoder enc(b.cfg.seed_encoder, b.cfg.word_dim, b.cfg.embed_dim,
                                   b.cfg.max_len);
    trainer::TrainRun run1 = trainer::train_all(b.part, b.cfg, enc, b.world.tokens);
    trainer::TrainRun run2 = trainer::train_all(b.part, b.cfg, enc, b.world.tokens);
    std::string bytes1 = prompt::save_checkpoint(run1.checkpoint);
    std::string bytes2 = prompt::save_checkpoint(run2.checkpoint);
    bool identical = bytes1 == bytes2;

    prompt::PromptContext ctx = prompt::init_context(8, 32, 0.02, 99);
    prompt::PromptContext mean = prompt::ensemble({ctx});
    bool k1_exact = mean.vectors.data == ctx.vectors.data;

    report(5, "determinism", identical && k1_exact,
           std::string("checkpoints ") + (identical ? "byte-identical" : "diverge") +
               ", K=1 ensemble " + (k1_exact ? "bit-exact" : "off"));
}

// ---------------------------------------------------------------- criterion 6
void criterion_synthetic_end_to_end() {
    auto start = std::chrono::steady_clock::now();

    Benchmark b = make_benchmark(0);
    encoder::FrozenTextEncoder enc(b.cfg.seed_encoder, b.cfg.word_dim, b.cfg.embed_dim,
                                   b.cfg.max_len);

    // untrained random-context baseline
    prompt::PromptContext untrained = prompt::init_context(
        b.cfg.context_length, b.cfg.word_dim, b.cfg.init_std, b.cfg.seed_init);
    harness::EvalReport base_report =
        harness::evaluate(b.records, untrained, enc, b.world.tokens, b.cfg);

    // (a) trained SoftBG beats the baseline by >= 20 novel top-1 points
    trainer::TrainRun soft_run = trainer::train_all(b.part, b.cfg, enc, b.world.tokens);
    harness::EvalReport soft_report = eval_run(b, soft_run);
    double gain = soft_report.top1_novel - base_report.top1_novel;
    bool gain_ok = gain >= 0.20;

    // every band's whole-pool loss descends over training
    bool descent_ok = true;
    for (const trainer::GroupTrainResult& g : soft_run.groups)
        descent_ok = descent_ok && g.final_loss < g.initial_loss;

    // (b) SoftBG lowers the mean max-class probability on negatives relative
    // to no_bg training on at least 4 of 5 seeds
    int lower = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Benchmark bs = make_benchmark(seed);
        encoder::FrozenTextEncoder enc_s(bs.cfg.seed_encoder, bs.cfg.word_dim, bs.cfg.embed_dim,
                                         bs.cfg.max_len);
        trainer::TrainConfig soft_cfg = bs.cfg;
        soft_cfg.bg_mode = losses::BgMode::soft_bg;
        trainer::TrainConfig nobg_cfg = bs.cfg;
        nobg_cfg.bg_mode = losses::BgMode::no_bg;

        trainer::TrainRun soft = trainer::train_all(bs.part, soft_cfg, enc_s, bs.world.tokens);
        trainer::TrainRun nobg = trainer::train_all(bs.part, nobg_cfg, enc_s, bs.world.tokens);
        harness::EvalReport soft_r = eval_run(bs, soft);
        harness::EvalReport nobg_r = eval_run(bs, nobg);
        if (soft_r.neg_mean_max_prob < nobg_r.neg_mean_max_prob) ++lower;
    }
    bool bg_ok = lower >= 4;

    double elapsed = seconds_since(start);
    bool runtime_ok = elapsed < 300.0;

    std::ostringstream detail;
    detail << "novel top-1 " << base_report.top1_novel << " -> " << soft_report.top1_novel
           << " (gain " << gain << "), neg max-prob lower on " << lower << "/5 seeds, "
           << (descent_ok ? "losses descend, " : "losses stall, ") << elapsed << " s";
    report(6, "synthetic end-to-end", gain_ok && bg_ok && descent_ok && runtime_ok, detail.str());
}

// ---------------------------------------------------------------- criterion 7
void criterion_ablation_machinery() {
    // reduced benchmark keeps the 14-cell sweep quick while exercising the
    // exact sweep code path of the ablate subcommand
    trainer::TrainConfig cfg;
    cfg.word_dim = 18;
    cfg.embed_dim = 18;
    cfg.context_length = 4;
    cfg.max_len = 18; // admits the L=16 cell
    cfg.epochs = 1;
    cfg.batch_size = 32;
    cfg.seed_init = 71;
    cfg.seed_data = 72;
    cfg.seed_encoder = 73;

    encoder::FrozenTextEncoder enc(cfg.seed_encoder, cfg.word_dim, cfg.embed_dim, cfg.max_len);
    synth::WorldParams params;
    params.base_classes = 8;
    params.novel_classes = 4;
    params.seed = 74;
    params.oracle_length = cfg.context_length;
    synth::PlantedWorld world = synth::gen_world(params, enc);
    auto records = synth::gen_dataset(world, 12, 150, {0.5, 0.6, 0.7, 0.8, 0.9, 1.0});

    std::vector<harness::AblationRow> rows =
        harness::run_ablation(records, world.tokens, cfg, {4, 5, 7, 8});

    std::set<std::string> cells;
    for (const auto& row : rows) cells.insert(row.cell);
    std::vector<std::string> expected = {
        "table4.neg_fraction=0.1", "table4.neg_fraction=0.3", "table4.neg_fraction=0.5",
        "table4.neg_fraction=1",   "table5.data=gt",          "table5.data=gt+fg",
        "table5.data=gt+bg",       "table5.data=gt+fg+bg",    "table7.context_length=4",
        "table7.context_length=8", "table7.context_length=16", "table8.position=front",
        "table8.position=middle",  "table8.position=end"};
    bool matrix_ok = rows.size() == expected.size();
    for (const std::string& cell : expected) matrix_ok = matrix_ok && cells.count(cell) == 1;

    // the position ablation is non-degenerate: pairwise different embeddings
    prompt::PromptContext probe = prompt::init_context(cfg.context_length, cfg.word_dim,
                                                       cfg.init_std, 75);
    bool distinct_ok = true;
    for (int id : world.tokens.all_ids()) {
        std::vector<std::vector<double>> outs;
        for (prompt::TokenPosition pos : {prompt::TokenPosition::front,
                                          prompt::TokenPosition::middle,
                                          prompt::TokenPosition::end}) {
            Matrix seq = prompt::assemble(probe, world.tokens.token(id), pos);
            outs.push_back(enc.encode(seq));
        }
        for (std::size_t i = 0; i < outs.size(); ++i)
            for (std::size_t j = i + 1; j < outs.size(); ++j) {
                double d = 0.0;
                for (std::size_t e = 0; e < outs[i].size(); ++e)
                    d += (outs[i][e] - outs[j][e]) * (outs[i][e] - outs[j][e]);
                distinct_ok = distinct_ok && std::sqrt(d) > 1e-8;
            }
    }

    report(7, "ablation machinery", matrix_ok && distinct_ok,
           std::string("matrix ") + (matrix_ok ? "complete" : "incomplete") + " (" +
               std::to_string(rows.size()) + " cells), positions " +
               (distinct_ok ? "distinct" : "degenerate"));
}

// ---------------------------------------------------------------- criterion 8
void criterion_score_fusion() {
    ScoreVector p{{0.5, 0.25, 0.125, 0.125}};
    ScoreVector fused = harness::fuse_scores(p, p);
    bool idempotent = fused.p == p.p;

    bool geo_ok = std::fabs(std::sqrt(0.9 * 0.4) - 0.6) <= 1e-12;

    SeededRng rng(88);
    bool normalized_ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(7), b(7);
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < 7; ++i) {
            a[i] = 0.01 + rng.uniform();
            b[i] = 0.01 + rng.uniform();
            sa += a[i];
            sb += b[i];
        }
        for (std::size_t i = 0; i < 7; ++i) { a[i] /= sa; b[i] /= sb; }
        ScoreVector f = harness::fuse_scores(ScoreVector{a}, ScoreVector{b});
        double sum = 0.0;
        for (double v : f.p) {
            normalized_ok = normalized_ok && v > 0.0 && v < 1.0;
            sum += v;
        }
        normalized_ok = normalized_ok && std::fabs(sum - 1.0) <= 1e-12;
    }

    report(8, "score fusion", idempotent && geo_ok && normalized_ok,
           std::string("fuse(p,p)=p ") + (idempotent ? "bitwise" : "off") + ", sqrt(0.36)=0.6 " +
               (geo_ok ? "ok" : "off") + ", normalization " + (normalized_ok ? "ok" : "broken"));
}

} // namespace

int main() {
    criterion_gradcheck();
    criterion_probability_contract();
    criterion_soft_bg_minimizer();
    criterion_partition_oracle();
    criterion_determinism();
    criterion_synthetic_end_to_end();
    criterion_ablation_machinery();
    criterion_score_fusion();

    if (g_failures == 0) {
        std::printf("acceptance: all 8 criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", g_failures);
    return 1;
}
