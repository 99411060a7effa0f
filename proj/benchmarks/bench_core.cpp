#include <benchmark/benchmark.h>

#include "detpro/encoder.hpp"
#include "detpro/geometry.hpp"
#include "detpro/losses.hpp"
#include "detpro/prompt.hpp"
#include "detpro/rng.hpp"
#include "detpro/trainer.hpp"

using namespace detpro;

static void EncoderEncode(benchmark::State& state) {
    std::size_t word_dim = static_cast<std::size_t>(state.range(0));
    encoder::FrozenTextEncoder enc(1, word_dim, word_dim, 16);
    prompt::PromptContext ctx = prompt::init_context(8, word_dim, 0.02, 2);
    SeededRng rng(3);
    std::vector<double> token(word_dim);
    for (double& v : token) v = rng.normal();
    Matrix seq = prompt::assemble(ctx, token, prompt::TokenPosition::end);
    for (auto _ : state) {
        std::vector<double> out = enc.encode(seq);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(EncoderEncode)->Arg(32)->Arg(64)->Arg(128);

static void GradStep(benchmark::State& state) {
    std::size_t classes = static_cast<std::size_t>(state.range(0));
    trainer::TrainConfig cfg;
    cfg.word_dim = 32;
    cfg.embed_dim = 32;
    cfg.temperature = 0.01;
    encoder::FrozenTextEncoder enc(1, cfg.word_dim, cfg.embed_dim, cfg.max_len);
    SeededRng rng(5);
    prompt::ClassTokenTable table(cfg.word_dim);
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> tok(cfg.word_dim);
        for (double& v : tok) v = rng.normal();
        table.add(static_cast<int>(c), geometry::ClassSplit::base, tok);
    }
    trainer::ModelState model;
    model.context = prompt::init_context(cfg.context_length, cfg.word_dim, 0.02, 7);
    std::vector<trainer::TrainItem> items;
    for (int i = 0; i < 64; ++i) {
        trainer::TrainItem it;
        it.id = std::to_string(i);
        if (i % 2 == 0) it.label = static_cast<int>(rng.uniform_int(classes));
        it.embedding.resize(cfg.embed_dim);
        for (double& v : it.embedding) v = rng.normal();
        items.push_back(std::move(it));
    }
    std::vector<const trainer::TrainItem*> batch;
    for (const auto& it : items) batch.push_back(&it);
    for (auto _ : state) {
        trainer::GradResult g = trainer::grad(model, batch, enc, table, cfg);
        benchmark::DoNotOptimize(g.loss);
    }
}
BENCHMARK(GradStep)->Arg(8)->Arg(20);

static void PartitionScene(benchmark::State& state) {
    std::size_t n = static_cast<std::size_t>(state.range(0));
    SeededRng rng(11);
    std::vector<geometry::ProposalRecord> gts, proposals;
    for (std::size_t i = 0; i < 8; ++i) {
        geometry::ProposalRecord gt;
        gt.id = "gt" + std::to_string(i);
        gt.image_id = "img" + std::to_string(i % 4);
        double x = 100.0 * rng.uniform(), y = 100.0 * rng.uniform();
        gt.box = {x, y, x + 20, y + 20};
        gt.kind = geometry::RecordKind::ground_truth;
        gt.label = static_cast<int>(i);
        gts.push_back(std::move(gt));
    }
    for (std::size_t i = 0; i < n; ++i) {
        geometry::ProposalRecord p;
        p.id = "p" + std::to_string(i);
        p.image_id = "img" + std::to_string(i % 4);
        double x = 100.0 * rng.uniform(), y = 100.0 * rng.uniform();
        p.box = {x, y, x + 15 + 10 * rng.uniform(), y + 15 + 10 * rng.uniform()};
        proposals.push_back(std::move(p));
    }
    for (auto _ : state) {
        geometry::ProposalPartition part = geometry::partition(proposals, gts, 0.5);
        benchmark::DoNotOptimize(part.positives.size());
    }
}
BENCHMARK(PartitionScene)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
