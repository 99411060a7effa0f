// detpro: prompt-context learning for open-vocabulary region classification.
//
// Subcommands: synth (seeded benchmark generation), train (per-band prompt
// learning + ensembling), eval (proposal classification report), gradcheck
// (finite-difference verification), export (class embeddings), ablate
// (configuration sweeps).

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detpro/checkpoint.hpp"
#include "detpro/config.hpp"
#include "detpro/encoder.hpp"
#include "detpro/errors.hpp"
#include "detpro/harness.hpp"
#include "detpro/proposal_io.hpp"
#include "detpro/prompt.hpp"
#include "detpro/sha256.hpp"
#include "detpro/synthdata.hpp"
#include "detpro/trainer.hpp"

namespace {

using namespace detpro;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key=value config file");
    cmd->add_option("--set", opts.overrides, "config override key=value (repeatable)");
}

trainer::TrainConfig resolve_config(const CommonOpts& opts) {
    trainer::TrainConfig cfg;
    if (!opts.config_path.empty()) cfg = trainer::load_config_file(opts.config_path);
    for (const std::string& kv : opts.overrides) trainer::apply_override(cfg, kv);
    cfg.validate();
    return cfg;
}

encoder::FrozenTextEncoder make_encoder(const trainer::TrainConfig& cfg) {
    return encoder::FrozenTextEncoder(cfg.seed_encoder, cfg.word_dim, cfg.embed_dim, cfg.max_len);
}

std::vector<double> parse_levels(const std::string& csv) {
    std::vector<double> levels;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            levels.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw config_error("bad IoU level '" + item + "'");
        }
    }
    if (levels.empty()) throw config_error("no IoU levels given");
    return levels;
}

void emit(const std::string& metric, const std::string& split, const std::string& value) {
    std::cout << metric << '\t' << split << '\t' << value << '\n';
}

int cmd_synth(const CommonOpts& common, const synth::WorldParams& params_in,
              std::size_t pos_per_class, std::size_t negatives, const std::string& levels_csv,
              const std::string& out_dir) {
    trainer::TrainConfig cfg = resolve_config(common);
    encoder::FrozenTextEncoder enc = make_encoder(cfg);

    synth::WorldParams params = params_in;
    params.oracle_length = cfg.context_length;
    params.token_position = cfg.token_position;
    synth::PlantedWorld world = synth::gen_world(params, enc);
    std::vector<geometry::ProposalRecord> dataset =
        synth::gen_dataset(world, pos_per_class, negatives, parse_levels(levels_csv));

    std::filesystem::create_directories(out_dir);
    std::string proposals_path = out_dir + "/proposals.jsonl";
    std::string tokens_path = out_dir + "/token_table.txt";
    geometry::write_proposals_file(proposals_path, dataset);
    prompt::write_token_table(tokens_path, world.tokens);

    emit("records", "all", std::to_string(dataset.size()));
    emit("classes", "base", std::to_string(params.base_classes));
    emit("classes", "novel", std::to_string(params.novel_classes));
    emit("proposals_file", "all", proposals_path);
    emit("token_table_file", "all", tokens_path);
    return 0;
}

geometry::ProposalPartition load_and_partition(const std::string& data_path,
                                               const trainer::TrainConfig& cfg) {
    std::vector<geometry::ProposalRecord> records = geometry::read_proposals_file(data_path);
    std::vector<geometry::ProposalRecord> gts, proposals;
    for (geometry::ProposalRecord& r : records) {
        if (r.kind == geometry::RecordKind::ground_truth) gts.push_back(std::move(r));
        else proposals.push_back(std::move(r));
    }
    return geometry::partition(proposals, gts, cfg.iou_threshold);
}

int cmd_train(const CommonOpts& common, const std::string& data_path,
              const std::string& tokens_path, const std::string& out_path) {
    trainer::TrainConfig cfg = resolve_config(common);
    encoder::FrozenTextEncoder enc = make_encoder(cfg);
    prompt::ClassTokenTable table = prompt::read_token_table(tokens_path);
    geometry::ProposalPartition part = load_and_partition(data_path, cfg);

    trainer::TrainRun run = trainer::train_all(part, cfg, enc, table);
    prompt::save_checkpoint_file(out_path, run.checkpoint);

    for (std::size_t k = 0; k < run.groups.size(); ++k) {
        emit("group" + std::to_string(k) + "_initial_loss", "all",
             trainer::format_double(run.groups[k].initial_loss));
        emit("group" + std::to_string(k) + "_final_loss", "all",
             trainer::format_double(run.groups[k].final_loss));
        emit("group" + std::to_string(k) + "_steps", "all",
             std::to_string(run.groups[k].steps));
    }
    emit("config_hash", "all", to_hex(trainer::config_hash(cfg)));
    emit("checkpoint", "all", out_path);
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& data_path,
             const std::string& tokens_path, const std::string& ckpt_path,
             const std::string& embeddings_path) {
    prompt::ClassTokenTable table = prompt::read_token_table(tokens_path);
    std::vector<geometry::ProposalRecord> records = geometry::read_proposals_file(data_path);

    trainer::TrainConfig cfg;
    std::vector<encoder::ClassEmbedding> embeddings;
    if (!ckpt_path.empty()) {
        prompt::Checkpoint ckpt = prompt::load_checkpoint_file(ckpt_path);
        cfg = ckpt.config;
        for (const std::string& kv : common.overrides) trainer::apply_override(cfg, kv);
        cfg.validate();
        encoder::FrozenTextEncoder enc = make_encoder(cfg);
        if (!embeddings_path.empty()) {
            embeddings = encoder::read_class_embeddings(embeddings_path);
        } else {
            prompt::Checkpoint eval_ckpt = ckpt;
            eval_ckpt.config = cfg;
            embeddings = harness::build_class_embeddings(eval_ckpt, enc, table, table.all_ids());
        }
    } else {
        cfg = resolve_config(common);
        if (embeddings_path.empty())
            throw config_error("eval: need --checkpoint or --embeddings");
        embeddings = encoder::read_class_embeddings(embeddings_path);
    }

    harness::EvalReport report = harness::evaluate(records, embeddings, table, cfg);
    std::cout << harness::format_report(report);
    return 0;
}

int cmd_gradcheck(const CommonOpts& common, std::uint64_t seed, std::size_t instances) {
    trainer::TrainConfig cfg = resolve_config(common);
    trainer::GradientReport report = trainer::gradcheck(cfg, seed, instances);
    for (const auto& mode : report.modes)
        emit("gradcheck_max_rel_err", losses::to_string(mode.mode),
             trainer::format_double(mode.max_rel_err));
    emit("gradcheck_max_rel_err", "all", trainer::format_double(report.max_rel_err));
    return 0;
}

int cmd_export(const CommonOpts& common, const std::string& ckpt_path,
               const std::string& tokens_path, const std::string& subset,
               const std::string& out_path) {
    prompt::Checkpoint ckpt = prompt::load_checkpoint_file(ckpt_path);
    trainer::TrainConfig cfg = ckpt.config;
    for (const std::string& kv : common.overrides) trainer::apply_override(cfg, kv);
    cfg.validate();
    prompt::ClassTokenTable table = prompt::read_token_table(tokens_path);
    encoder::FrozenTextEncoder enc = make_encoder(cfg);

    std::vector<int> ids;
    if (subset == "base") ids = table.base_ids();
    else if (subset == "novel") ids = table.novel_ids();
    else if (subset == "all") ids = table.all_ids();
    else throw config_error("export: subset must be base, novel or all");

    prompt::Checkpoint eval_ckpt = ckpt;
    eval_ckpt.config = cfg;
    std::vector<encoder::ClassEmbedding> embeddings =
        harness::build_class_embeddings(eval_ckpt, enc, table, ids);
    encoder::write_class_embeddings(out_path, embeddings, table);
    emit("exported", "all", std::to_string(embeddings.size()));
    return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& data_path,
               const std::string& tokens_path, const std::string& tables_csv) {
    trainer::TrainConfig base_cfg = resolve_config(common);
    prompt::ClassTokenTable table = prompt::read_token_table(tokens_path);
    std::vector<geometry::ProposalRecord> records = geometry::read_proposals_file(data_path);

    std::vector<int> tables;
    if (tables_csv == "all") {
        tables = {3, 4, 5, 6, 7, 8};
    } else {
        std::stringstream ss(tables_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                tables.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw config_error("ablate: bad table id '" + item + "'");
            }
        }
    }

    std::vector<harness::AblationRow> rows =
        harness::run_ablation(records, table, base_cfg, tables);
    for (const harness::AblationRow& row : rows) {
        emit(row.cell, "base", trainer::format_double(row.top1_base));
        emit(row.cell, "novel", trainer::format_double(row.top1_novel));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-context learning for open-vocabulary region classification"};
    app.require_subcommand(1);

    CommonOpts synth_common, train_common, eval_common, grad_common, export_common,
        ablate_common;

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a seeded benchmark dataset");
    add_common(synth_cmd, synth_common);
    synth::WorldParams world_params;
    std::size_t pos_per_class = 50, n_negatives = 1000;
    std::string levels_csv = "0.5,0.6,0.7,0.8,0.9,1.0";
    std::string synth_out = "data";
    synth_cmd->add_option("--classes-base", world_params.base_classes, "base class count");
    synth_cmd->add_option("--classes-novel", world_params.novel_classes, "novel class count");
    synth_cmd->add_option("--pos-per-class", pos_per_class, "positives per class");
    synth_cmd->add_option("--negatives", n_negatives, "background proposal count");
    synth_cmd->add_option("--sigma0", world_params.sigma0, "embedding noise at IoU 1");
    synth_cmd->add_option("--lambda", world_params.lambda, "noise slope in (1 - IoU)");
    synth_cmd->add_option("--rho", world_params.rho, "negative rejection ceiling");
    synth_cmd->add_option("--seed-world", world_params.seed, "world seed");
    synth_cmd->add_option("--iou-levels", levels_csv, "comma-separated positive IoU levels");
    synth_cmd->add_option("--out", synth_out, "output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "learn prompt contexts per IoU band");
    add_common(train_cmd, train_common);
    std::string train_data, train_tokens, train_out = "checkpoint.dpro";
    train_cmd->add_option("--data", train_data, "proposal dataset (jsonl)")->required();
    train_cmd->add_option("--tokens", train_tokens, "class token table")->required();
    train_cmd->add_option("--out", train_out, "checkpoint output path");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "proposal classification report");
    add_common(eval_cmd, eval_common);
    std::string eval_data, eval_tokens, eval_ckpt, eval_embeddings;
    eval_cmd->add_option("--data", eval_data, "proposal dataset (jsonl)")->required();
    eval_cmd->add_option("--tokens", eval_tokens, "class token table")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint");
    eval_cmd->add_option("--embeddings", eval_embeddings,
                         "external class embeddings (bypasses the encoder)");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    add_common(grad_cmd, grad_common);
    std::uint64_t grad_seed = 7;
    std::size_t grad_instances = 20;
    grad_cmd->add_option("--seed", grad_seed, "instance seed");
    grad_cmd->add_option("--instances", grad_instances, "instances per bg mode");

    // export
    auto* export_cmd = app.add_subcommand("export", "write class embeddings to a file");
    add_common(export_cmd, export_common);
    std::string export_ckpt, export_tokens, export_subset = "all", export_out = "embeddings.txt";
    export_cmd->add_option("--checkpoint", export_ckpt, "trained checkpoint")->required();
    export_cmd->add_option("--tokens", export_tokens, "class token table")->required();
    export_cmd->add_option("--subset", export_subset, "base | novel | all");
    export_cmd->add_option("--out", export_out, "output path");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "configuration sweeps with one row per cell");
    add_common(ablate_cmd, ablate_common);
    std::string ablate_data, ablate_tokens, ablate_tables = "all";
    ablate_cmd->add_option("--data", ablate_data, "proposal dataset (jsonl)")->required();
    ablate_cmd->add_option("--tokens", ablate_tokens, "class token table")->required();
    ablate_cmd->add_option("--tables", ablate_tables,
                           "comma-separated table ids (3,4,5,6,7,8) or 'all'");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (synth_cmd->parsed())
            return cmd_synth(synth_common, world_params, pos_per_class, n_negatives, levels_csv,
                             synth_out);
        if (train_cmd->parsed()) return cmd_train(train_common, train_data, train_tokens, train_out);
        if (eval_cmd->parsed())
            return cmd_eval(eval_common, eval_data, eval_tokens, eval_ckpt, eval_embeddings);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_common, grad_seed, grad_instances);
        if (export_cmd->parsed())
            return cmd_export(export_common, export_ckpt, export_tokens, export_subset, export_out);
        if (ablate_cmd->parsed())
            return cmd_ablate(ablate_common, ablate_data, ablate_tokens, ablate_tables);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
