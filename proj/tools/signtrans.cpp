// Command-line front end for the experiment pipeline. Every subcommand reads
// the same JSON experiment config (or the --toy preset); individual flags
// override individual config fields.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "signtrans/pipeline.hpp"

namespace {

using signtrans::ExperimentConfig;
using signtrans::ValidationError;

struct CommonArgs {
    std::string config_path;
    bool toy = false;
    std::string task;
    std::string output_dir;
    std::string fusion;
    double fusion_scale = 0;
    uint64_t seed = 0;
    size_t batch_size = 0;
    int max_epochs = 0;
    long long max_steps = 0;
    double learning_rate = 0;
    int patience = 0;
    int beam_size = 0;
    double alpha = 0;
    double max_len_factor = 0;
    bool t2g2h_on = false;
    bool t2g2h_off = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    auto* config = cmd->add_option("--config", a.config_path, "experiment config (JSON)");
    auto* toy = cmd->add_flag("--toy", a.toy, "built-in synthetic corpus and preset");
    config->excludes(toy);
    cmd->add_option("--output-dir", a.output_dir, "artifact directory");
    cmd->add_option("--task", a.task, "t2g or t2h");
    cmd->add_option("--fusion", a.fusion, "none, add or con");
    cmd->add_option("--fusion-scale", a.fusion_scale, "sentence embedding weight S");
    cmd->add_option("--seed", a.seed, "experiment seed");
    cmd->add_option("--batch-size", a.batch_size);
    cmd->add_option("--max-epochs", a.max_epochs);
    cmd->add_option("--max-steps", a.max_steps, "0 = no step cap");
    cmd->add_option("--learning-rate", a.learning_rate);
    cmd->add_option("--patience", a.patience, "early-stopping patience in epochs");
    cmd->add_option("--beam-size", a.beam_size);
    cmd->add_option("--alpha", a.alpha, "length-normalization exponent");
    cmd->add_option("--max-len-factor", a.max_len_factor, "decode length cap / source length");
    cmd->add_flag("--t2g2h", a.t2g2h_on, "score glosses through the sign dictionary");
    cmd->add_flag("--no-t2g2h", a.t2g2h_off, "score glosses directly");
}

ExperimentConfig resolve(const CLI::App* cmd, const CommonArgs& a) {
    ExperimentConfig cfg;
    if (a.toy) {
        std::string work = cmd->count("--output-dir") ? a.output_dir : "signtrans-toy";
        cfg = signtrans::toy_experiment(work);
    } else if (!a.config_path.empty()) {
        cfg = ExperimentConfig::load(a.config_path);
    } else {
        throw ValidationError("provide --config <file> or --toy");
    }
    if (cmd->count("--output-dir")) cfg.output_dir = a.output_dir;
    if (cmd->count("--task")) cfg.task = a.task;
    if (cmd->count("--fusion")) cfg.fusion = a.fusion;
    if (cmd->count("--fusion-scale")) cfg.fusion_scale = a.fusion_scale;
    if (cmd->count("--seed")) cfg.seed = a.seed;
    if (cmd->count("--batch-size")) cfg.batch_size = a.batch_size;
    if (cmd->count("--max-epochs")) cfg.max_epochs = a.max_epochs;
    if (cmd->count("--max-steps")) cfg.max_steps = a.max_steps;
    if (cmd->count("--learning-rate")) cfg.learning_rate = a.learning_rate;
    if (cmd->count("--patience")) cfg.patience = a.patience;
    if (cmd->count("--beam-size")) cfg.beam_size = a.beam_size;
    if (cmd->count("--alpha")) cfg.alpha = a.alpha;
    if (cmd->count("--max-len-factor")) cfg.max_len_factor = a.max_len_factor;
    if (a.t2g2h_on) cfg.t2g2h = true;
    if (a.t2g2h_off) cfg.t2g2h = false;
    return cfg;
}

std::string split_path(const ExperimentConfig& cfg, const std::string& split) {
    if (split == "train") return cfg.train_path;
    if (split == "dev") return cfg.dev_path;
    if (split == "test") return cfg.test_path;
    throw ValidationError("unknown split: '" + split + "' (expected train|dev|test)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neural text-to-sign-language translation"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* tok = app.add_subcommand("tokenizer-train", "fit source and target tokenizers");
    add_common(tok, common);
    tok->callback([&] { cmd_tokenizer_train(resolve(tok, common), std::cout); });

    auto* pre = app.add_subcommand("preprocess", "tokenize splits and build vocabularies");
    add_common(pre, common);
    pre->callback([&] { cmd_preprocess(resolve(pre, common), std::cout); });

    auto* trn = app.add_subcommand("train", "train the translation model");
    add_common(trn, common);
    trn->callback([&] { cmd_train(resolve(trn, common), std::cout); });

    auto* tra = app.add_subcommand("translate", "decode a corpus split with the trained model");
    add_common(tra, common);
    std::string tra_split = "test", tra_checkpoint, tra_input, tra_output;
    tra->add_option("--split", tra_split, "corpus split to translate (default test)");
    tra->add_option("--checkpoint", tra_checkpoint, "default <output_dir>/checkpoint.best.bin");
    tra->add_option("--input", tra_input, "corpus file (overrides --split)");
    tra->add_option("--output", tra_output, "default <output_dir>/hyp.<split>.txt");
    tra->callback([&] {
        ExperimentConfig cfg = resolve(tra, common);
        std::string input = tra_input.empty() ? split_path(cfg, tra_split) : tra_input;
        if (input.empty()) throw ValidationError("no corpus file configured for --split " + tra_split);
        std::string output =
            tra_output.empty() ? cfg.output_dir + "/hyp." + tra_split + ".txt" : tra_output;
        std::string ckpt =
            tra_checkpoint.empty() ? signtrans::checkpoint_best_path(cfg) : tra_checkpoint;
        cmd_translate(cfg, ckpt, input, output, std::cout);
    });

    auto* eva = app.add_subcommand("evaluate", "score hypotheses against a reference split");
    add_common(eva, common);
    std::string eva_split = "test", eva_hyp, eva_ref, eva_report;
    eva->add_option("--split", eva_split, "corpus split to score against (default test)");
    eva->add_option("--hyp", eva_hyp, "default <output_dir>/hyp.<split>.txt");
    eva->add_option("--ref", eva_ref, "reference corpus file (overrides --split)");
    eva->add_option("--report", eva_report, "default <output_dir>/report.<split>.json");
    eva->callback([&] {
        ExperimentConfig cfg = resolve(eva, common);
        std::string ref = eva_ref.empty() ? split_path(cfg, eva_split) : eva_ref;
        if (ref.empty()) throw ValidationError("no corpus file configured for --split " + eva_split);
        std::string hyp = eva_hyp.empty() ? cfg.output_dir + "/hyp." + eva_split + ".txt" : eva_hyp;
        std::string report =
            eva_report.empty() ? cfg.output_dir + "/report." + eva_split + ".json" : eva_report;
        cmd_evaluate(cfg, hyp, ref, report, eva_split, std::cout);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
