// Experiment pipeline: a single JSON config drives five commands
// (tokenizer-train, preprocess, train, translate, evaluate) that exchange
// artifacts through the configured output directory. Every artifact embeds
// the resolved config and the tokenizer hashes it was produced with, and
// downstream commands refuse stale combinations.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "signtrans/checkpoint.hpp"
#include "signtrans/corpus.hpp"
#include "signtrans/decode.hpp"
#include "signtrans/metrics.hpp"
#include "signtrans/model.hpp"
#include "signtrans/tokenizer.hpp"
#include "signtrans/toy.hpp"
#include "signtrans/train.hpp"

namespace signtrans {

enum class Task { t2g, t2h };

inline Task task_from_string(const std::string& s) {
    if (s == "t2g") return Task::t2g;
    if (s == "t2h") return Task::t2h;
    throw ValidationError("unknown task: '" + s + "' (expected t2g|t2h)");
}

struct TokenizerSpec {
    std::string kind = "bpe";
    size_t vocab_size = 0;
};

struct ExperimentConfig {
    std::string task = "t2g";
    std::string train_path;
    std::string dev_path;
    std::string test_path;
    std::string dictionary_path;
    std::string embedding_path;   // static word vectors
    std::string contextual_path;  // contextual embedding records
    std::string output_dir = "signtrans-out";
    std::string columns = "text,gloss,hamnosys,handshape";
    TokenizerSpec source_tokenizer{"bpe", 2250};
    TokenizerSpec target_tokenizer{"bpe", 7000};

    int embed_width = 64;
    int num_layers = 2;
    int num_heads = 2;
    int ff_width = 128;
    double dropout = 0.2;
    std::string fusion = "none";
    double fusion_scale = 1.0;
    bool aux_head = false;
    double aux_loss_scale = 1.0;
    std::string embedding_mode = "learned";

    size_t batch_size = 32;
    int max_epochs = 100;
    int64_t max_steps = 0;  // 0 = no cap
    double learning_rate = 1e-4;
    int patience = 5;
    uint64_t seed = 1;

    int beam_size = 5;
    double alpha = 0.0;
    double max_len_factor = 1.5;

    bool t2g2h = false;

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"task", task},
            {"paths",
             {{"train", train_path},
              {"dev", dev_path},
              {"test", test_path},
              {"dictionary", dictionary_path},
              {"embeddings", embedding_path},
              {"contextual", contextual_path},
              {"output_dir", output_dir}}},
            {"columns", columns},
            {"tokenizer",
             {{"source", {{"kind", source_tokenizer.kind}, {"vocab_size", source_tokenizer.vocab_size}}},
              {"target", {{"kind", target_tokenizer.kind}, {"vocab_size", target_tokenizer.vocab_size}}}}},
            {"model",
             {{"embed_width", embed_width},
              {"num_layers", num_layers},
              {"num_heads", num_heads},
              {"ff_width", ff_width},
              {"dropout", dropout},
              {"fusion", fusion},
              {"fusion_scale", fusion_scale},
              {"aux_head", aux_head},
              {"aux_loss_scale", aux_loss_scale},
              {"embedding_mode", embedding_mode}}},
            {"training",
             {{"batch_size", batch_size},
              {"max_epochs", max_epochs},
              {"max_steps", max_steps},
              {"learning_rate", learning_rate},
              {"patience", patience},
              {"seed", seed}}},
            {"decode",
             {{"beam_size", beam_size}, {"alpha", alpha}, {"max_len_factor", max_len_factor}}},
            {"evaluation", {{"t2g2h", t2g2h}}}};
    }

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void validate() const;
};

namespace detail {

// Reads j[key] into target when present; records type mismatches instead of
// throwing so every config problem is reported in one pass.
template <class T>
void read_field(const nlohmann::json& j, const std::string& where, const char* key, T& target,
                std::vector<std::string>& problems) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(target);
    } catch (const nlohmann::json::exception&) {
        problems.push_back(where + "." + key + ": wrong type");
    }
}

inline void check_known(const nlohmann::json& j, const std::string& where,
                        const std::set<std::string>& known,
                        std::vector<std::string>& problems) {
    if (!j.is_object()) {
        problems.push_back(where + ": expected an object");
        return;
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) problems.push_back(where + "." + key + ": unknown key");
    }
}

[[noreturn]] inline void config_error(const std::vector<std::string>& problems) {
    std::string msg = "invalid experiment config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    using detail::check_known;
    using detail::read_field;
    std::vector<std::string> problems;
    ExperimentConfig c;

    check_known(j, "config",
                {"task", "paths", "columns", "tokenizer", "model", "training", "decode",
                 "evaluation"},
                problems);
    if (!j.is_object()) detail::config_error(problems);

    read_field(j, "config", "task", c.task, problems);
    read_field(j, "config", "columns", c.columns, problems);

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        check_known(p, "paths",
                    {"train", "dev", "test", "dictionary", "embeddings", "contextual",
                     "output_dir"},
                    problems);
        read_field(p, "paths", "train", c.train_path, problems);
        read_field(p, "paths", "dev", c.dev_path, problems);
        read_field(p, "paths", "test", c.test_path, problems);
        read_field(p, "paths", "dictionary", c.dictionary_path, problems);
        read_field(p, "paths", "embeddings", c.embedding_path, problems);
        read_field(p, "paths", "contextual", c.contextual_path, problems);
        read_field(p, "paths", "output_dir", c.output_dir, problems);
    }
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        check_known(t, "tokenizer", {"source", "target"}, problems);
        for (const char* side : {"source", "target"}) {
            if (!t.contains(side)) continue;
            TokenizerSpec& spec =
                std::string(side) == "source" ? c.source_tokenizer : c.target_tokenizer;
            const auto& s = t.at(side);
            check_known(s, std::string("tokenizer.") + side, {"kind", "vocab_size"}, problems);
            read_field(s, std::string("tokenizer.") + side, "kind", spec.kind, problems);
            read_field(s, std::string("tokenizer.") + side, "vocab_size", spec.vocab_size,
                       problems);
        }
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_known(m, "model",
                    {"embed_width", "num_layers", "num_heads", "ff_width", "dropout", "fusion",
                     "fusion_scale", "aux_head", "aux_loss_scale", "embedding_mode"},
                    problems);
        read_field(m, "model", "embed_width", c.embed_width, problems);
        read_field(m, "model", "num_layers", c.num_layers, problems);
        read_field(m, "model", "num_heads", c.num_heads, problems);
        read_field(m, "model", "ff_width", c.ff_width, problems);
        read_field(m, "model", "dropout", c.dropout, problems);
        read_field(m, "model", "fusion", c.fusion, problems);
        read_field(m, "model", "fusion_scale", c.fusion_scale, problems);
        read_field(m, "model", "aux_head", c.aux_head, problems);
        read_field(m, "model", "aux_loss_scale", c.aux_loss_scale, problems);
        read_field(m, "model", "embedding_mode", c.embedding_mode, problems);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        check_known(t, "training",
                    {"batch_size", "max_epochs", "max_steps", "learning_rate", "patience",
                     "seed"},
                    problems);
        read_field(t, "training", "batch_size", c.batch_size, problems);
        read_field(t, "training", "max_epochs", c.max_epochs, problems);
        read_field(t, "training", "max_steps", c.max_steps, problems);
        read_field(t, "training", "learning_rate", c.learning_rate, problems);
        read_field(t, "training", "patience", c.patience, problems);
        read_field(t, "training", "seed", c.seed, problems);
    }
    if (j.contains("decode")) {
        const auto& d = j.at("decode");
        check_known(d, "decode", {"beam_size", "alpha", "max_len_factor"}, problems);
        read_field(d, "decode", "beam_size", c.beam_size, problems);
        read_field(d, "decode", "alpha", c.alpha, problems);
        read_field(d, "decode", "max_len_factor", c.max_len_factor, problems);
    }
    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        check_known(e, "evaluation", {"t2g2h"}, problems);
        read_field(e, "evaluation", "t2g2h", c.t2g2h, problems);
    }
    if (!problems.empty()) detail::config_error(problems);
    return c;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return from_json(j);
}

inline void ExperimentConfig::validate() const {
    std::vector<std::string> problems;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) problems.push_back(msg);
    };

    bool task_ok = task == "t2g" || task == "t2h";
    check(task_ok, "task: expected t2g|t2h, got '" + task + "'");

    std::vector<Column> cols;
    try {
        cols = parse_columns(columns);
        auto has = [&](Column c) {
            return std::find(cols.begin(), cols.end(), c) != cols.end();
        };
        check(has(Column::text), "columns: must include text");
        if (task == "t2g") check(has(Column::gloss), "columns: task t2g needs a gloss column");
        if (task == "t2h") {
            check(has(Column::hamnosys), "columns: task t2h needs a hamnosys column");
        }
        if (aux_head) {
            check(has(Column::handshape), "columns: aux_head needs a handshape column");
            if (task == "t2h") check(has(Column::gloss), "columns: aux_head on t2h needs gloss");
        }
    } catch (const ValidationError& e) {
        problems.push_back(std::string("columns: ") + e.what());
    }

    for (const std::string& kind : {source_tokenizer.kind, target_tokenizer.kind}) {
        try {
            tokenizer_kind_from_string(kind);
        } catch (const std::exception&) {
            problems.push_back("tokenizer: unknown kind '" + kind + "'");
        }
    }
    auto needs_budget = [](const std::string& kind) { return kind == "bpe"; };
    check(!needs_budget(source_tokenizer.kind) || source_tokenizer.vocab_size > 0,
          "tokenizer.source: bpe needs vocab_size > 0");
    check(!needs_budget(target_tokenizer.kind) || target_tokenizer.vocab_size > 0,
          "tokenizer.target: bpe needs vocab_size > 0");

    check(embed_width >= 1, "model.embed_width: must be >= 1");
    check(num_layers >= 1, "model.num_layers: must be >= 1");
    check(num_heads >= 1, "model.num_heads: must be >= 1");
    check(num_heads < 1 || embed_width < 1 || embed_width % num_heads == 0,
          "model.embed_width: must be divisible by num_heads");
    check(ff_width >= 1, "model.ff_width: must be >= 1");
    check(dropout >= 0 && dropout < 1, "model.dropout: must be in [0,1)");
    check(fusion_scale >= 0, "model.fusion_scale: must be >= 0");
    check(aux_loss_scale >= 0, "model.aux_loss_scale: must be >= 0");
    try {
        fusion_from_string(fusion);
    } catch (const ValidationError& e) {
        problems.push_back(std::string("model.fusion: ") + e.what());
    }
    try {
        EmbeddingMode mode = embedding_mode_from_string(embedding_mode);
        if (mode == EmbeddingMode::external_static) {
            check(!embedding_path.empty(),
                  "paths.embeddings: required for embedding_mode external_static");
        }
        if (mode == EmbeddingMode::external_contextual) {
            check(!contextual_path.empty(),
                  "paths.contextual: required for embedding_mode external_contextual");
        }
    } catch (const ValidationError& e) {
        problems.push_back(std::string("model.embedding_mode: ") + e.what());
    }

    check(batch_size >= 1, "training.batch_size: must be >= 1");
    check(max_epochs >= 1, "training.max_epochs: must be >= 1");
    check(max_steps >= 0, "training.max_steps: must be >= 0");
    check(learning_rate > 0, "training.learning_rate: must be > 0");
    check(patience >= 1, "training.patience: must be >= 1");

    check(beam_size >= 1, "decode.beam_size: must be >= 1");
    check(alpha >= 0, "decode.alpha: must be >= 0");
    check(max_len_factor > 0, "decode.max_len_factor: must be > 0");

    if (t2g2h) {
        check(task == "t2g", "evaluation.t2g2h: only applies to task t2g");
        check(!dictionary_path.empty(), "paths.dictionary: required when t2g2h is set");
    }

    for (const auto& [label, path] :
         std::vector<std::pair<std::string, std::string>>{{"paths.train", train_path},
                                                          {"paths.dev", dev_path},
                                                          {"paths.test", test_path},
                                                          {"paths.dictionary", dictionary_path},
                                                          {"paths.embeddings", embedding_path},
                                                          {"paths.contextual", contextual_path}}) {
        if (!path.empty() && !std::filesystem::exists(path)) {
            problems.push_back(label + ": file not found: " + path);
        }
    }

    if (!problems.empty()) detail::config_error(problems);
}

// Artifact locations inside the output directory.
inline std::string tokenizer_src_path(const ExperimentConfig& c) {
    return c.output_dir + "/tokenizer.src.json";
}
inline std::string tokenizer_tgt_path(const ExperimentConfig& c) {
    return c.output_dir + "/tokenizer.tgt.json";
}
inline std::string vocab_src_path(const ExperimentConfig& c) {
    return c.output_dir + "/vocab.src.json";
}
inline std::string vocab_tgt_path(const ExperimentConfig& c) {
    return c.output_dir + "/vocab.tgt.json";
}
inline std::string vocab_handshape_path(const ExperimentConfig& c) {
    return c.output_dir + "/vocab.handshape.json";
}
inline std::string encoded_path(const ExperimentConfig& c, const std::string& split) {
    return c.output_dir + "/encoded." + split + ".tsv";
}
inline std::string checkpoint_best_path(const ExperimentConfig& c) {
    return c.output_dir + "/checkpoint.best.bin";
}
inline std::string checkpoint_last_path(const ExperimentConfig& c) {
    return c.output_dir + "/checkpoint.last.bin";
}
inline std::string loss_log_path(const ExperimentConfig& c) {
    return c.output_dir + "/loss_log.json";
}

// Target-side words plus one auxiliary hand-shape label per word; "" marks
// positions without a hand shape (separators).
struct TargetWords {
    std::vector<std::string> words;
    std::vector<std::string> aux;
};

inline TargetWords target_words_for(const ParallelSample& s, Task task, bool want_aux) {
    TargetWords out;
    if (task == Task::t2g) {
        out.words = s.gloss;
        if (want_aux) out.aux = s.handshapes;
    } else {
        out.words = s.hamnosys;
        if (want_aux) {
            size_t sign = 0;
            for (const auto& sym : s.hamnosys) {
                if (sym == kSignSeparator) {
                    out.aux.push_back("");
                    ++sign;
                } else {
                    out.aux.push_back(sign < s.handshapes.size() ? s.handshapes[sign] : "");
                }
            }
        }
    }
    if (want_aux && out.aux.size() != out.words.size()) {
        throw ValidationError("hand-shape labels do not align with the target words");
    }
    return out;
}

// Subword-tokenizes the target words while carrying each word's hand-shape
// label onto all of its pieces. Token stream is identical to encoding the
// joined text in one call (character tokenizers get their inter-word space
// marker back, labelled "").
struct EncodedTarget {
    std::vector<std::string> tokens;
    std::vector<std::string> aux;  // same length as tokens; "" = no label
};

inline EncodedTarget encode_target(const TokenizerModel& tok, const TargetWords& tw) {
    EncodedTarget out;
    bool labelled = !tw.aux.empty();
    for (size_t i = 0; i < tw.words.size(); ++i) {
        if (i > 0 && tok.kind == TokenizerKind::character) {
            out.tokens.push_back(tok.space_token);
            out.aux.push_back("");
        }
        for (auto& piece : encode(tok, tw.words[i])) {
            out.tokens.push_back(std::move(piece));
            out.aux.push_back(labelled ? tw.aux[i] : "");
        }
    }
    if (!labelled) out.aux.clear();
    return out;
}

// Reference tokens for scoring: glosses for T2G, raw symbols for T2H.
inline std::vector<std::string> reference_tokens(const ParallelSample& s, Task task) {
    return task == Task::t2g ? s.gloss : s.hamnosys;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

inline std::string join_ids(const std::vector<int32_t>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(ids[i]);
    }
    return out;
}

inline std::vector<int32_t> parse_ids(const std::string& field, const std::string& where) {
    std::vector<int32_t> ids;
    std::stringstream ss(field);
    std::string tok;
    while (ss >> tok) {
        try {
            ids.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ValidationError(where + ": bad token id '" + tok + "'");
        }
    }
    return ids;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    f << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline void require_artifact(const std::string& path, const std::string& producer) {
    if (!std::filesystem::exists(path)) {
        throw ValidationError("missing artifact " + path + " (run `" + producer + "` first)");
    }
}

}  // namespace detail

inline void write_encoded(const std::string& path, const std::vector<EncodedSample>& samples,
                          bool has_aux) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    for (const auto& s : samples) {
        f << s.id << '\t' << detail::join_ids(s.source) << '\t' << detail::join_ids(s.target)
          << '\t' << (has_aux ? detail::join_ids(s.aux) : std::string("-")) << '\n';
    }
}

inline std::vector<EncodedSample> read_encoded(const std::string& path) {
    std::vector<EncodedSample> samples;
    size_t lineno = 0;
    for (const auto& line : detail::read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        auto fields = detail::split_tabs(line);
        if (fields.size() != 4) {
            throw ValidationError(where + ": expected 4 tab-separated fields");
        }
        EncodedSample s;
        s.id = fields[0];
        s.source = detail::parse_ids(fields[1], where);
        s.target = detail::parse_ids(fields[2], where);
        if (fields[3] != "-") s.aux = detail::parse_ids(fields[3], where);
        if (!s.aux.empty() && s.aux.size() != s.target.size()) {
            throw ValidationError(where + ": aux ids do not align with target ids");
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace detail {

// Tokenizer training for one side. Word and character models carry no
// learned state; BPE learns merges; WordPiece builds its vocabulary from the
// full words plus all code-point fallback pieces so any in-alphabet word
// encodes without UNK.
inline TokenizerModel fit_tokenizer(const TokenizerSpec& spec,
                                    const std::vector<std::string>& texts) {
    TokenizerKind kind = tokenizer_kind_from_string(spec.kind);
    if (kind == TokenizerKind::bpe) {
        std::vector<TokenSeq> corpus;
        for (const auto& t : texts) corpus.push_back(tokenize_word(t));
        return bpe_train(corpus, spec.vocab_size);
    }
    TokenizerModel model;
    model.kind = kind;
    if (kind == TokenizerKind::wordpiece) {
        std::set<std::string> vocab;
        for (const auto& t : texts) {
            for (const auto& word : tokenize_word(t)) {
                vocab.insert(word);
                auto cps = utf8::split_codepoints(word);
                for (size_t i = 0; i < cps.size(); ++i) {
                    vocab.insert(i == 0 ? cps[i] : model.continuation + cps[i]);
                }
            }
        }
        model.vocab.assign(vocab.begin(), vocab.end());
    }
    return model;
}

inline std::string task_target_text(const ParallelSample& s, Task task) {
    const auto& words = task == Task::t2g ? s.gloss : s.hamnosys;
    std::string text;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) text += ' ';
        text += words[i];
    }
    return text;
}

struct SplitFile {
    std::string name;  // train | dev | test
    std::string path;
};

inline std::vector<SplitFile> split_files(const ExperimentConfig& cfg, bool train_only) {
    std::vector<SplitFile> out;
    out.push_back({"train", cfg.train_path});
    if (!train_only) {
        if (!cfg.dev_path.empty()) out.push_back({"dev", cfg.dev_path});
        if (!cfg.test_path.empty()) out.push_back({"test", cfg.test_path});
    }
    return out;
}

inline std::string hash_string(const TokenizerModel& model) {
    return std::to_string(tokenizer_hash(model));
}

}  // namespace detail

inline void cmd_tokenizer_train(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    if (cfg.train_path.empty()) throw ValidationError("paths.train: required for tokenizer-train");
    std::filesystem::create_directories(cfg.output_dir);

    Task task = task_from_string(cfg.task);
    auto columns = parse_columns(cfg.columns);
    CorpusWarnings warnings;
    auto samples = load_corpus(cfg.train_path, columns, &warnings);
    for (const auto& msg : warnings.messages) log << cfg.train_path << ": " << msg << '\n';
    if (samples.empty()) throw ValidationError(cfg.train_path + ": no usable samples");

    std::vector<std::string> src_texts, tgt_texts;
    for (const auto& s : samples) {
        src_texts.push_back(s.source_text);
        tgt_texts.push_back(detail::task_target_text(s, task));
    }
    TokenizerModel src_tok = detail::fit_tokenizer(cfg.source_tokenizer, src_texts);
    TokenizerModel tgt_tok = detail::fit_tokenizer(cfg.target_tokenizer, tgt_texts);
    save_tokenizer(src_tok, tokenizer_src_path(cfg));
    save_tokenizer(tgt_tok, tokenizer_tgt_path(cfg));
    log << "tokenizer-train: source kind " << cfg.source_tokenizer.kind << ", "
        << src_tok.merges.size() << " merges, " << src_tok.vocab.size() << " vocab entries\n";
    log << "tokenizer-train: target kind " << cfg.target_tokenizer.kind << ", "
        << tgt_tok.merges.size() << " merges, " << tgt_tok.vocab.size() << " vocab entries\n";
}

inline void cmd_preprocess(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    if (cfg.train_path.empty()) throw ValidationError("paths.train: required for preprocess");
    detail::require_artifact(tokenizer_src_path(cfg), "tokenizer-train");
    detail::require_artifact(tokenizer_tgt_path(cfg), "tokenizer-train");
    TokenizerModel src_tok = load_tokenizer(tokenizer_src_path(cfg));
    TokenizerModel tgt_tok = load_tokenizer(tokenizer_tgt_path(cfg));

    Task task = task_from_string(cfg.task);
    auto columns = parse_columns(cfg.columns);

    struct TokenizedSample {
        std::string id;
        TokenSeq source;
        EncodedTarget target;
    };
    struct TokenizedSplit {
        std::string name;
        std::vector<TokenizedSample> samples;
    };
    std::vector<TokenizedSplit> splits;
    for (const auto& sf : detail::split_files(cfg, false)) {
        CorpusWarnings warnings;
        auto samples = load_corpus(sf.path, columns, &warnings);
        for (const auto& msg : warnings.messages) log << sf.path << ": " << msg << '\n';
        TokenizedSplit split{sf.name, {}};
        for (size_t i = 0; i < samples.size(); ++i) {
            TokenizedSample ts;
            ts.id = sf.name + "-" + std::to_string(i);
            ts.source = encode(src_tok, samples[i].source_text);
            ts.target = encode_target(tgt_tok, target_words_for(samples[i], task, cfg.aux_head));
            split.samples.push_back(std::move(ts));
        }
        splits.push_back(std::move(split));
    }
    if (splits.front().samples.empty()) {
        throw ValidationError(cfg.train_path + ": no usable samples");
    }

    // Vocabularies come from the training split only.
    std::vector<TokenSeq> src_streams, tgt_streams, aux_streams;
    for (const auto& ts : splits.front().samples) {
        src_streams.push_back(ts.source);
        tgt_streams.push_back(ts.target.tokens);
        TokenSeq labels;
        for (const auto& a : ts.target.aux) {
            if (!a.empty()) labels.push_back(a);
        }
        aux_streams.push_back(std::move(labels));
    }
    Vocabulary src_vocab = build_vocabulary(src_streams);
    Vocabulary tgt_vocab = build_vocabulary(tgt_streams);
    Vocabulary aux_vocab = build_vocabulary(aux_streams);
    src_vocab.save(vocab_src_path(cfg));
    tgt_vocab.save(vocab_tgt_path(cfg));
    aux_vocab.save(vocab_handshape_path(cfg));

    nlohmann::json split_counts = nlohmann::json::object();
    for (const auto& split : splits) {
        std::vector<EncodedSample> encoded;
        for (const auto& ts : split.samples) {
            EncodedSample es;
            es.id = ts.id;
            es.source = src_vocab.encode(ts.source);
            es.target = tgt_vocab.encode(ts.target.tokens);
            if (cfg.aux_head) {
                for (const auto& a : ts.target.aux) {
                    es.aux.push_back(a.empty() ? Vocabulary::kPad : aux_vocab.id_of(a));
                }
            }
            encoded.push_back(std::move(es));
        }
        write_encoded(encoded_path(cfg, split.name), encoded, cfg.aux_head);
        split_counts[split.name] = encoded.size();
        log << "preprocess: " << split.name << " -> " << encoded.size() << " samples\n";
    }

    detail::write_json_file(cfg.output_dir + "/preprocess.meta.json",
                            {{"experiment", cfg.to_json()},
                             {"tokenizer_hash_src", detail::hash_string(src_tok)},
                             {"tokenizer_hash_tgt", detail::hash_string(tgt_tok)},
                             {"source_vocab", src_vocab.size()},
                             {"target_vocab", tgt_vocab.size()},
                             {"handshape_vocab", aux_vocab.size()},
                             {"splits", split_counts}});
    log << "preprocess: source vocab " << src_vocab.size() << ", target vocab "
        << tgt_vocab.size() << ", handshape vocab " << aux_vocab.size() << '\n';
}

// Loads whichever external embedding tables the config asks for.
inline std::optional<ExternalTables> load_external_tables(const ExperimentConfig& cfg) {
    EmbeddingMode mode = embedding_mode_from_string(cfg.embedding_mode);
    if (mode == EmbeddingMode::external_static) {
        return load_static_embeddings(cfg.embedding_path);
    }
    if (mode == EmbeddingMode::external_contextual) {
        return load_contextual_embeddings(cfg.contextual_path);
    }
    return std::nullopt;
}

inline ModelConfig model_config_for(const ExperimentConfig& cfg, size_t src_vocab,
                                    size_t tgt_vocab, size_t aux_vocab, int ext_width) {
    ModelConfig mc;
    mc.embed_width = cfg.embed_width;
    mc.num_layers = cfg.num_layers;
    mc.num_heads = cfg.num_heads;
    mc.ff_width = cfg.ff_width;
    mc.dropout = cfg.dropout;
    mc.src_vocab = static_cast<int>(src_vocab);
    mc.tgt_vocab = static_cast<int>(tgt_vocab);
    mc.fusion = fusion_from_string(cfg.fusion);
    mc.fusion_scale = cfg.fusion_scale;
    mc.aux_loss_scale = cfg.aux_loss_scale;
    mc.aux_head = cfg.aux_head;
    mc.aux_vocab = static_cast<int>(aux_vocab);
    mc.embedding_mode = embedding_mode_from_string(cfg.embedding_mode);
    mc.ext_width = ext_width;
    return mc;
}

inline TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    detail::require_artifact(encoded_path(cfg, "train"), "preprocess");
    detail::require_artifact(vocab_src_path(cfg), "preprocess");
    detail::require_artifact(vocab_tgt_path(cfg), "preprocess");
    Vocabulary src_vocab = Vocabulary::load(vocab_src_path(cfg));
    Vocabulary tgt_vocab = Vocabulary::load(vocab_tgt_path(cfg));
    size_t aux_vocab_size = 0;
    if (cfg.aux_head) aux_vocab_size = Vocabulary::load(vocab_handshape_path(cfg)).size();
    TokenizerModel src_tok = load_tokenizer(tokenizer_src_path(cfg));
    TokenizerModel tgt_tok = load_tokenizer(tokenizer_tgt_path(cfg));

    auto train_set = read_encoded(encoded_path(cfg, "train"));
    std::vector<EncodedSample> dev_set;
    if (std::filesystem::exists(encoded_path(cfg, "dev"))) {
        dev_set = read_encoded(encoded_path(cfg, "dev"));
    }
    if (train_set.empty()) throw ValidationError("encoded train split is empty");

    auto tables = load_external_tables(cfg);
    const ExternalTables* tables_ptr = tables ? &*tables : nullptr;
    ModelConfig mc = model_config_for(cfg, src_vocab.size(), tgt_vocab.size(), aux_vocab_size,
                                      tables ? tables->width : 0);
    auto model = Transformer<float>::init(mc, cfg.seed);

    TrainOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.max_epochs = cfg.max_epochs;
    opts.max_steps = cfg.max_steps;
    opts.learning_rate = cfg.learning_rate;
    opts.patience = cfg.patience;
    opts.seed = cfg.seed;
    opts.checkpoint_dir = cfg.output_dir;
    opts.checkpoint_extra = {{"experiment", cfg.to_json()},
                             {"tokenizer_hash_src", detail::hash_string(src_tok)},
                             {"tokenizer_hash_tgt", detail::hash_string(tgt_tok)}};
    opts.on_epoch = [&log](const EpochStats& e) {
        char buf[160];
        if (e.has_dev) {
            std::snprintf(buf, sizeof(buf), "epoch %-4d steps %-6lld train %.4f  dev %.4f%s",
                          e.epoch, static_cast<long long>(e.steps), e.train_total, e.dev_total,
                          e.improved ? "  *" : "");
        } else {
            std::snprintf(buf, sizeof(buf), "epoch %-4d steps %-6lld train %.4f%s", e.epoch,
                          static_cast<long long>(e.steps), e.train_total,
                          e.improved ? "  *" : "");
        }
        log << buf << '\n';
    };

    TrainResult result = train(model, train_set, dev_set, opts, &src_vocab, tables_ptr);

    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : result.epochs) {
        nlohmann::json je{{"epoch", e.epoch},
                          {"steps", e.steps},
                          {"train_total", e.train_total},
                          {"train_translation", e.train_translation},
                          {"train_aux", e.train_aux},
                          {"improved", e.improved}};
        if (e.has_dev) {
            je["dev_total"] = e.dev_total;
            je["dev_translation"] = e.dev_translation;
            je["dev_aux"] = e.dev_aux;
        }
        epochs.push_back(std::move(je));
    }
    detail::write_json_file(loss_log_path(cfg), {{"experiment", cfg.to_json()},
                                                 {"epochs", epochs},
                                                 {"best_epoch", result.best_epoch},
                                                 {"best_loss", result.best_loss},
                                                 {"steps", result.steps},
                                                 {"stopped_early", result.stopped_early}});
    log << "train: " << result.steps << " steps, best epoch " << result.best_epoch
        << " (monitored loss " << result.best_loss << ")\n";
    return result;
}

namespace detail {

inline void check_tokenizer_hash(const nlohmann::json& meta, const char* key,
                                 const std::string& tokenizer_path, const std::string& what) {
    if (!meta.contains(key)) return;
    require_artifact(tokenizer_path, "tokenizer-train");
    std::string current = hash_string(load_tokenizer(tokenizer_path));
    std::string recorded = meta.at(key).get<std::string>();
    if (current != recorded) {
        throw ValidationError(what + " was produced with a different tokenizer (" + key +
                              " recorded " + recorded + ", current " + current +
                              "); re-run the pipeline from tokenizer-train");
    }
}

}  // namespace detail

inline void cmd_translate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                          const std::string& input_path, const std::string& output_path,
                          std::ostream& log) {
    cfg.validate();
    detail::require_artifact(checkpoint_path, "train");
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    detail::check_tokenizer_hash(ckpt.extra, "tokenizer_hash_src", tokenizer_src_path(cfg),
                                 "checkpoint " + checkpoint_path);
    detail::check_tokenizer_hash(ckpt.extra, "tokenizer_hash_tgt", tokenizer_tgt_path(cfg),
                                 "checkpoint " + checkpoint_path);

    Vocabulary src_vocab = Vocabulary::load(vocab_src_path(cfg));
    Vocabulary tgt_vocab = Vocabulary::load(vocab_tgt_path(cfg));
    TokenizerModel src_tok = load_tokenizer(tokenizer_src_path(cfg));
    TokenizerModel tgt_tok = load_tokenizer(tokenizer_tgt_path(cfg));

    ckpt.config.validate();
    auto reference = Transformer<float>::init(ckpt.config, 0);
    for (const auto& [name, p] : reference.params) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end() || it->second.shape != p.shape) {
            throw ValidationError(checkpoint_path + ": parameters do not match the config (" +
                                  name + ")");
        }
    }
    Transformer<float> model;
    model.config = ckpt.config;
    model.params = std::move(ckpt.params);

    auto tables = load_external_tables(cfg);
    const ExternalTables* tables_ptr = tables ? &*tables : nullptr;

    auto columns = parse_columns(cfg.columns);
    CorpusWarnings warnings;
    auto samples = load_corpus(input_path, columns, &warnings);
    for (const auto& msg : warnings.messages) log << input_path << ": " << msg << '\n';

    std::string input_stem = std::filesystem::path(input_path).stem().string();
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + output_path);
    for (size_t i = 0; i < samples.size(); ++i) {
        auto src_ids = src_vocab.encode(encode(src_tok, samples[i].source_text));
        auto step = model.step_scorer(src_ids, &src_vocab, tables_ptr,
                                      input_stem + "-" + std::to_string(i));
        size_t max_len = default_max_len(src_ids.size(), cfg.max_len_factor);
        auto result = beam_decode(step, static_cast<size_t>(cfg.beam_size), max_len, cfg.alpha);
        auto tokens = tgt_vocab.decode(strip_eos(result.tokens));
        out << detokenize(tgt_tok, tokens) << '\n';
    }
    if (!out) throw ValidationError("short write on " + output_path);

    detail::write_json_file(output_path + ".meta.json",
                            {{"experiment", cfg.to_json()},
                             {"tokenizer_hash_src", detail::hash_string(src_tok)},
                             {"tokenizer_hash_tgt", detail::hash_string(tgt_tok)},
                             {"checkpoint", std::filesystem::path(checkpoint_path)
                                                .filename()
                                                .string()},
                             {"input", std::filesystem::path(input_path).filename().string()},
                             {"samples", samples.size()},
                             {"beam_size", cfg.beam_size},
                             {"alpha", cfg.alpha},
                             {"max_len_factor", cfg.max_len_factor}});
    log << "translate: " << samples.size() << " sentences -> " << output_path << '\n';
}

struct EvaluateResult {
    ScoreReport report;
    size_t missing_hyp_glosses = 0;  // t2g2h lookups that fell back to UNK
    size_t missing_ref_glosses = 0;
};

inline EvaluateResult cmd_evaluate(const ExperimentConfig& cfg, const std::string& hyp_path,
                                   const std::string& ref_path, const std::string& report_path,
                                   const std::string& label, std::ostream& log) {
    cfg.validate();
    detail::require_artifact(hyp_path, "translate");
    std::string sidecar = hyp_path + ".meta.json";
    if (std::filesystem::exists(sidecar)) {
        detail::check_tokenizer_hash(detail::read_json_file(sidecar), "tokenizer_hash_tgt",
                                     tokenizer_tgt_path(cfg), "hypothesis file " + hyp_path);
    }

    Task task = task_from_string(cfg.task);
    auto columns = parse_columns(cfg.columns);
    CorpusWarnings warnings;
    auto ref_samples = load_corpus(ref_path, columns, &warnings);
    for (const auto& msg : warnings.messages) log << ref_path << ": " << msg << '\n';

    auto hyp_lines = detail::read_lines(hyp_path);
    if (hyp_lines.size() != ref_samples.size()) {
        throw ValidationError("hypothesis/reference mismatch: " + hyp_path + " has " +
                              std::to_string(hyp_lines.size()) + " lines, " + ref_path +
                              " has " + std::to_string(ref_samples.size()) + " samples");
    }

    TokenCorpus hyps, refs;
    for (size_t i = 0; i < hyp_lines.size(); ++i) {
        hyps.push_back(split_whitespace(hyp_lines[i]));
        refs.push_back(reference_tokens(ref_samples[i], task));
    }

    EvaluateResult result;
    if (cfg.t2g2h) {
        SignDictionary dict = load_dictionary(cfg.dictionary_path);
        for (auto& h : hyps) {
            GlossConversion conv = gloss_to_hamnosys(h, dict);
            result.missing_hyp_glosses += conv.missing;
            h = std::move(conv.tokens);
        }
        for (auto& r : refs) {
            GlossConversion conv = gloss_to_hamnosys(r, dict);
            result.missing_ref_glosses += conv.missing;
            r = std::move(conv.tokens);
        }
    }
    result.report = score_corpus(hyps, refs);

    nlohmann::json report_json = result.report.to_json();
    report_json["experiment"] = cfg.to_json();
    report_json["task"] = cfg.task;
    report_json["t2g2h"] = cfg.t2g2h;
    report_json["label"] = label;
    if (cfg.t2g2h) {
        report_json["missing_hyp_glosses"] = result.missing_hyp_glosses;
        report_json["missing_ref_glosses"] = result.missing_ref_glosses;
    }
    detail::write_json_file(report_path, report_json);

    log << format_score_table({{label, result.report}});
    log << "evaluate: " << result.report.sentences << " sentences, report -> " << report_path
        << '\n';
    return result;
}

// The --toy preset: a self-contained experiment over the synthetic corpus,
// tuned so the whole five-command flow finishes in well under ten minutes on
// one CPU core. Data files are generated under <work_dir>/data when absent.
inline ExperimentConfig toy_experiment(const std::string& work_dir, bool regenerate = false) {
    std::string data_dir = work_dir + "/data";
    ToyPaths paths{data_dir + "/train.tsv", data_dir + "/dev.tsv", data_dir + "/test.tsv",
                   data_dir + "/dictionary.tsv"};
    bool have_all = std::filesystem::exists(paths.train) &&
                    std::filesystem::exists(paths.dev) &&
                    std::filesystem::exists(paths.test) &&
                    std::filesystem::exists(paths.dictionary);
    if (regenerate || !have_all) write_toy_corpus(data_dir);

    ExperimentConfig cfg;
    cfg.task = "t2g";
    cfg.train_path = paths.train;
    cfg.dev_path = paths.dev;
    cfg.test_path = paths.test;
    cfg.dictionary_path = paths.dictionary;
    cfg.output_dir = work_dir;
    cfg.columns = "text,gloss,hamnosys,handshape";
    cfg.source_tokenizer = {"word", 0};
    cfg.target_tokenizer = {"word", 0};
    cfg.embed_width = 64;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.ff_width = 128;
    cfg.dropout = 0.2;
    cfg.aux_head = true;
    cfg.aux_loss_scale = 0.5;
    cfg.batch_size = 16;
    cfg.max_epochs = 300;
    cfg.max_steps = 3000;
    cfg.learning_rate = 1e-3;
    cfg.patience = 300;
    cfg.seed = 1;
    cfg.beam_size = 5;
    cfg.max_len_factor = 1.5;
    return cfg;
}

}  // namespace signtrans
