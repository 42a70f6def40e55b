// Transformer encoder-decoder with pluggable source-embedding front-ends,
// sentence-average fusion (ADD / CON) and an optional auxiliary hand-shape
// classification head on the decoder.
//
// Layout is post-layer-norm: sublayer -> dropout -> residual add -> norm.
// Attention masks are additive (0 for visible, -1e9 for blocked). Training
// processes each batch row as its own unpadded subgraph on one tape, so PAD
// tokens never enter the forward math; padded Batch storage is only a
// transport format.
//
// The combined objective is translation cross-entropy plus the hand-shape
// cross-entropy scaled by aux_loss_scale, combined as one add node so the
// total is bit-identical to translation + scale * aux.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "signtrans/corpus.hpp"
#include "signtrans/rng.hpp"
#include "signtrans/tensor.hpp"

namespace signtrans {

enum class Fusion { none, add, con };
enum class EmbeddingMode { learned, external_static, external_contextual };

inline std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::none: return "none";
        case Fusion::add: return "add";
        case Fusion::con: return "con";
    }
    return "?";
}

inline Fusion fusion_from_string(const std::string& s) {
    if (s == "none") return Fusion::none;
    if (s == "add") return Fusion::add;
    if (s == "con") return Fusion::con;
    throw ValidationError("unknown fusion mode: '" + s + "' (expected none|add|con)");
}

inline std::string to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::learned: return "learned";
        case EmbeddingMode::external_static: return "external_static";
        case EmbeddingMode::external_contextual: return "external_contextual";
    }
    return "?";
}

inline EmbeddingMode embedding_mode_from_string(const std::string& s) {
    if (s == "learned") return EmbeddingMode::learned;
    if (s == "external_static") return EmbeddingMode::external_static;
    if (s == "external_contextual") return EmbeddingMode::external_contextual;
    throw ValidationError("unknown embedding mode: '" + s +
                          "' (expected learned|external_static|external_contextual)");
}

struct ModelConfig {
    int embed_width = 64;
    int num_layers = 2;
    int num_heads = 2;
    int ff_width = 128;
    double dropout = 0.2;
    int src_vocab = 0;
    int tgt_vocab = 0;
    Fusion fusion = Fusion::none;
    double fusion_scale = 1.0;   // multiplies the sentence-average vector
    double aux_loss_scale = 1.0; // multiplies the hand-shape loss in the total
    bool aux_head = false;
    int aux_vocab = 0;
    EmbeddingMode embedding_mode = EmbeddingMode::learned;
    int ext_width = 0;  // width of external embedding vectors

    void validate() const {
        std::vector<std::string> problems;
        if (embed_width < 1) problems.push_back("embed_width must be >= 1");
        if (num_layers < 1) problems.push_back("num_layers must be >= 1");
        if (num_heads < 1) problems.push_back("num_heads must be >= 1");
        if (num_heads >= 1 && embed_width >= 1 && embed_width % num_heads != 0) {
            problems.push_back("embed_width must be divisible by num_heads");
        }
        if (ff_width < 1) problems.push_back("ff_width must be >= 1");
        if (dropout < 0 || dropout >= 1) problems.push_back("dropout must be in [0,1)");
        if (embedding_mode == EmbeddingMode::learned && src_vocab < 4) {
            problems.push_back("src_vocab must cover the reserved tokens (>= 4)");
        }
        if (embedding_mode != EmbeddingMode::learned && ext_width < 1) {
            problems.push_back("ext_width must be >= 1 for external embedding modes");
        }
        if (tgt_vocab < 4) problems.push_back("tgt_vocab must cover the reserved tokens (>= 4)");
        if (fusion_scale < 0) problems.push_back("fusion_scale must be >= 0");
        if (aux_loss_scale < 0) problems.push_back("aux_loss_scale must be >= 0");
        if (aux_head && aux_vocab < 4) {
            problems.push_back("aux_vocab must cover the reserved tokens (>= 4) when aux_head is on");
        }
        if (!problems.empty()) {
            std::string msg = "invalid model config:";
            for (const auto& p : problems) msg += "\n  - " + p;
            throw ValidationError(msg);
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"embed_width", embed_width},
                              {"num_layers", num_layers},
                              {"num_heads", num_heads},
                              {"ff_width", ff_width},
                              {"dropout", dropout},
                              {"src_vocab", src_vocab},
                              {"tgt_vocab", tgt_vocab},
                              {"fusion", to_string(fusion)},
                              {"fusion_scale", fusion_scale},
                              {"aux_loss_scale", aux_loss_scale},
                              {"aux_head", aux_head},
                              {"aux_vocab", aux_vocab},
                              {"embedding_mode", to_string(embedding_mode)},
                              {"ext_width", ext_width}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.embed_width = j.at("embed_width").get<int>();
        c.num_layers = j.at("num_layers").get<int>();
        c.num_heads = j.at("num_heads").get<int>();
        c.ff_width = j.at("ff_width").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.src_vocab = j.at("src_vocab").get<int>();
        c.tgt_vocab = j.at("tgt_vocab").get<int>();
        c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
        c.fusion_scale = j.at("fusion_scale").get<double>();
        c.aux_loss_scale = j.at("aux_loss_scale").get<double>();
        c.aux_head = j.at("aux_head").get<bool>();
        c.aux_vocab = j.at("aux_vocab").get<int>();
        c.embedding_mode = embedding_mode_from_string(j.at("embedding_mode").get<std::string>());
        c.ext_width = j.at("ext_width").get<int>();
        return c;
    }
};

// Precomputed embeddings from outside the model: a static word->vector table
// (word2vec-style) or per-sentence contextual records carrying one vector per
// token plus a sentence ([CLS]-style) vector.
struct ContextualRecord {
    std::vector<std::vector<float>> token_vectors;
    std::vector<float> sentence_vector;
};

struct ExternalTables {
    int width = 0;
    std::map<std::string, std::vector<float>> words;
    std::map<std::string, ContextualRecord> sentences;
};

// Text file, one line per word: "word v1 v2 ... vN".
inline ExternalTables load_static_embeddings(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open embedding file: " + path);
    ExternalTables tables;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        std::vector<float> vec;
        double v;
        while (ss >> v) vec.push_back(static_cast<float>(v));
        if (word.empty() || vec.empty()) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected 'word v1 v2 ...'");
        }
        if (tables.width == 0) tables.width = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != tables.width) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": vector width " +
                                  std::to_string(vec.size()) + " != " +
                                  std::to_string(tables.width));
        }
        tables.words[word] = std::move(vec);
    }
    if (tables.words.empty()) throw ValidationError(path + ": no embeddings found");
    return tables;
}

// JSON lines: {"id": ..., "sentence_vector": [...], "token_vectors": [[...], ...]}.
inline ExternalTables load_contextual_embeddings(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open embedding file: " + path);
    ExternalTables tables;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ContextualRecord rec;
        rec.sentence_vector = j.at("sentence_vector").get<std::vector<float>>();
        rec.token_vectors = j.at("token_vectors").get<std::vector<std::vector<float>>>();
        if (tables.width == 0) tables.width = static_cast<int>(rec.sentence_vector.size());
        bool ok = static_cast<int>(rec.sentence_vector.size()) == tables.width;
        for (const auto& t : rec.token_vectors) {
            ok = ok && static_cast<int>(t.size()) == tables.width;
        }
        if (!ok) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": inconsistent vector widths");
        }
        tables.sentences[j.at("id").get<std::string>()] = std::move(rec);
    }
    if (tables.sentences.empty()) throw ValidationError(path + ": no records found");
    return tables;
}

// Interleaved sinusoids: dim 2i ~ sin(pos / 10000^(2i/E)), dim 2i+1 ~ cos.
template <class Real>
std::vector<Real> sinusoid_positions(int len, int width) {
    std::vector<Real> out(static_cast<size_t>(len) * static_cast<size_t>(width));
    for (int pos = 0; pos < len; ++pos) {
        for (int i = 0; i < width; ++i) {
            double exponent = static_cast<double>(i - i % 2) / width;
            double angle = pos / std::pow(10000.0, exponent);
            out[static_cast<size_t>(pos) * width + static_cast<size_t>(i)] =
                static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return out;
}

// Additive attention masks: 0 keeps a key visible, kMaskedOut hides it.
constexpr double kMaskedOut = -1e9;

template <class Real>
std::vector<Real> causal_mask(int len) {
    std::vector<Real> m(static_cast<size_t>(len) * static_cast<size_t>(len), Real(0));
    for (int i = 0; i < len; ++i) {
        for (int j = i + 1; j < len; ++j) {
            m[static_cast<size_t>(i) * len + static_cast<size_t>(j)] = Real(kMaskedOut);
        }
    }
    return m;
}

template <class Real>
std::vector<Real> padding_mask(int query_len, const std::vector<uint8_t>& key_is_real) {
    int key_len = static_cast<int>(key_is_real.size());
    std::vector<Real> m(static_cast<size_t>(query_len) * static_cast<size_t>(key_len), Real(0));
    for (int i = 0; i < query_len; ++i) {
        for (int j = 0; j < key_len; ++j) {
            if (!key_is_real[static_cast<size_t>(j)]) {
                m[static_cast<size_t>(i) * key_len + static_cast<size_t>(j)] = Real(kMaskedOut);
            }
        }
    }
    return m;
}

template <class Real>
struct BatchLoss {
    Tensor<Real> translation;  // token-mean translation cross-entropy
    Tensor<Real> aux;          // token-mean hand-shape cross-entropy (0 when off)
    Tensor<Real> total;        // translation + aux * aux_loss_scale, one add node
    int64_t target_tokens = 0;
    int64_t aux_tokens = 0;
};

template <class Real>
class Transformer {
   public:
    ModelConfig config;
    ParamMap<Real> params;

    // Attention probability capture for inspection and tests.
    struct Trace {
        struct Entry {
            std::string name;  // e.g. "enc.0.attn.h1"
            Shape shape;
            std::vector<Real> probs;
        };
        std::vector<Entry> attention;
    };

    // Per-graph forward state: the tape, train/eval switch, dropout stream,
    // optional trace, and one node per parameter (shared across batch rows).
    struct Forward {
        Tape<Real>& tape;
        bool training = false;
        Rng* dropout_rng = nullptr;
        Trace* trace = nullptr;
        std::map<std::string, Tensor<Real>> param_nodes;
    };

    static Transformer init(ModelConfig cfg, uint64_t seed) {
        cfg.validate();
        Transformer m;
        m.config = cfg;
        auto weight = [&](const std::string& name, int rows, int cols) {
            m.params.emplace(name, Parameter<Real>(name, {rows, cols},
                                                   xavier_init<Real>({rows, cols},
                                                                     derive_seed(seed, name))));
        };
        auto zeros = [&](const std::string& name, int n) {
            m.params.emplace(name, Parameter<Real>(name, {n}, zeros_init<Real>({n})));
        };
        auto ones = [&](const std::string& name, int n) {
            m.params.emplace(name, Parameter<Real>(name, {n},
                                                   std::vector<Real>(static_cast<size_t>(n),
                                                                     Real(1))));
        };
        int e = cfg.embed_width, ff = cfg.ff_width;
        if (cfg.embedding_mode == EmbeddingMode::learned) {
            weight("src_embed.table", cfg.src_vocab, e);
        } else {
            weight("ext.proj", cfg.ext_width, e);
            weight("ext.unk", 1, cfg.ext_width);
        }
        weight("tgt_embed.table", cfg.tgt_vocab, e);
        auto block = [&](const std::string& p, bool cross) {
            for (const char* part : {"attn", "cross"}) {
                if (!cross && std::string(part) == "cross") continue;
                weight(p + "." + part + ".wq", e, e);
                weight(p + "." + part + ".wk", e, e);
                weight(p + "." + part + ".wv", e, e);
                weight(p + "." + part + ".wo", e, e);
                zeros(p + "." + part + ".bq", e);
                zeros(p + "." + part + ".bk", e);
                zeros(p + "." + part + ".bv", e);
                zeros(p + "." + part + ".bo", e);
            }
            weight(p + ".ff.w1", e, ff);
            zeros(p + ".ff.b1", ff);
            weight(p + ".ff.w2", ff, e);
            zeros(p + ".ff.b2", e);
            int norms = cross ? 3 : 2;
            for (int n = 1; n <= norms; ++n) {
                ones(p + ".ln" + std::to_string(n) + ".gain", e);
                zeros(p + ".ln" + std::to_string(n) + ".bias", e);
            }
        };
        for (int l = 0; l < cfg.num_layers; ++l) {
            block("enc." + std::to_string(l), false);
            block("dec." + std::to_string(l), true);
        }
        weight("out.w", e, cfg.tgt_vocab);
        zeros("out.b", cfg.tgt_vocab);
        if (cfg.aux_head) {
            weight("aux.w", e, cfg.aux_vocab);
            zeros("aux.b", cfg.aux_vocab);
        }
        return m;
    }

    Tensor<Real> p(Forward& fw, const std::string& name) {
        auto it = fw.param_nodes.find(name);
        if (it != fw.param_nodes.end()) return it->second;
        Parameter<Real>& par = params.at(name);
        Tensor<Real> t = fw.training ? fw.tape.leaf(par) : fw.tape.input(par.shape, par.value);
        fw.param_nodes.emplace(name, t);
        return t;
    }

    Tensor<Real> drop(Forward& fw, Tensor<Real> x) {
        if (!fw.training || config.dropout == 0) return x;
        return ops::dropout(x, config.dropout, true, *fw.dropout_rng);
    }

    struct Embedded {
        Tensor<Real> seq;    // (W,E), position-encoded
        Tensor<Real> x_ave;  // (1,E), sentence average / sentence vector
    };

    // Source front-end. Learned: trained table * sqrt(E). External static:
    // constant word vectors (learned UNK row for gaps) projected to E.
    // External contextual: per-sentence token vectors projected to E, with
    // the record's sentence vector as x_ave. Positions are added at the end;
    // x_ave is taken before positions so it carries content only.
    Embedded embed_source(Forward& fw, const std::vector<int32_t>& ids,
                          const Vocabulary* src_vocab = nullptr,
                          const ExternalTables* tables = nullptr,
                          const std::string& sentence_id = {}) {
        if (ids.empty()) throw ValidationError("embed_source: empty source sequence");
        int w = static_cast<int>(ids.size());
        int e = config.embed_width;
        Tensor<Real> content;
        Tensor<Real> x_ave;
        if (config.embedding_mode == EmbeddingMode::learned) {
            auto table = p(fw, "src_embed.table");
            content = ops::scale(ops::embedding_lookup(table, ids),
                                 Real(std::sqrt(static_cast<double>(e))));
            x_ave = ops::reshape(ops::mean(content, 0), {1, e});
        } else if (config.embedding_mode == EmbeddingMode::external_static) {
            if (!tables || !src_vocab) {
                throw ValidationError("static embedding mode needs a vocabulary and a table");
            }
            int xw = config.ext_width;
            std::vector<Real> base(static_cast<size_t>(w) * static_cast<size_t>(xw), Real(0));
            std::vector<Real> unk_selector(static_cast<size_t>(w), Real(0));
            for (int i = 0; i < w; ++i) {
                const std::string& word = src_vocab->token_of(ids[static_cast<size_t>(i)]);
                auto it = tables->words.find(word);
                if (ids[static_cast<size_t>(i)] == Vocabulary::kUnk ||
                    it == tables->words.end()) {
                    unk_selector[static_cast<size_t>(i)] = Real(1);
                } else {
                    for (int d = 0; d < xw; ++d) {
                        base[static_cast<size_t>(i) * xw + static_cast<size_t>(d)] =
                            static_cast<Real>(it->second[static_cast<size_t>(d)]);
                    }
                }
            }
            auto known = fw.tape.input({w, xw}, std::move(base));
            auto selector = fw.tape.input({w, 1}, std::move(unk_selector));
            auto vectors = ops::add(known, ops::matmul(selector, p(fw, "ext.unk")));
            content = ops::matmul(vectors, p(fw, "ext.proj"));
            x_ave = ops::reshape(ops::mean(content, 0), {1, e});
        } else {
            if (!tables) throw ValidationError("contextual embedding mode needs a table");
            auto it = tables->sentences.find(sentence_id);
            if (it == tables->sentences.end()) {
                throw ValidationError("no contextual embedding record for sentence id '" +
                                      sentence_id + "'");
            }
            const ContextualRecord& rec = it->second;
            if (rec.token_vectors.size() != ids.size()) {
                throw ValidationError("contextual record for '" + sentence_id + "' has " +
                                      std::to_string(rec.token_vectors.size()) +
                                      " token vectors for " + std::to_string(ids.size()) +
                                      " tokens");
            }
            int xw = config.ext_width;
            std::vector<Real> base(static_cast<size_t>(w) * static_cast<size_t>(xw));
            for (int i = 0; i < w; ++i) {
                for (int d = 0; d < xw; ++d) {
                    base[static_cast<size_t>(i) * xw + static_cast<size_t>(d)] =
                        static_cast<Real>(rec.token_vectors[static_cast<size_t>(i)]
                                                           [static_cast<size_t>(d)]);
                }
            }
            std::vector<Real> sent(rec.sentence_vector.begin(), rec.sentence_vector.end());
            content = ops::matmul(fw.tape.input({w, xw}, std::move(base)), p(fw, "ext.proj"));
            x_ave = ops::matmul(fw.tape.input({1, xw}, std::move(sent)), p(fw, "ext.proj"));
        }
        auto positions = fw.tape.input({w, e}, sinusoid_positions<Real>(w, e));
        return {ops::add(content, positions), x_ave};
    }

    // ADD: every position gets + scale * x_ave (length unchanged).
    // CON: scale * x_ave is prepended as a fresh position (length + 1).
    Tensor<Real> fuse(Forward& fw, const Embedded& emb) {
        switch (config.fusion) {
            case Fusion::none: return emb.seq;
            case Fusion::add: {
                auto ave = ops::reshape(ops::scale(emb.x_ave, Real(config.fusion_scale)),
                                        {config.embed_width});
                return ops::add(emb.seq, ave);
            }
            case Fusion::con: {
                auto ave = ops::scale(emb.x_ave, Real(config.fusion_scale));
                return ops::concat<Real>({ave, emb.seq}, 0);
            }
        }
        return emb.seq;
    }

    Tensor<Real> mha(Forward& fw, const std::string& prefix, Tensor<Real> x, Tensor<Real> kv,
                     Tensor<Real> mask_bias) {
        int e = config.embed_width;
        int heads = config.num_heads;
        int dh = e / heads;
        auto q = ops::add(ops::matmul(x, p(fw, prefix + ".wq")), p(fw, prefix + ".bq"));
        auto k = ops::add(ops::matmul(kv, p(fw, prefix + ".wk")), p(fw, prefix + ".bk"));
        auto v = ops::add(ops::matmul(kv, p(fw, prefix + ".wv")), p(fw, prefix + ".bv"));
        std::vector<Tensor<Real>> outputs;
        for (int h = 0; h < heads; ++h) {
            auto qh = ops::slice_cols(q, h * dh, dh);
            auto kh = ops::slice_cols(k, h * dh, dh);
            auto vh = ops::slice_cols(v, h * dh, dh);
            auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)),
                                     Real(1.0 / std::sqrt(static_cast<double>(dh))));
            auto probs = ops::softmax(ops::add(scores, mask_bias), -1);
            if (fw.trace) {
                fw.trace->attention.push_back(
                    {prefix + ".h" + std::to_string(h), probs.shape(), probs.value()});
            }
            outputs.push_back(ops::matmul(probs, vh));
        }
        auto merged = ops::concat(outputs, 1);
        return ops::add(ops::matmul(merged, p(fw, prefix + ".wo")), p(fw, prefix + ".bo"));
    }

    Tensor<Real> feed_forward(Forward& fw, const std::string& prefix, Tensor<Real> x) {
        auto h = ops::relu(ops::add(ops::matmul(x, p(fw, prefix + ".w1")),
                                    p(fw, prefix + ".b1")));
        return ops::add(ops::matmul(h, p(fw, prefix + ".w2")), p(fw, prefix + ".b2"));
    }

    Tensor<Real> norm(Forward& fw, const std::string& prefix, Tensor<Real> x) {
        return ops::layer_norm(x, p(fw, prefix + ".gain"), p(fw, prefix + ".bias"));
    }

    Tensor<Real> encode(Forward& fw, Tensor<Real> x, Tensor<Real> mask_bias) {
        for (int l = 0; l < config.num_layers; ++l) {
            std::string base = "enc." + std::to_string(l);
            auto a = mha(fw, base + ".attn", x, x, mask_bias);
            x = norm(fw, base + ".ln1", ops::add(x, drop(fw, a)));
            auto f = feed_forward(fw, base + ".ff", x);
            x = norm(fw, base + ".ln2", ops::add(x, drop(fw, f)));
        }
        return x;
    }

    Tensor<Real> decode(Forward& fw, Tensor<Real> y, Tensor<Real> memory,
                        Tensor<Real> self_mask_bias, Tensor<Real> cross_mask_bias) {
        for (int l = 0; l < config.num_layers; ++l) {
            std::string base = "dec." + std::to_string(l);
            auto a = mha(fw, base + ".attn", y, y, self_mask_bias);
            y = norm(fw, base + ".ln1", ops::add(y, drop(fw, a)));
            auto c = mha(fw, base + ".cross", y, memory, cross_mask_bias);
            y = norm(fw, base + ".ln2", ops::add(y, drop(fw, c)));
            auto f = feed_forward(fw, base + ".ff", y);
            y = norm(fw, base + ".ln3", ops::add(y, drop(fw, f)));
        }
        return y;
    }

    Tensor<Real> embed_target(Forward& fw, const std::vector<int32_t>& ids) {
        int t = static_cast<int>(ids.size());
        int e = config.embed_width;
        auto content = ops::scale(ops::embedding_lookup(p(fw, "tgt_embed.table"), ids),
                                  Real(std::sqrt(static_cast<double>(e))));
        auto positions = fw.tape.input({t, e}, sinusoid_positions<Real>(t, e));
        return ops::add(content, positions);
    }

    // Full per-sentence forward up to decoder states: returns the (T,E)
    // states for prefix [BOS, y_1 .. y_n].
    Tensor<Real> forward_states(Forward& fw, const std::vector<int32_t>& src_ids,
                                const std::vector<int32_t>& prefix_ids,
                                const Vocabulary* src_vocab = nullptr,
                                const ExternalTables* tables = nullptr,
                                const std::string& sentence_id = {}) {
        auto fused = fuse(fw, embed_source(fw, src_ids, src_vocab, tables, sentence_id));
        int src_len = fused.shape()[0];
        auto src_bias = fw.tape.constant({src_len, src_len}, Real(0));
        auto memory = encode(fw, drop(fw, fused), src_bias);

        int t = static_cast<int>(prefix_ids.size());
        auto y = drop(fw, embed_target(fw, prefix_ids));
        auto self_bias = fw.tape.input({t, t}, causal_mask<Real>(t));
        auto cross_bias = fw.tape.constant({t, src_len}, Real(0));
        return decode(fw, y, memory, self_bias, cross_bias);
    }

    Tensor<Real> output_logits(Forward& fw, Tensor<Real> states) {
        return ops::add(ops::matmul(states, p(fw, "out.w")), p(fw, "out.b"));
    }

    Tensor<Real> aux_logits(Forward& fw, Tensor<Real> states) {
        if (!config.aux_head) throw ValidationError("aux head is disabled in this config");
        return ops::add(ops::matmul(states, p(fw, "aux.w")), p(fw, "aux.b"));
    }

    // Joint loss over one padded batch. Every row becomes an unpadded
    // subgraph; cross-entropies are pooled over the batch (token mean).
    BatchLoss<Real> loss(Forward& fw, const Batch& batch,
                         const Vocabulary* src_vocab = nullptr,
                         const ExternalTables* tables = nullptr) {
        if (batch.size == 0) throw ValidationError("loss: empty batch");
        bool want_aux = config.aux_head;
        if (want_aux && batch.aux.empty()) {
            throw ValidationError("aux head is on but the batch has no hand-shape targets");
        }
        Tensor<Real> t_sum, h_sum;
        int64_t t_count = 0, h_count = 0;
        for (size_t row = 0; row < batch.size; ++row) {
            std::vector<int32_t> src, tgt, aux;
            for (size_t j = 0; j < batch.src_width; ++j) {
                if (batch.src_mask[row * batch.src_width + j]) {
                    src.push_back(batch.src[row * batch.src_width + j]);
                }
            }
            for (size_t j = 0; j < batch.tgt_width; ++j) {
                if (batch.tgt_mask[row * batch.tgt_width + j]) {
                    tgt.push_back(batch.tgt[row * batch.tgt_width + j]);
                    if (want_aux) aux.push_back(batch.aux[row * batch.tgt_width + j]);
                }
            }
            std::vector<int32_t> prefix = {Vocabulary::kBos};
            prefix.insert(prefix.end(), tgt.begin(), tgt.end());
            std::vector<int32_t> labels = tgt;
            labels.push_back(Vocabulary::kEos);

            std::string sid = row < batch.ids.size() ? batch.ids[row] : std::string();
            auto states = forward_states(fw, src, prefix, src_vocab, tables, sid);
            auto ce = ops::cross_entropy_sum(output_logits(fw, states), labels,
                                             Vocabulary::kPad);
            t_count += ce.count;
            t_sum = t_sum.valid() ? ops::add(t_sum, ce.sum) : ce.sum;

            if (want_aux) {
                std::vector<int32_t> aux_labels = aux;
                aux_labels.push_back(Vocabulary::kPad);  // EOS slot carries no hand shape
                auto ah = ops::cross_entropy_sum(aux_logits(fw, states), aux_labels,
                                                 Vocabulary::kPad);
                h_count += ah.count;
                h_sum = h_sum.valid() ? ops::add(h_sum, ah.sum) : ah.sum;
            }
        }
        BatchLoss<Real> out;
        out.target_tokens = t_count;
        out.aux_tokens = h_count;
        out.translation = t_count > 0 ? ops::scale(t_sum, Real(1) / Real(t_count))
                                      : fw.tape.constant({1}, Real(0));
        out.aux = h_count > 0 ? ops::scale(h_sum, Real(1) / Real(h_count))
                              : fw.tape.constant({1}, Real(0));
        out.total = ops::add(out.translation, ops::scale(out.aux, Real(config.aux_loss_scale)));
        return out;
    }

    // Log-probability step function for the decoders: encodes the source
    // once, then scores the next token for any given prefix.
    std::function<std::vector<double>(const std::vector<int32_t>&)> step_scorer(
        const std::vector<int32_t>& src_ids, const Vocabulary* src_vocab = nullptr,
        const ExternalTables* tables = nullptr, const std::string& sentence_id = {}) {
        // Encode once and keep the memory values.
        Tape<Real> enc_tape;
        Forward enc_fw{enc_tape};
        auto fused = fuse(enc_fw, embed_source(enc_fw, src_ids, src_vocab, tables, sentence_id));
        int src_len = fused.shape()[0];
        auto src_bias = enc_tape.constant({src_len, src_len}, Real(0));
        auto memory = encode(enc_fw, fused, src_bias);
        auto mem_values = std::make_shared<std::vector<Real>>(memory.value());

        Transformer* self = this;
        int e = config.embed_width;
        return [self, mem_values, src_len, e](const std::vector<int32_t>& prefix) {
            Tape<Real> tape;
            Forward fw{tape};
            int t = static_cast<int>(prefix.size());
            auto mem = tape.input({src_len, e}, *mem_values);
            auto y = self->embed_target(fw, prefix);
            auto self_bias = tape.input({t, t}, causal_mask<Real>(t));
            auto cross_bias = tape.constant({t, src_len}, Real(0));
            auto states = self->decode(fw, y, mem, self_bias, cross_bias);
            auto logits = self->output_logits(fw, states);
            // Log-softmax of the last row only.
            const auto& v = logits.value();
            int vocab = logits.shape()[1];
            const Real* row = &v[static_cast<size_t>((t - 1) * vocab)];
            double maxv = row[0];
            for (int i = 1; i < vocab; ++i) maxv = std::max(maxv, static_cast<double>(row[i]));
            double sum = 0;
            for (int i = 0; i < vocab; ++i) sum += std::exp(static_cast<double>(row[i]) - maxv);
            double lse = maxv + std::log(sum);
            std::vector<double> out(static_cast<size_t>(vocab));
            for (int i = 0; i < vocab; ++i) out[static_cast<size_t>(i)] = row[i] - lse;
            return out;
        };
    }
};

// Dataset-level eval loss: token-mean over the whole set, independent of any
// batch grouping.
struct EvalLoss {
    double translation = 0, aux = 0, total = 0;
    int64_t target_tokens = 0, aux_tokens = 0;
};

template <class Real>
EvalLoss evaluate_loss(Transformer<Real>& model, const std::vector<EncodedSample>& samples,
                       const Vocabulary* src_vocab = nullptr,
                       const ExternalTables* tables = nullptr) {
    double t_sum = 0, h_sum = 0;
    int64_t t_count = 0, h_count = 0;
    for (const auto& s : samples) {
        Batch b;
        b.size = 1;
        b.src_width = s.source.size();
        b.tgt_width = s.target.size();
        b.src = s.source;
        b.src_mask.assign(s.source.size(), 1);
        b.tgt = s.target;
        b.tgt_mask.assign(s.target.size(), 1);
        b.aux = s.aux;
        b.ids = {s.id};
        Tape<Real> tape;
        typename Transformer<Real>::Forward fw{tape};
        auto loss = model.loss(fw, b, src_vocab, tables);
        t_sum += static_cast<double>(loss.translation.value()[0]) *
                 static_cast<double>(loss.target_tokens);
        h_sum += static_cast<double>(loss.aux.value()[0]) * static_cast<double>(loss.aux_tokens);
        t_count += loss.target_tokens;
        h_count += loss.aux_tokens;
    }
    EvalLoss out;
    out.target_tokens = t_count;
    out.aux_tokens = h_count;
    out.translation = t_count > 0 ? t_sum / static_cast<double>(t_count) : 0;
    out.aux = h_count > 0 ? h_sum / static_cast<double>(h_count) : 0;
    out.total = out.translation + out.aux * model.config.aux_loss_scale;
    return out;
}

}  // namespace signtrans
