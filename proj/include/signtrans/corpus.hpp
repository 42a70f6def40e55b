// Parallel corpus and dictionary ingestion.
//
// Corpus files are UTF-8 TSV, one sample per line, columns declared by the
// caller out of {text, gloss, hamnosys, handshape}. HamNoSys strings are raw
// Unicode code points with '|' separating the per-sign segments. Loaded data
// is immutable afterward and safe to share across threads.
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "signtrans/rng.hpp"
#include "signtrans/utf8.hpp"

namespace signtrans {

// Validation failures that a user can fix (bad config, bad file contents).
// The CLI maps these to exit code 1, everything else to 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* kSignSeparator = "|";

struct ParallelSample {
    std::string source_text;
    std::vector<std::string> gloss;
    std::vector<std::string> hamnosys;    // code-point symbols incl. '|' separators
    std::vector<std::string> handshapes;  // one symbol per gloss
};

enum class Column { text, gloss, hamnosys, handshape };

inline Column column_from_string(const std::string& s) {
    if (s == "text") return Column::text;
    if (s == "gloss") return Column::gloss;
    if (s == "hamnosys") return Column::hamnosys;
    if (s == "handshape") return Column::handshape;
    throw ValidationError("unknown corpus column: '" + s + "'");
}

inline std::string to_string(Column c) {
    switch (c) {
        case Column::text: return "text";
        case Column::gloss: return "gloss";
        case Column::hamnosys: return "hamnosys";
        case Column::handshape: return "handshape";
    }
    return "?";
}

// "text,gloss,handshape" -> column list.
inline std::vector<Column> parse_columns(const std::string& spec) {
    std::vector<Column> cols;
    std::string cur;
    std::stringstream ss(spec);
    while (std::getline(ss, cur, ',')) cols.push_back(column_from_string(cur));
    if (cols.empty()) throw ValidationError("empty column spec");
    return cols;
}

inline std::vector<std::string> split_whitespace(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(s);
    while (ss >> cur) out.push_back(cur);
    return out;
}

// Number of '|'-delimited segments in a symbol list. Empty segments count;
// the loader treats them as misalignment.
inline size_t hamnosys_segment_count(const std::vector<std::string>& symbols) {
    if (symbols.empty()) return 0;
    size_t segments = 1;
    for (const auto& s : symbols) {
        if (s == kSignSeparator) ++segments;
    }
    return segments;
}

inline bool hamnosys_has_empty_segment(const std::vector<std::string>& symbols) {
    if (symbols.empty()) return false;
    if (symbols.front() == kSignSeparator || symbols.back() == kSignSeparator) return true;
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
        if (symbols[i] == kSignSeparator && symbols[i + 1] == kSignSeparator) return true;
    }
    return false;
}

struct CorpusWarnings {
    std::vector<std::string> messages;
    size_t dropped = 0;

    void drop(size_t line, const std::string& why) {
        ++dropped;
        messages.push_back("line " + std::to_string(line) + ": sample dropped (" + why + ")");
    }
};

// Trailing decimal digits removed; an all-digit token is left unchanged.
inline std::string strip_gloss_variants(const std::string& gloss) {
    if (gloss.empty()) throw std::invalid_argument("strip_gloss_variants: empty token");
    size_t end = gloss.size();
    while (end > 0 && gloss[end - 1] >= '0' && gloss[end - 1] <= '9') --end;
    if (end == 0) return gloss;  // all digits
    return gloss.substr(0, end);
}

// One ParallelSample per non-empty line. Malformed lines (wrong column count,
// invalid UTF-8) raise; samples violating the gloss/hamnosys/handshape
// alignment invariants are dropped with a warning.
inline std::vector<ParallelSample> load_corpus(const std::string& path,
                                               const std::vector<Column>& columns,
                                               CorpusWarnings* warnings = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open corpus file: " + path);
    CorpusWarnings local;
    CorpusWarnings& warn = warnings ? *warnings : local;

    std::vector<ParallelSample> samples;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t bad = utf8::find_invalid(line);
        if (bad != std::string::npos) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": invalid UTF-8 at byte " + std::to_string(bad));
        }
        std::vector<std::string> fields;
        std::string field;
        std::stringstream ss(line);
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (line.back() == '\t') fields.push_back("");
        if (fields.size() != columns.size()) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(columns.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        }

        ParallelSample s;
        bool has_gloss = false, has_hamnosys = false, has_handshape = false;
        for (size_t i = 0; i < columns.size(); ++i) {
            switch (columns[i]) {
                case Column::text: s.source_text = fields[i]; break;
                case Column::gloss:
                    s.gloss = split_whitespace(fields[i]);
                    has_gloss = true;
                    break;
                case Column::hamnosys:
                    s.hamnosys = utf8::split_codepoints(fields[i]);
                    has_hamnosys = true;
                    break;
                case Column::handshape:
                    s.handshapes = split_whitespace(fields[i]);
                    has_handshape = true;
                    break;
            }
        }

        if (s.source_text.empty()) {
            warn.drop(lineno, "empty source text");
            continue;
        }
        if (has_gloss && has_handshape && s.handshapes.size() != s.gloss.size()) {
            warn.drop(lineno, "handshape count " + std::to_string(s.handshapes.size()) +
                                  " != gloss count " + std::to_string(s.gloss.size()));
            continue;
        }
        if (has_gloss && has_hamnosys) {
            if (hamnosys_has_empty_segment(s.hamnosys) ||
                hamnosys_segment_count(s.hamnosys) != s.gloss.size()) {
                warn.drop(lineno, "hamnosys segments " +
                                      std::to_string(hamnosys_segment_count(s.hamnosys)) +
                                      " do not align with " + std::to_string(s.gloss.size()) +
                                      " glosses");
                continue;
            }
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

struct DictionaryEntry {
    std::vector<std::string> hamnosys;  // one sign's symbols, no separators
    std::string handshape;
};

struct SignDictionary {
    std::map<std::string, DictionaryEntry> entries;  // keyed by variant-stripped gloss

    const DictionaryEntry* find(const std::string& gloss) const {
        auto it = entries.find(strip_gloss_variants(gloss));
        return it == entries.end() ? nullptr : &it->second;
    }
};

// TSV lines: gloss <TAB> hamnosys string <TAB> hand-shape symbol.
// Duplicate keys: last entry wins, with a warning.
inline SignDictionary load_dictionary(const std::string& path,
                                      CorpusWarnings* warnings = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open dictionary file: " + path);
    CorpusWarnings local;
    CorpusWarnings& warn = warnings ? *warnings : local;

    SignDictionary dict;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t bad = utf8::find_invalid(line);
        if (bad != std::string::npos) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": invalid UTF-8 at byte " + std::to_string(bad));
        }
        std::vector<std::string> fields;
        std::string field;
        std::stringstream ss(line);
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected 3 non-empty fields (gloss, hamnosys, handshape)");
        }
        std::string key = strip_gloss_variants(fields[0]);
        if (dict.entries.count(key)) {
            warn.messages.push_back("line " + std::to_string(lineno) + ": duplicate gloss '" +
                                    key + "', keeping the later entry");
        }
        dict.entries[key] =
            DictionaryEntry{utf8::split_codepoints(fields[1]), fields[2]};
    }
    return dict;
}

// Token/id bijection with four reserved entries at fixed positions.
class Vocabulary {
   public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kBos = 1;
    static constexpr int32_t kEos = 2;
    static constexpr int32_t kUnk = 3;

    static const std::vector<std::string>& reserved_tokens() {
        static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>"};
        return r;
    }

    Vocabulary() {
        for (const auto& t : reserved_tokens()) push(t);
    }

    int32_t id_of(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    const std::string& token_of(int32_t id) const {
        if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
            throw std::out_of_range("token id " + std::to_string(id) + " out of range");
        }
        return id_to_token_[static_cast<size_t>(id)];
    }

    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
    size_t size() const { return id_to_token_.size(); }

    std::vector<int32_t> encode(const std::vector<std::string>& tokens) const {
        std::vector<int32_t> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<int32_t>& ids) const {
        std::vector<std::string> tokens;
        tokens.reserve(ids.size());
        for (int32_t id : ids) tokens.push_back(token_of(id));
        return tokens;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"tokens", id_to_token_}};
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        auto tokens = j.at("tokens").get<std::vector<std::string>>();
        if (tokens.size() < reserved_tokens().size()) {
            throw ValidationError("vocabulary file is missing the reserved tokens");
        }
        Vocabulary v;
        for (size_t i = reserved_tokens().size(); i < tokens.size(); ++i) v.push(tokens[i]);
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write vocabulary file: " + path);
        f << to_json().dump(2) << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ValidationError("cannot open vocabulary file: " + path);
        nlohmann::json j;
        f >> j;
        return from_json(j);
    }

    friend Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>&);

   private:
    void push(const std::string& token) {
        token_to_id_.emplace(token, static_cast<int32_t>(id_to_token_.size()));
        id_to_token_.push_back(token);
    }

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;
};

// Non-reserved tokens sorted by (descending frequency, then lexicographic)
// and assigned ids from 4 upward.
inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& sequences) {
    std::map<std::string, int64_t> freq;
    for (const auto& seq : sequences) {
        for (const auto& t : seq) ++freq[t];
    }
    for (const auto& r : Vocabulary::reserved_tokens()) freq.erase(r);

    std::vector<std::pair<std::string, int64_t>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    for (const auto& [token, count] : entries) v.push(token);
    return v;
}

// One encoded training example. Target sequences carry no BOS/EOS here; the
// model inserts them. aux aligns 1:1 with target positions, PAD = ignore.
struct EncodedSample {
    std::string id;  // referenced by contextual embedding records
    std::vector<int32_t> source;
    std::vector<int32_t> target;
    std::vector<int32_t> aux;  // empty when the aux head is off
};

// Row-major padded batch. mask entries: 1 = real token, 0 = PAD.
struct Batch {
    size_t size = 0;        // sentences
    size_t src_width = 0;   // padded source length
    size_t tgt_width = 0;   // padded target length
    std::vector<int32_t> src;       // size * src_width
    std::vector<uint8_t> src_mask;  // size * src_width
    std::vector<int32_t> tgt;       // size * tgt_width
    std::vector<uint8_t> tgt_mask;  // size * tgt_width
    std::vector<int32_t> aux;       // size * tgt_width, PAD where ignored; empty if no aux
    std::vector<std::string> ids;   // per-row sample ids

    std::vector<int32_t> src_row(size_t i) const {
        return {src.begin() + i * src_width, src.begin() + (i + 1) * src_width};
    }
    std::vector<int32_t> tgt_row(size_t i) const {
        return {tgt.begin() + i * tgt_width, tgt.begin() + (i + 1) * tgt_width};
    }
};

// Shuffles with the given seed, groups, and right-pads with PAD. Identical
// inputs and seed give a byte-identical batch stream.
inline std::vector<Batch> make_batches(const std::vector<EncodedSample>& samples,
                                       size_t batch_size, uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    bool has_aux = false;
    for (const auto& s : samples) has_aux = has_aux || !s.aux.empty();

    std::vector<Batch> batches;
    for (size_t begin = 0; begin < order.size(); begin += batch_size) {
        size_t end = std::min(begin + batch_size, order.size());
        Batch b;
        b.size = end - begin;
        for (size_t k = begin; k < end; ++k) {
            const auto& s = samples[order[k]];
            b.src_width = std::max(b.src_width, s.source.size());
            b.tgt_width = std::max(b.tgt_width, s.target.size());
        }
        b.src.assign(b.size * b.src_width, Vocabulary::kPad);
        b.src_mask.assign(b.size * b.src_width, 0);
        b.tgt.assign(b.size * b.tgt_width, Vocabulary::kPad);
        b.tgt_mask.assign(b.size * b.tgt_width, 0);
        if (has_aux) b.aux.assign(b.size * b.tgt_width, Vocabulary::kPad);
        b.ids.resize(b.size);
        for (size_t row = 0; row < b.size; ++row) {
            const auto& s = samples[order[begin + row]];
            b.ids[row] = s.id;
            for (size_t j = 0; j < s.source.size(); ++j) {
                b.src[row * b.src_width + j] = s.source[j];
                b.src_mask[row * b.src_width + j] = 1;
            }
            for (size_t j = 0; j < s.target.size(); ++j) {
                b.tgt[row * b.tgt_width + j] = s.target[j];
                b.tgt_mask[row * b.tgt_width + j] = 1;
            }
            for (size_t j = 0; j < s.aux.size() && has_aux; ++j) {
                b.aux[row * b.tgt_width + j] = s.aux[j];
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace signtrans
