#include <filesystem>
#include <fstream>
#include <sstream>

#include <catch_amalgamated.hpp>
#include <signtrans/pipeline.hpp>

#include "support/tmpdir.hpp"

using namespace signtrans;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

// Small deterministic corpus: every sentence has at least four glosses so a
// hyp==ref evaluation produces defined 4-gram precision.
const char* kMiniTrain =
    "der hund sieht die katze heute\tHUND SEHEN1 KATZE HEUTE\tαβ|γδε|ζη|θι\th1 h2 h3 h1\n"
    "die katze sieht den hund gern\tKATZE SEHEN1 HUND GERN\tζη|γδε|αβ|κλ\th3 h2 h1 h4\n"
    "der hund mag brot und wasser\tHUND MOEGEN BROT WASSER\tαβ|μν|ξο|πρ\th1 h5 h2 h3\n"
    "die katze mag wasser und brot\tKATZE MOEGEN WASSER BROT\tζη|μν|πρ|ξο\th3 h5 h3 h2\n"
    "heute sieht der hund brot\tHEUTE SEHEN1 HUND BROT\tθι|γδε|αβ|ξο\th1 h2 h1 h2\n"
    "gern mag die katze wasser\tGERN MOEGEN KATZE WASSER\tκλ|μν|ζη|πρ\th4 h5 h3 h3\n"
    "der hund und die katze essen\tHUND KATZE ESSEN2 HEUTE\tαβ|ζη|στ|θι\th1 h3 h6 h1\n"
    "heute essen hund und katze brot\tHEUTE ESSEN2 HUND KATZE\tθι|στ|αβ|ζη\th1 h6 h1 h3\n";

const char* kMiniDev =
    "der hund sieht brot heute\tHUND SEHEN1 BROT HEUTE\tαβ|γδε|ξο|θι\th1 h2 h2 h1\n"
    "die katze mag brot gern\tKATZE MOEGEN BROT GERN\tζη|μν|ξο|κλ\th3 h5 h2 h4\n"
    "heute mag der hund wasser\tHEUTE MOEGEN HUND WASSER\tθι|μν|αβ|πρ\th1 h5 h1 h3\n";

const char* kMiniDict =
    "HUND\tαβ\th1\n"
    "SEHEN\tγδε\th2\n"
    "KATZE\tζη\th3\n"
    "GERN\tκλ\th4\n"
    "MOEGEN\tμν\th5\n"
    "BROT\tξο\th2\n"
    "WASSER\tπρ\th3\n"
    "HEUTE\tθι\th1\n"
    "ESSEN\tστ\th6\n";

ExperimentConfig mini_config(support::TmpDir& tmp) {
    ExperimentConfig cfg;
    cfg.task = "t2g";
    cfg.train_path = tmp.write("train.tsv", kMiniTrain);
    cfg.dev_path = tmp.write("dev.tsv", kMiniDev);
    cfg.dictionary_path = tmp.write("dictionary.tsv", kMiniDict);
    cfg.output_dir = tmp.dir() + "/out";
    cfg.source_tokenizer = {"word", 0};
    cfg.target_tokenizer = {"word", 0};
    cfg.embed_width = 16;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.ff_width = 32;
    cfg.dropout = 0.0;
    cfg.aux_head = true;
    cfg.aux_loss_scale = 0.5;
    cfg.batch_size = 4;
    cfg.max_epochs = 20;
    cfg.max_steps = 30;
    cfg.learning_rate = 1e-3;
    cfg.patience = 50;
    cfg.seed = 7;
    cfg.beam_size = 2;
    cfg.max_len_factor = 1.5;
    return cfg;
}

void run_flow(const ExperimentConfig& cfg, const std::string& hyp, const std::string& report) {
    std::ostringstream log;
    cmd_tokenizer_train(cfg, log);
    cmd_preprocess(cfg, log);
    cmd_train(cfg, log);
    cmd_translate(cfg, checkpoint_best_path(cfg), cfg.dev_path, hyp, log);
    cmd_evaluate(cfg, hyp, cfg.dev_path, report, "dev", log);
}

}  // namespace

TEST_CASE("experiment config defaults survive a json round trip") {
    ExperimentConfig cfg;
    ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(back.task == cfg.task);
    CHECK(back.source_tokenizer.kind == "bpe");
    CHECK(back.source_tokenizer.vocab_size == 2250);
    CHECK(back.target_tokenizer.vocab_size == 7000);
    CHECK(back.embed_width == 64);
    CHECK(back.dropout == 0.2);
    CHECK(back.learning_rate == 1e-4);
    CHECK(back.patience == 5);
    CHECK(back.beam_size == 5);
    CHECK(back.max_len_factor == 1.5);
    CHECK_FALSE(back.t2g2h);
}

TEST_CASE("experiment config parsing reports unknown keys and bad types together") {
    nlohmann::json j{{"task", "t2g"},
                     {"typo_section", 1},
                     {"model", {{"embed_width", "wide"}, {"bogus", true}}},
                     {"training", {{"batch_size", 8}}}};
    try {
        ExperimentConfig::from_json(j);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("config.typo_section: unknown key") != std::string::npos);
        CHECK(msg.find("model.embed_width: wrong type") != std::string::npos);
        CHECK(msg.find("model.bogus: unknown key") != std::string::npos);
    }
}

TEST_CASE("experiment config validation collects every violation") {
    ExperimentConfig cfg;
    cfg.task = "g2t";
    cfg.columns = "text";
    cfg.embed_width = 30;
    cfg.num_heads = 4;
    cfg.batch_size = 0;
    cfg.beam_size = 0;
    cfg.t2g2h = true;
    cfg.train_path = "/no/such/file.tsv";
    try {
        cfg.validate();
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("task:") != std::string::npos);
        CHECK(msg.find("divisible") != std::string::npos);
        CHECK(msg.find("batch_size") != std::string::npos);
        CHECK(msg.find("beam_size") != std::string::npos);
        CHECK(msg.find("t2g2h") != std::string::npos);
        CHECK(msg.find("paths.dictionary") != std::string::npos);
        CHECK(msg.find("paths.train: file not found") != std::string::npos);
    }
}

TEST_CASE("task-dependent column requirements") {
    ExperimentConfig cfg;
    cfg.task = "t2h";
    cfg.columns = "text,gloss";
    CHECK_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("hamnosys"));
    cfg.task = "t2g";
    cfg.aux_head = true;
    CHECK_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("handshape"));
}

TEST_CASE("config file loading rejects malformed json with the path in the message") {
    support::TmpDir tmp("cfgload");
    auto path = tmp.write("broken.json", "{ not json");
    CHECK_THROWS_AS(ExperimentConfig::load(path), ValidationError);
    CHECK_THROWS_WITH(ExperimentConfig::load(path),
                      Catch::Matchers::ContainsSubstring("broken.json"));
    CHECK_THROWS_WITH(ExperimentConfig::load(tmp.dir() + "/absent.json"),
                      Catch::Matchers::ContainsSubstring("cannot open"));
}

TEST_CASE("toy corpus generation is deterministic and loadable") {
    support::TmpDir tmp("toygen");
    auto paths = write_toy_corpus(tmp.dir() + "/a");
    auto again = write_toy_corpus(tmp.dir() + "/b");
    CHECK(slurp(paths.train) == slurp(again.train));
    CHECK(slurp(paths.dev) == slurp(again.dev));
    CHECK(slurp(paths.test) == slurp(again.test));
    CHECK(slurp(paths.dictionary) == slurp(again.dictionary));

    auto columns = parse_columns("text,gloss,hamnosys,handshape");
    CorpusWarnings warnings;
    auto train = load_corpus(paths.train, columns, &warnings);
    CHECK(train.size() == 200);
    CHECK(warnings.dropped == 0);
    CHECK(load_corpus(paths.dev, columns, &warnings).size() == 40);
    CHECK(load_corpus(paths.test, columns, &warnings).size() == 40);

    SignDictionary dict = load_dictionary(paths.dictionary);
    for (const auto& s : train) {
        REQUIRE(s.gloss.size() == s.handshapes.size());
        for (size_t i = 0; i < s.gloss.size(); ++i) {
            const DictionaryEntry* e = dict.find(s.gloss[i]);
            REQUIRE(e != nullptr);
            CHECK(e->handshape == s.handshapes[i]);
        }
    }
}

TEST_CASE("toy glosses map one-to-one onto dictionary signs") {
    support::TmpDir tmp("toydict");
    auto paths = write_toy_corpus(tmp.dir());
    SignDictionary dict = load_dictionary(paths.dictionary);
    CHECK(dict.entries.size() == toy::content_words().size());
    auto columns = parse_columns("text,gloss,hamnosys,handshape");
    for (const auto& s : load_corpus(paths.train, columns, nullptr)) {
        GlossConversion conv = gloss_to_hamnosys(s.gloss, dict);
        CHECK(conv.missing == 0);
        CHECK(conv.tokens == s.hamnosys);
    }
}

TEST_CASE("target words for t2g carry gloss-level hand shapes") {
    ParallelSample s;
    s.gloss = {"HUND", "SEHEN1"};
    s.handshapes = {"h1", "h2"};
    auto tw = target_words_for(s, Task::t2g, true);
    CHECK(tw.words == s.gloss);
    CHECK(tw.aux == s.handshapes);
    CHECK(target_words_for(s, Task::t2g, false).aux.empty());
}

TEST_CASE("target words for t2h label each symbol with its sign's hand shape") {
    ParallelSample s;
    s.hamnosys = {"α", "β", "|", "γ"};
    s.handshapes = {"h1", "h2"};
    auto tw = target_words_for(s, Task::t2h, true);
    std::vector<std::string> expected{"h1", "h1", "", "h2"};
    CHECK(tw.words == s.hamnosys);
    CHECK(tw.aux == expected);
}

TEST_CASE("encode_target matches whole-text encoding for every tokenizer kind") {
    TargetWords tw;
    tw.words = {"HUND", "SEHEN1", "KATZE"};
    tw.aux = {"h1", "h2", "h3"};
    std::string text = join(tw.words);

    std::vector<TokenSeq> corpus;
    for (const auto& w : tw.words) corpus.push_back(tokenize_word(w));

    for (const char* kind : {"word", "char", "bpe", "wordpiece"}) {
        TokenizerModel tok;
        if (std::string(kind) == "bpe") {
            tok = bpe_train(corpus, 12);
        } else {
            tok.kind = tokenizer_kind_from_string(kind);
            if (tok.kind == TokenizerKind::wordpiece) {
                tok.vocab = {"HUND", "SE", "##HEN1", "K", "##A", "##T", "##Z", "##E"};
            }
        }
        INFO("kind " << kind);
        EncodedTarget enc = encode_target(tok, tw);
        CHECK(enc.tokens == encode(tok, text));
        REQUIRE(enc.aux.size() == enc.tokens.size());
        // Pieces inherit their word's label; inserted space markers carry none.
        for (size_t i = 0; i < enc.tokens.size(); ++i) {
            if (enc.tokens[i] == tok.space_token && tok.kind == TokenizerKind::character) {
                CHECK(enc.aux[i] == "");
            } else {
                CHECK(!enc.aux[i].empty());
            }
        }
    }
}

TEST_CASE("encoded tsv round trips ids and aux labels") {
    support::TmpDir tmp("enc");
    std::vector<EncodedSample> samples{{"train-0", {5, 6, 7}, {8, 9}, {4, 0}},
                                       {"train-1", {10}, {11, 12, 13}, {5, 5, 0}}};
    auto path = tmp.file("encoded.tsv");
    write_encoded(path, samples, true);
    auto back = read_encoded(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "train-0");
    CHECK(back[0].source == samples[0].source);
    CHECK(back[0].target == samples[0].target);
    CHECK(back[0].aux == samples[0].aux);
    CHECK(back[1].aux == samples[1].aux);

    write_encoded(path, samples, false);
    back = read_encoded(path);
    CHECK(back[0].aux.empty());
    CHECK(back[1].aux.empty());

    tmp.write("bad.tsv", "x-0\t1 2\t3\n");
    CHECK_THROWS_WITH(read_encoded(tmp.dir() + "/bad.tsv"),
                      Catch::Matchers::ContainsSubstring("4 tab-separated fields"));
    tmp.write("bad2.tsv", "x-0\t1 2\t3 4\t5\n");
    CHECK_THROWS_WITH(read_encoded(tmp.dir() + "/bad2.tsv"),
                      Catch::Matchers::ContainsSubstring("aux ids do not align"));
}

TEST_CASE("five-command flow produces scoreable artifacts deterministically") {
    support::TmpDir tmp("flow");
    ExperimentConfig cfg = mini_config(tmp);
    std::string hyp = cfg.output_dir + "/hyp.dev.txt";
    std::string report = cfg.output_dir + "/report.dev.json";

    run_flow(cfg, hyp, report);
    for (const char* artifact :
         {"tokenizer.src.json", "tokenizer.tgt.json", "vocab.src.json", "vocab.tgt.json",
          "vocab.handshape.json", "encoded.train.tsv", "encoded.dev.tsv",
          "preprocess.meta.json", "checkpoint.best.bin", "checkpoint.last.bin",
          "loss_log.json", "hyp.dev.txt", "hyp.dev.txt.meta.json", "report.dev.json"}) {
        INFO(artifact);
        CHECK(std::filesystem::exists(cfg.output_dir + "/" + artifact));
    }
    std::string first_hyp = slurp(hyp);
    std::string first_report = slurp(report);
    CHECK(std::count(first_hyp.begin(), first_hyp.end(), '\n') == 3);

    nlohmann::json rj = nlohmann::json::parse(first_report);
    CHECK(rj.contains("bleu4"));
    CHECK(rj["experiment"]["training"]["seed"] == 7);
    CHECK(rj["task"] == "t2g");

    std::filesystem::remove_all(cfg.output_dir);
    run_flow(cfg, hyp, report);
    CHECK(slurp(hyp) == first_hyp);
    CHECK(slurp(report) == first_report);
}

TEST_CASE("evaluating a perfect hypothesis file scores 100 everywhere") {
    support::TmpDir tmp("perfect");
    ExperimentConfig cfg = mini_config(tmp);
    std::ostringstream log;
    cmd_tokenizer_train(cfg, log);

    auto columns = parse_columns(cfg.columns);
    auto dev = load_corpus(cfg.dev_path, columns, nullptr);
    std::string perfect;
    for (const auto& s : dev) perfect += join(s.gloss) + "\n";
    auto hyp = tmp.write("perfect.txt", perfect);

    auto result = cmd_evaluate(cfg, hyp, cfg.dev_path, tmp.file("report.json"), "dev", log);
    for (double b : result.report.bleu) CHECK(b == Catch::Approx(100.0));
    CHECK(result.report.rouge_l == Catch::Approx(100.0));
    CHECK(result.report.length_ratio == Catch::Approx(1.0));
}

TEST_CASE("evaluate rejects hypothesis and reference files of different size") {
    support::TmpDir tmp("mismatch");
    ExperimentConfig cfg = mini_config(tmp);
    std::ostringstream log;
    auto hyp = tmp.write("short.txt", "HUND SEHEN1\n");
    CHECK_THROWS_WITH(cmd_evaluate(cfg, hyp, cfg.dev_path, tmp.file("r.json"), "dev", log),
                      Catch::Matchers::ContainsSubstring("mismatch"));
}

TEST_CASE("translate refuses a checkpoint from a different tokenizer") {
    support::TmpDir tmp("stale");
    ExperimentConfig cfg = mini_config(tmp);
    std::string hyp = cfg.output_dir + "/hyp.dev.txt";
    std::ostringstream log;
    cmd_tokenizer_train(cfg, log);
    cmd_preprocess(cfg, log);
    cmd_train(cfg, log);

    // Regrow the target tokenizer with a different scheme; the stored hash
    // no longer matches.
    ExperimentConfig changed = cfg;
    changed.target_tokenizer = {"char", 0};
    cmd_tokenizer_train(changed, log);
    CHECK_THROWS_WITH(cmd_translate(cfg, checkpoint_best_path(cfg), cfg.dev_path, hyp, log),
                      Catch::Matchers::ContainsSubstring("different tokenizer"));

    // Restoring the original tokenizer makes the checkpoint usable again.
    cmd_tokenizer_train(cfg, log);
    CHECK_NOTHROW(cmd_translate(cfg, checkpoint_best_path(cfg), cfg.dev_path, hyp, log));
}

TEST_CASE("t2g2h scoring lengthens the effective reference") {
    support::TmpDir tmp("t2g2h");
    ExperimentConfig cfg = mini_config(tmp);
    std::ostringstream log;
    cmd_tokenizer_train(cfg, log);

    auto columns = parse_columns(cfg.columns);
    auto dev = load_corpus(cfg.dev_path, columns, nullptr);
    std::string perfect;
    for (const auto& s : dev) perfect += join(s.gloss) + "\n";
    auto hyp = tmp.write("hyp.txt", perfect);

    auto gloss_level = cmd_evaluate(cfg, hyp, cfg.dev_path, tmp.file("g.json"), "dev", log);
    ExperimentConfig through = cfg;
    through.t2g2h = true;
    auto symbol_level =
        cmd_evaluate(through, hyp, cfg.dev_path, tmp.file("h.json"), "dev", log);

    CHECK(symbol_level.report.ref_len > gloss_level.report.ref_len);
    CHECK(symbol_level.report.bleu[3] == Catch::Approx(100.0));
    CHECK(symbol_level.missing_hyp_glosses == 0);
    CHECK(symbol_level.missing_ref_glosses == 0);

    nlohmann::json rj = nlohmann::json::parse(slurp(tmp.dir() + "/h.json"));
    CHECK(rj["t2g2h"] == true);
    CHECK(rj["missing_hyp_glosses"] == 0);
}

TEST_CASE("t2g2h counts glosses missing from the dictionary") {
    support::TmpDir tmp("missing");
    ExperimentConfig cfg = mini_config(tmp);
    cfg.t2g2h = true;
    std::ostringstream log;

    auto columns = parse_columns(cfg.columns);
    auto dev = load_corpus(cfg.dev_path, columns, nullptr);
    std::string lines;
    for (size_t i = 0; i < dev.size(); ++i) {
        lines += i == 0 ? "UNBEKANNT SEHEN1 BROT HEUTE\n" : join(dev[i].gloss) + "\n";
    }
    auto hyp = tmp.write("hyp.txt", lines);
    auto result = cmd_evaluate(cfg, hyp, cfg.dev_path, tmp.file("r.json"), "dev", log);
    CHECK(result.missing_hyp_glosses == 1);
    CHECK(result.missing_ref_glosses == 0);
}

TEST_CASE("toy preset trains the paper-shaped small model over relative paths") {
    ExperimentConfig cfg = toy_experiment("toy-preset-check");
    CHECK(cfg.task == "t2g");
    CHECK(cfg.embed_width == 64);
    CHECK(cfg.num_layers == 2);
    CHECK(cfg.num_heads == 2);
    CHECK(cfg.max_steps == 3000);
    CHECK(cfg.aux_head);
    CHECK(cfg.train_path == "toy-preset-check/data/train.tsv");
    CHECK(std::filesystem::exists(cfg.train_path));
    CHECK_NOTHROW(cfg.validate());
    std::filesystem::remove_all("toy-preset-check");
}
