#pragma once

// The `synlm` command line. Every run prints its resolved configuration as
// the first JSON line on stdout, then one JSON record per result.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "synlm/beam.hpp"
#include "synlm/checkpoint.hpp"
#include "synlm/error.hpp"
#include "synlm/eval.hpp"
#include "synlm/format.hpp"
#include "synlm/model.hpp"
#include "synlm/synthdata.hpp"
#include "synlm/testing/selftest.hpp"
#include "synlm/train.hpp"
#include "synlm/transitions.hpp"
#include "synlm/treebank.hpp"
#include "synlm/vocab.hpp"

namespace synlm::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

struct Globals {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool float64 = false;
    std::string log_level = "warn";
};

struct BeamFlags {
    std::size_t action_beam = 100;
    std::size_t word_beam = 10;
    std::size_t fast_track = 5;
    std::size_t max_struct_per_word = 16;

    void attach(CLI::App* app) {
        app->add_option("--action-beam", action_beam, "action-level beam size");
        app->add_option("--word-beam", word_beam, "word-level beam size");
        app->add_option("--fast-track", fast_track, "word-emitting candidates admitted directly");
        app->add_option("--max-struct", max_struct_per_word, "structural actions allowed between words");
    }

    BeamConfig resolve() const {
        BeamConfig b;
        b.action_beam = action_beam;
        b.word_beam = word_beam;
        b.fast_track = fast_track;
        b.max_struct_per_word = max_struct_per_word;
        b.validate();
        return b;
    }
};

class Emitter {
   public:
    explicit Emitter(std::ostream& out) : out_(out) {}
    void operator()(const nlohmann::json& record) { out_ << round_numbers(record).dump() << '\n'; }

   private:
    std::ostream& out_;
};

inline std::string join_words(const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return s;
}

inline LogLevel parse_log_level(const std::string& s) {
    if (s == "debug") return LogLevel::Debug;
    if (s == "info") return LogLevel::Info;
    if (s == "warn") return LogLevel::Warn;
    if (s == "error") return LogLevel::Error;
    if (s == "off") return LogLevel::Off;
    throw Error(Errc::BadConfig, "unknown log level " + s);
}

inline nlohmann::json globals_json(const Globals& g) {
    return {{"seed", g.seed}, {"threads", g.threads}, {"float64", g.float64}, {"log_level", g.log_level}};
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write " + path);
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

struct OracleCmd {
    std::string trees, out;

    int run(const Globals& g, Emitter& emit) {
        emit({{"command", "oracle"}, {"config", {{"trees", trees}, {"out", out}, {"globals", globals_json(g)}}}});
        auto f = open_output(out);
        std::size_t n = 0;
        std::ifstream in(trees);
        if (!in) throw Error(Errc::Io, "cannot open treebank " + trees);
        for_each_tree(in, [&](Tree t) {
            const ActionSequence a = oracle(t);
            if (reconstruct(a) != t) throw Error(Errc::IllegalAction, "oracle round trip failed on sentence " + std::to_string(n + 1));
            f << render_oracle_line(a) << '\n';
            ++n;
        });
        emit({{"sentences", n}, {"roundtrip_ok", true}});
        return kOk;
    }
};

struct VocabCmd {
    std::string trees, out_dir;
    std::size_t min_count = 1;

    int run(const Globals& g, Emitter& emit) {
        emit({{"command", "vocab"},
              {"config", {{"trees", trees}, {"out_dir", out_dir}, {"min_count", min_count}, {"globals", globals_json(g)}}}});
        const Vocabulary v = Vocabulary::build(read_treebank_file(trees), min_count);
        std::filesystem::create_directories(out_dir);
        v.tokens().save(out_dir + "/tokens.txt");
        v.joint.save(out_dir + "/actions.txt");
        v.ngrams.save(out_dir + "/ngrams.txt");
        emit({{"tokens", v.tokens().size()}, {"actions", v.joint.size()}, {"ngrams", v.ngrams.size()}});
        return kOk;
    }
};

struct TrainCmd {
    std::string variant, trees, dev, config_path, out, metrics;
    std::size_t min_count = 1;
    std::optional<std::size_t> hidden, heads, layers, max_len, batch_size, max_epochs, max_steps, patience;
    std::optional<double> lr, dropout, scaffold_weight, grad_clip;
    std::optional<std::string> normalization;

    void attach(CLI::App* app) {
        app->add_option("--variant", variant, "lm, sclm-past, sclm-next, plm or plm-mask")->required();
        app->add_option("--trees", trees, "training treebank")->required();
        app->add_option("--dev", dev, "development treebank for early stopping");
        app->add_option("--config", config_path, "JSON file with \"model\" and \"train\" sections");
        app->add_option("--out", out, "checkpoint path")->required();
        app->add_option("--metrics", metrics, "also write metrics records here");
        app->add_option("--min-count", min_count, "word frequency threshold");
        app->add_option("--hidden", hidden);
        app->add_option("--heads", heads);
        app->add_option("--layers", layers);
        app->add_option("--max-len", max_len);
        app->add_option("--dropout", dropout);
        app->add_option("--scaffold-weight", scaffold_weight);
        app->add_option("--lr", lr);
        app->add_option("--batch-size", batch_size);
        app->add_option("--max-epochs", max_epochs);
        app->add_option("--max-steps", max_steps);
        app->add_option("--patience", patience);
        app->add_option("--grad-clip", grad_clip);
        app->add_option("--normalization", normalization, "per-token or per-sequence");
    }

    std::pair<ModelConfig, TrainConfig> resolve(const Globals& g, const Vocabulary& vocab) const {
        nlohmann::json file = nlohmann::json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw Error(Errc::Io, "cannot open config " + config_path);
            try {
                file = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw Error(Errc::BadConfig, "config " + config_path + ": " + e.what());
            }
        }
        ModelConfig m = model_config_from_json(file.value("model", nlohmann::json::object()));
        TrainConfig t = train_config_from_json(file.value("train", nlohmann::json::object()));
        m.variant = parse_variant(variant);
        if (hidden) m.hidden = *hidden;
        if (heads) m.heads = *heads;
        if (layers) m.layers = *layers;
        if (max_len) m.max_len = *max_len;
        if (dropout) m.dropout = *dropout;
        if (scaffold_weight) m.scaffold_weight = *scaffold_weight;
        m.vocab_size = is_plm(m.variant) ? vocab.joint.size() : vocab.tokens().size();
        m.ngram_vocab_size = is_sclm(m.variant) ? vocab.ngrams.size() : 0;
        if (lr) t.lr = *lr;
        if (batch_size) t.batch_size = *batch_size;
        if (max_epochs) t.max_epochs = *max_epochs;
        if (max_steps) t.max_steps = *max_steps;
        if (patience) t.patience = *patience;
        if (grad_clip) t.grad_clip = *grad_clip;
        if (normalization) t = train_config_from_json([&] {
                               auto j = to_json(t);
                               j["normalization"] = *normalization;
                               return j;
                           }());
        t.seed = g.seed;
        m.validate();
        t.validate();
        return {m, t};
    }

    template <typename T>
    int run(const Globals& g, Emitter& emit) {
        const std::vector<Tree> train_trees = read_treebank_file(trees);
        const std::vector<Tree> dev_trees = dev.empty() ? std::vector<Tree>{} : read_treebank_file(dev);
        Vocabulary vocab = Vocabulary::build(train_trees, min_count);
        auto [mc, tc] = resolve(g, vocab);
        emit({{"command", "train"},
              {"config",
               {{"model", to_json(mc)},
                {"train", to_json(tc)},
                {"trees", trees},
                {"dev", dev},
                {"out", out},
                {"min_count", min_count},
                {"globals", globals_json(g)}}}});
        auto examples = [&](const std::vector<Tree>& ts) {
            std::vector<Example> ex;
            ex.reserve(ts.size());
            for (const Tree& t : ts) {
                ex.push_back(make_example(mc, vocab, t));
                if (ex.back().inputs.size() > mc.max_len) {
                    throw Error(Errc::TooLong, "sequence of " + std::to_string(ex.back().inputs.size()) +
                                                   " positions exceeds max_len " + std::to_string(mc.max_len));
                }
            }
            return ex;
        };
        const auto train_ex = examples(train_trees);
        const auto dev_ex = examples(dev_trees);
        Transformer<T> model(mc, g.seed);
        Trainer<T> trainer(model, tc);
        std::ofstream metrics_out;
        if (!metrics.empty()) metrics_out = open_output(metrics);
        Emitter metrics_emit(metrics_out);
        auto summary = trainer.fit(train_ex, dev_ex, [&](const EpochRecord& r) {
            emit(to_json(r));
            if (metrics_out.is_open()) metrics_emit(to_json(r));
        });
        nlohmann::json result = {{"steps", summary.steps},
                                 {"epochs", summary.epochs},
                                 {"best_epoch", summary.best_epoch},
                                 {"early_stopped", summary.early_stopped},
                                 {"parameters", parameter_count(mc)}};
        if (!dev_ex.empty()) result["best_dev_loss"] = summary.best_dev_loss;
        Checkpoint<T> ck{std::move(model), std::move(vocab), round_numbers({{"train", to_json(tc)}, {"result", result}})};
        save_checkpoint(out, ck);
        emit({{"checkpoint", out}, {"result", result}});
        return kOk;
    }
};

struct ParseCmd {
    std::string ckpt;
    std::vector<std::string> sentences;
    std::string sentence_file;
    BeamFlags beam;

    template <typename T>
    int run(const Globals& g, Emitter& emit) {
        const BeamConfig bc = beam.resolve();
        emit({{"command", "parse"},
              {"config", {{"ckpt", ckpt}, {"beam_config", to_json(bc)}, {"globals", globals_json(g)}}}});
        auto ck = load_checkpoint<T>(ckpt);
        std::vector<std::vector<std::string>> inputs;
        for (const auto& s : sentences) inputs.push_back(detail::split_words(s));
        if (!sentence_file.empty()) {
            std::ifstream in(sentence_file);
            if (!in) throw Error(Errc::Io, "cannot open " + sentence_file);
            std::string line;
            while (std::getline(in, line)) {
                auto w = detail::split_words(line);
                if (!w.empty()) inputs.push_back(std::move(w));
            }
        }
        if (inputs.empty()) throw Error(Errc::IncompleteSequence, "no sentences given");
        std::vector<ParseResult> results(inputs.size());
        parallel_for(inputs.size(), g.threads, [&](std::size_t i) {
            ModelScorer<T> scorer(ck.model, ck.vocab.joint);
            results[i] = parse(scorer, inputs[i], bc);
        });
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            emit({{"sentence", join_words(inputs[i])},
                  {"tree", render_tree(results[i].tree)},
                  {"logp", results[i].logp},
                  {"beam_config", to_json(bc)}});
        }
        return kOk;
    }
};

struct SurprisalCmd {
    std::string ckpt, prefix, continuation;
    BeamFlags beam;

    template <typename T>
    int run(const Globals& g, Emitter& emit) {
        const BeamConfig bc = beam.resolve();
        emit({{"command", "surprisal"},
              {"config", {{"ckpt", ckpt}, {"beam_config", to_json(bc)}, {"globals", globals_json(g)}}}});
        auto ck = load_checkpoint<T>(ckpt);
        TransformerLM<T> lm(ck.model, ck.vocab, bc);
        const auto p = detail::split_words(prefix);
        const auto c = detail::split_words(continuation);
        const double bits = surprisal(lm, p, c);
        nlohmann::json rec = {{"prefix", join_words(p)}, {"continuation", join_words(c)}, {"surprisal_bits", bits}};
        rec["beam_config"] = is_plm(ck.model.config().variant) ? to_json(bc) : nlohmann::json(nullptr);
        emit(rec);
        return kOk;
    }
};

struct EvalSuiteCmd {
    std::string ckpt;
    std::vector<std::string> suites;
    std::size_t limit = 0;
    BeamFlags beam;

    template <typename T>
    int run(const Globals& g, Emitter& emit) {
        const BeamConfig bc = beam.resolve();
        emit({{"command", "eval-suite"},
              {"config",
               {{"ckpt", ckpt}, {"suites", suites}, {"limit", limit}, {"beam_config", to_json(bc)}, {"globals", globals_json(g)}}}});
        auto ck = load_checkpoint<T>(ckpt);
        TransformerLM<T> lm(ck.model, ck.vocab, bc);
        std::vector<SuiteItem> items;
        for (const auto& path : suites) {
            auto part = read_suite_file(path, limit);
            items.insert(items.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
        const SuiteReport r = eval_suite(lm, items, g.threads);
        for (const auto& o : r.outcomes) {
            nlohmann::json conds = nlohmann::json::array();
            for (const auto& c : o.conditions) conds.push_back({{"left_bits", c.left}, {"right_bits", c.right}, {"holds", c.holds}});
            emit({{"item_id", o.item_id}, {"suite", o.suite}, {"pass", o.pass}, {"conditions", conds}});
        }
        nlohmann::json per = nlohmann::json::object();
        for (const auto& [name, s] : r.suites) per[name] = {{"items", s.items}, {"passed", s.passed}, {"accuracy", s.accuracy()}};
        emit({{"summary", {{"items", items.size()}, {"micro_accuracy", r.micro_accuracy}, {"macro_accuracy", r.macro_accuracy}, {"suites", per}}}});
        return kOk;
    }
};

struct EvalPairsCmd {
    std::string ckpt;
    std::vector<std::string> pair_files;
    std::size_t limit = 0;
    BeamFlags beam;

    template <typename T>
    int run(const Globals& g, Emitter& emit) {
        const BeamConfig bc = beam.resolve();
        emit({{"command", "eval-pairs"},
              {"config",
               {{"ckpt", ckpt}, {"pairs", pair_files}, {"limit", limit}, {"beam_config", to_json(bc)}, {"globals", globals_json(g)}}}});
        auto ck = load_checkpoint<T>(ckpt);
        TransformerLM<T> lm(ck.model, ck.vocab, bc);
        std::vector<MinimalPair> pairs;
        for (const auto& path : pair_files) {
            auto part = read_pairs_file(path, limit);
            pairs.insert(pairs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
        const PairsReport r = eval_pairs(lm, pairs, g.threads);
        std::size_t correct = 0;
        for (const auto& o : r.outcomes) {
            correct += o.correct ? 1 : 0;
            emit({{"pair_id", o.pair_id},
                  {"logp_grammatical", o.logp_grammatical},
                  {"logp_ungrammatical", o.logp_ungrammatical},
                  {"correct", o.correct}});
        }
        emit({{"summary", {{"pairs", pairs.size()}, {"correct", correct}, {"accuracy", r.accuracy}}}});
        return kOk;
    }
};

struct EvalPplCmd {
    std::string ckpt, trees;

    template <typename T>
    int run(const Globals& g, Emitter& emit) {
        emit({{"command", "eval-ppl"}, {"config", {{"ckpt", ckpt}, {"trees", trees}, {"globals", globals_json(g)}}}});
        auto ck = load_checkpoint<T>(ckpt);
        const PerplexityReport r = perplexity(ck.model, ck.vocab, read_treebank_file(trees));
        if (!std::isfinite(r.nll)) throw Error(Errc::NumericFailure, "non-finite perplexity");
        emit({{"variant", variant_name(ck.model.config().variant)},
              {"nll", r.nll},
              {"words", r.words},
              {"perplexity", r.perplexity()},
              {"gold_parse", is_plm(ck.model.config().variant)}});
        return kOk;
    }
};

struct GradcheckCmd {
    std::vector<std::string> variants;
    double threshold = 1e-4;

    int run(const Globals& g, Emitter& emit) {
        if (variants.empty()) variants = {"lm", "sclm-past", "sclm-next", "plm", "plm-mask"};
        emit({{"command", "gradcheck"}, {"config", {{"variants", variants}, {"threshold", threshold}, {"globals", globals_json(g)}}}});
        bool ok = true;
        for (const auto& name : variants) {
            const auto r = oracles::model_gradcheck(parse_variant(name), g.seed);
            const bool pass = r.max_rel_error <= threshold;
            ok = ok && pass;
            emit({{"variant", name},
                  {"max_rel_error", r.max_rel_error},
                  {"worst_param", r.worst_param},
                  {"worst_index", r.worst_index},
                  {"analytic", r.analytic},
                  {"numeric", r.numeric},
                  {"checked", r.checked},
                  {"pass", pass}});
        }
        return ok ? kOk : kNumericFailure;
    }
};

struct SelftestCmd {
    int run(const Globals& g, Emitter& emit) {
        emit({{"command", "selftest"}, {"config", {{"globals", globals_json(g)}}}});
        bool ok = true;
        for (const auto& c : oracles::run_selftest(g.seed)) {
            ok = ok && c.pass;
            emit(oracles::to_json(c));
        }
        emit({{"pass", ok}});
        return ok ? kOk : kNumericFailure;
    }
};

struct SynthdataCmd {
    std::string grammar = "toy", out, pairs_out;
    std::size_t n = 1000, pairs_n = 200;

    int run(const Globals& g, Emitter& emit) {
        emit({{"command", "synthdata"},
              {"config",
               {{"grammar", grammar}, {"n", n}, {"out", out}, {"pairs_out", pairs_out}, {"pairs_n", pairs_n}, {"globals", globals_json(g)}}}});
        const ToyPCFG pcfg = grammar_by_name(grammar);
        const auto trees = sample_corpus(pcfg, n, g.seed);
        {
            auto f = open_output(out);
            write_treebank(f, trees);
        }
        std::size_t distinct = 0;
        std::set<std::string> sentences;
        for (const auto& t : trees) sentences.insert(join_words(yield(t)));
        distinct = sentences.size();
        nlohmann::json rec = {{"trees", trees.size()}, {"distinct_sentences", distinct}, {"out", out}};
        if (!pairs_out.empty()) {
            if (grammar != "agreement") throw Error(Errc::BadConfig, "--pairs-out needs --grammar agreement");
            const auto pairs = agreement_minimal_pairs(pairs_n, g.seed ^ 0x9e3779b97f4a7c15ULL, sentences);
            auto f = open_output(pairs_out);
            for (const auto& p : pairs) f << to_json(p).dump() << '\n';
            rec["pairs"] = pairs.size();
            rec["pairs_out"] = pairs_out;
        }
        emit(rec);
        return kOk;
    }
};

// ---------------------------------------------------------------------------

inline int exit_code_for(Errc c) {
    switch (c) {
        case Errc::NumericFailure: return kNumericFailure;
        case Errc::BadConfig:
        case Errc::VariantMismatch: return kUsage;
        default: return kDataError;
    }
}

/// Runs the command line with explicit streams so tests can drive it
/// in-process. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Syntax-aware transformer language models: training, parsing and evaluation", "synlm"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "random seed");
    app.add_option("--threads", g.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);
    app.add_flag("--float64", g.float64, "double-precision arithmetic");
    app.add_option("--log-level", g.log_level, "debug, info, warn, error or off")
        ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

    OracleCmd oracle_cmd;
    auto* oracle_app = app.add_subcommand("oracle", "write the action sequence of every tree");
    oracle_app->add_option("--trees", oracle_cmd.trees, "bracketed treebank")->required();
    oracle_app->add_option("--out", oracle_cmd.out, "oracle file")->required();

    VocabCmd vocab_cmd;
    auto* vocab_app = app.add_subcommand("vocab", "build token, action and n-gram vocabularies");
    vocab_app->add_option("--trees", vocab_cmd.trees, "bracketed treebank")->required();
    vocab_app->add_option("--out-dir", vocab_cmd.out_dir, "output directory")->required();
    vocab_app->add_option("--min-count", vocab_cmd.min_count, "word frequency threshold");

    TrainCmd train_cmd;
    auto* train_app = app.add_subcommand("train", "train a model and write a checkpoint");
    train_cmd.attach(train_app);

    ParseCmd parse_cmd;
    auto* parse_app = app.add_subcommand("parse", "parse sentences with word-synchronous beam search");
    parse_app->add_option("--ckpt", parse_cmd.ckpt, "checkpoint")->required();
    parse_app->add_option("--sentence", parse_cmd.sentences, "whitespace-tokenized sentence (repeatable)");
    parse_app->add_option("--sentences", parse_cmd.sentence_file, "file with one sentence per line");
    parse_cmd.beam.attach(parse_app);

    SurprisalCmd surprisal_cmd;
    auto* surprisal_app = app.add_subcommand("surprisal", "surprisal in bits of a continuation");
    surprisal_app->add_option("--ckpt", surprisal_cmd.ckpt, "checkpoint")->required();
    surprisal_app->add_option("--prefix", surprisal_cmd.prefix, "context words")->required();
    surprisal_app->add_option("--continuation", surprisal_cmd.continuation, "continuation words")->required();
    surprisal_cmd.beam.attach(surprisal_app);

    EvalSuiteCmd suite_cmd;
    auto* suite_app = app.add_subcommand("eval-suite", "score surprisal-inequality test suites");
    suite_app->add_option("--ckpt", suite_cmd.ckpt, "checkpoint")->required();
    suite_app->add_option("--suite", suite_cmd.suites, "suite file (repeatable)")->required();
    suite_app->add_option("--limit", suite_cmd.limit, "first N items per file (0 = all)");
    suite_cmd.beam.attach(suite_app);

    EvalPairsCmd pairs_cmd;
    auto* pairs_app = app.add_subcommand("eval-pairs", "minimal-pair accuracy");
    pairs_app->add_option("--ckpt", pairs_cmd.ckpt, "checkpoint")->required();
    pairs_app->add_option("--pairs", pairs_cmd.pair_files, "pair file (repeatable)")->required();
    pairs_app->add_option("--limit", pairs_cmd.limit, "first N pairs per file (0 = all)");
    pairs_cmd.beam.attach(pairs_app);

    EvalPplCmd ppl_cmd;
    auto* ppl_app = app.add_subcommand("eval-ppl", "per-word perplexity (gold parse for plm variants)");
    ppl_app->add_option("--ckpt", ppl_cmd.ckpt, "checkpoint")->required();
    ppl_app->add_option("--trees", ppl_cmd.trees, "bracketed treebank")->required();

    GradcheckCmd grad_cmd;
    auto* grad_app = app.add_subcommand("gradcheck", "finite-difference check of model gradients");
    grad_app->add_option("--variant", grad_cmd.variants, "variant to check (repeatable; default all)");
    grad_app->add_option("--threshold", grad_cmd.threshold, "maximum relative error");

    SelftestCmd self_cmd;
    app.add_subcommand("selftest", "round-trip, mask, gradient and beam-exactness checks");

    SynthdataCmd synth_cmd;
    auto* synth_app = app.add_subcommand("synthdata", "sample a synthetic treebank from a built-in PCFG");
    synth_app->add_option("--grammar", synth_cmd.grammar, "toy, agreement or overfit");
    synth_app->add_option("--n", synth_cmd.n, "number of trees");
    synth_app->add_option("--out", synth_cmd.out, "treebank output")->required();
    synth_app->add_option("--pairs-out", synth_cmd.pairs_out, "also write held-out agreement minimal pairs");
    synth_app->add_option("--pairs-n", synth_cmd.pairs_n, "number of minimal pairs");

    std::vector<std::string> argv_storage{"synlm"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    Emitter emit(out);
    const LogLevel saved = log_level();
    try {
        log_level() = parse_log_level(g.log_level);
        auto typed = [&](auto& cmd) { return g.float64 ? cmd.template run<double>(g, emit) : cmd.template run<float>(g, emit); };
        int code = kUsage;
        if (*oracle_app) code = oracle_cmd.run(g, emit);
        if (*vocab_app) code = vocab_cmd.run(g, emit);
        if (*train_app) code = typed(train_cmd);
        if (*parse_app) {
            if (parse_cmd.sentences.empty() && parse_cmd.sentence_file.empty()) {
                throw Error(Errc::BadConfig, "parse needs --sentence or --sentences");
            }
            code = typed(parse_cmd);
        }
        if (*surprisal_app) code = typed(surprisal_cmd);
        if (*suite_app) code = typed(suite_cmd);
        if (*pairs_app) code = typed(pairs_cmd);
        if (*ppl_app) code = typed(ppl_cmd);
        if (*grad_app) code = grad_cmd.run(g, emit);
        if (app.got_subcommand("selftest")) code = self_cmd.run(g, emit);
        if (*synth_app) code = synth_cmd.run(g, emit);
        log_level() = saved;
        out.flush();
        return code;
    } catch (const Error& e) {
        log_level() = saved;
        out.flush();
        err << "synlm: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        log_level() = saved;
        out.flush();
        err << "synlm: " << e.what() << '\n';
        return kDataError;
    }
}

}  // namespace synlm::cli
