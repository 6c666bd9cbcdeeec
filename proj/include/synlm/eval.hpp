#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <mutex>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "synlm/beam.hpp"
#include "synlm/error.hpp"
#include "synlm/model.hpp"
#include "synlm/vocab.hpp"

namespace synlm {

/// Anything that yields log p(w_1..w_t) (natural log) for every prefix of a
/// sentence. Implementations must be safe to call from several threads.
class LanguageModel {
   public:
    virtual ~LanguageModel() = default;
    virtual std::vector<double> prefix_logprobs(const std::vector<std::string>& words) const = 0;
};

/// Direct word-level scoring for LM/ScLM, beam marginals for PLM variants.
template <typename T>
class TransformerLM : public LanguageModel {
   public:
    TransformerLM(const Transformer<T>& model, const Vocabulary& vocab, BeamConfig beam = {})
        : model_(model), vocab_(vocab), beam_(std::move(beam)) {
        beam_.validate();
    }

    std::vector<double> prefix_logprobs(const std::vector<std::string>& words) const override {
        if (words.empty()) throw Error(Errc::IncompleteSequence, "empty sentence");
        if (is_plm(model_.config().variant)) {
            ModelScorer<T> scorer(model_, vocab_.joint);
            return marginal_logprob(scorer, words, beam_);
        }
        Example ex = make_word_example(model_.config(), vocab_, words);
        const Tensor<T> logits = model_.infer_logits(ex.inputs);
        std::vector<double> out;
        out.reserve(words.size());
        double acc = 0.0;
        for (std::size_t t = 0; t < ex.targets.size(); ++t) {
            acc += log_softmax_at(logits, t, ex.targets[t]);
            out.push_back(acc);
        }
        return out;
    }

    const BeamConfig& beam() const { return beam_; }

   private:
    static double log_softmax_at(const Tensor<T>& logits, std::size_t row, int id) {
        const auto r = logits.row_span(row);
        double mx = -std::numeric_limits<double>::infinity();
        for (T v : r) mx = std::max(mx, static_cast<double>(v));
        double s = 0.0;
        for (T v : r) s += std::exp(static_cast<double>(v) - mx);
        return static_cast<double>(r[static_cast<std::size_t>(id)]) - mx - std::log(s);
    }

    const Transformer<T>& model_;
    const Vocabulary& vocab_;
    BeamConfig beam_;
};

/// Surprisal in bits of words [begin, end) given the words before `begin`,
/// from a precomputed prefix log-probability table.
inline double span_surprisal(const std::vector<double>& prefix_lp, std::size_t begin, std::size_t end) {
    if (end <= begin) return 0.0;
    const double before = begin == 0 ? 0.0 : prefix_lp[begin - 1];
    return -(prefix_lp[end - 1] - before) / std::numbers::ln2;
}

inline double surprisal(const LanguageModel& lm, const std::vector<std::string>& prefix,
                        const std::vector<std::string>& continuation) {
    if (continuation.empty()) throw Error(Errc::IncompleteSequence, "continuation must be non-empty");
    std::vector<std::string> all = prefix;
    all.insert(all.end(), continuation.begin(), continuation.end());
    return span_surprisal(lm.prefix_logprobs(all), prefix.size(), all.size());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Minimal pairs.

struct MinimalPair {
    std::string pair_id;
    std::vector<std::string> grammatical;
    std::vector<std::string> ungrammatical;
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

inline std::vector<std::string> json_words(const nlohmann::json& j, const std::string& what) {
    if (j.is_string()) return split_words(j.get<std::string>());
    if (j.is_array()) {
        std::vector<std::string> out;
        for (const auto& w : j) {
            if (!w.is_string()) throw Error(Errc::BadSuiteFile, what + ": tokens must be strings");
            out.push_back(w.get<std::string>());
        }
        return out;
    }
    throw Error(Errc::BadSuiteFile, what + ": expected a token array or string");
}

inline std::string json_id(const nlohmann::json& j, const char* key, std::size_t line) {
    if (!j.contains(key)) return std::to_string(line);
    const auto& v = j[key];
    return v.is_string() ? v.get<std::string>() : v.dump();
}

template <typename Fn>
void for_each_json_line(std::istream& in, const std::string& what, Fn fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::BadSuiteFile, what + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object()) throw Error(Errc::BadSuiteFile, what + " line " + std::to_string(line_no) + ": not an object");
        fn(j, line_no);
    }
}

}  // namespace detail

inline nlohmann::json to_json(const MinimalPair& p) {
    return {{"pair_id", p.pair_id}, {"grammatical", p.grammatical}, {"ungrammatical", p.ungrammatical}};
}

/// Reads line-delimited pairs {pair_id, grammatical, ungrammatical}; token
/// lists may be arrays or whitespace-separated strings. `limit` keeps the
/// first N items (0 = all).
inline std::vector<MinimalPair> read_pairs(std::istream& in, std::size_t limit = 0) {
    std::vector<MinimalPair> out;
    detail::for_each_json_line(in, "pair file", [&](const nlohmann::json& j, std::size_t line) {
        if (limit != 0 && out.size() >= limit) return;
        if (!j.contains("grammatical") || !j.contains("ungrammatical")) {
            throw Error(Errc::BadSuiteFile, "pair line " + std::to_string(line) + ": missing grammatical/ungrammatical");
        }
        MinimalPair p;
        p.pair_id = detail::json_id(j, "pair_id", line);
        p.grammatical = detail::json_words(j["grammatical"], "pair " + p.pair_id);
        p.ungrammatical = detail::json_words(j["ungrammatical"], "pair " + p.pair_id);
        if (p.grammatical.empty() || p.ungrammatical.empty()) {
            throw Error(Errc::BadSuiteFile, "pair " + p.pair_id + " has an empty sentence");
        }
        out.push_back(std::move(p));
    });
    return out;
}

inline std::vector<MinimalPair> read_pairs_file(const std::string& path, std::size_t limit = 0) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open pair file " + path);
    return read_pairs(in, limit);
}

struct PairOutcome {
    std::string pair_id;
    double logp_grammatical = 0.0;
    double logp_ungrammatical = 0.0;
    bool correct = false;
};

struct PairsReport {
    std::vector<PairOutcome> outcomes;
    double accuracy = 0.0;
};

/// A pair is correct iff log p(W) > log p(W*) strictly.
inline PairsReport eval_pairs(const LanguageModel& lm, const std::vector<MinimalPair>& pairs, std::size_t threads = 1) {
    PairsReport r;
    r.outcomes.resize(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        PairOutcome& o = r.outcomes[i];
        o.pair_id = pairs[i].pair_id;
        o.logp_grammatical = lm.prefix_logprobs(pairs[i].grammatical).back();
        o.logp_ungrammatical = lm.prefix_logprobs(pairs[i].ungrammatical).back();
        o.correct = o.logp_grammatical > o.logp_ungrammatical;
    });
    std::size_t correct = 0;
    for (const auto& o : r.outcomes) correct += o.correct ? 1 : 0;
    r.accuracy = pairs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pairs.size());
    return r;
}

// ---------------------------------------------------------------------------
// Suites: items with named variants split into regions, and conditions that
// compare summed region surprisals.

struct Region {
    std::string name;
    std::vector<std::string> tokens;
};

struct SuiteVariant {
    std::string name;
    std::vector<Region> regions;
};

struct RegionRef {
    std::string variant;
    std::string region;
};

struct Condition {
    std::vector<RegionRef> left;   // sum of these surprisals ...
    std::vector<RegionRef> right;  // ... must be strictly below the sum of these
};

struct SuiteItem {
    std::string item_id;
    std::string suite;
    std::vector<SuiteVariant> variants;
    std::vector<Condition> conditions;

    const SuiteVariant* find_variant(const std::string& name) const {
        for (const auto& v : variants) {
            if (v.name == name) return &v;
        }
        return nullptr;
    }
};

namespace detail {

inline std::vector<RegionRef> parse_refs(const nlohmann::json& j, const SuiteItem& item) {
    if (!j.is_array() || j.empty()) throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": condition side must be a non-empty array");
    std::vector<RegionRef> out;
    for (const auto& r : j) {
        if (!r.is_object() || !r.contains("variant") || !r.contains("region")) {
            throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": region reference needs variant and region");
        }
        RegionRef ref{r["variant"].get<std::string>(), r["region"].get<std::string>()};
        const SuiteVariant* v = item.find_variant(ref.variant);
        if (!v) throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": unknown variant " + ref.variant);
        bool found = false;
        for (const auto& reg : v->regions) found = found || reg.name == ref.region;
        if (!found) throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": unknown region " + ref.region);
        out.push_back(std::move(ref));
    }
    return out;
}

}  // namespace detail

/// Line-delimited suite items:
///   {"item_id", "suite"?, "variants": {name: {"regions": [{"name", "tokens"}]}},
///    "conditions": [{"left": [{"variant", "region"}], "right": [...]}]}
inline std::vector<SuiteItem> read_suite(std::istream& in, std::size_t limit = 0) {
    std::vector<SuiteItem> out;
    detail::for_each_json_line(in, "suite file", [&](const nlohmann::json& j, std::size_t line) {
        if (limit != 0 && out.size() >= limit) return;
        try {
            SuiteItem item;
            item.item_id = detail::json_id(j, "item_id", line);
            item.suite = j.value("suite", std::string("default"));
            if (!j.contains("variants") || !j["variants"].is_object() || j["variants"].empty()) {
                throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": missing variants");
            }
            for (auto it = j["variants"].begin(); it != j["variants"].end(); ++it) {
                SuiteVariant v;
                v.name = it.key();
                const auto& regions = it.value().is_object() ? it.value().at("regions") : it.value();
                if (!regions.is_array()) throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": regions must be an array");
                for (const auto& r : regions) {
                    Region reg;
                    reg.name = r.at("name").get<std::string>();
                    reg.tokens = detail::json_words(r.at("tokens"), "item " + item.item_id);
                    for (const auto& prev : v.regions) {
                        if (prev.name == reg.name) throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": duplicate region " + reg.name);
                    }
                    v.regions.push_back(std::move(reg));
                }
                item.variants.push_back(std::move(v));
            }
            if (!j.contains("conditions") || !j["conditions"].is_array() || j["conditions"].empty()) {
                throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": missing conditions");
            }
            for (const auto& c : j["conditions"]) {
                if (!c.is_object() || !c.contains("left") || !c.contains("right")) {
                    throw Error(Errc::BadSuiteFile, "item " + item.item_id + ": condition needs left and right");
                }
                item.conditions.push_back({detail::parse_refs(c["left"], item), detail::parse_refs(c["right"], item)});
            }
            out.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::BadSuiteFile, "suite line " + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

inline std::vector<SuiteItem> read_suite_file(const std::string& path, std::size_t limit = 0) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open suite file " + path);
    return read_suite(in, limit);
}

struct ConditionOutcome {
    double left = 0.0;   // summed surprisal (bits)
    double right = 0.0;
    bool holds = false;
};

struct ItemOutcome {
    std::string item_id;
    std::string suite;
    bool pass = false;
    std::vector<ConditionOutcome> conditions;
};

struct SuiteScore {
    std::size_t items = 0;
    std::size_t passed = 0;
    double accuracy() const { return items ? static_cast<double>(passed) / static_cast<double>(items) : 0.0; }
};

struct SuiteReport {
    std::vector<ItemOutcome> outcomes;
    std::map<std::string, SuiteScore> suites;
    double micro_accuracy = 0.0;  // over items
    double macro_accuracy = 0.0;  // unweighted mean over suites
};

inline ItemOutcome eval_item(const LanguageModel& lm, const SuiteItem& item) {
    std::map<std::string, std::map<std::string, double>> region_bits;
    for (const auto& v : item.variants) {
        std::vector<std::string> words;
        for (const auto& r : v.regions) words.insert(words.end(), r.tokens.begin(), r.tokens.end());
        auto& bits = region_bits[v.name];
        if (words.empty()) {
            for (const auto& r : v.regions) bits[r.name] = 0.0;
            continue;
        }
        const auto lp = lm.prefix_logprobs(words);
        std::size_t begin = 0;
        for (const auto& r : v.regions) {
            bits[r.name] = span_surprisal(lp, begin, begin + r.tokens.size());
            begin += r.tokens.size();
        }
    }
    ItemOutcome o;
    o.item_id = item.item_id;
    o.suite = item.suite;
    o.pass = true;
    for (const auto& c : item.conditions) {
        ConditionOutcome co;
        for (const auto& ref : c.left) co.left += region_bits[ref.variant][ref.region];
        for (const auto& ref : c.right) co.right += region_bits[ref.variant][ref.region];
        co.holds = co.left < co.right;
        o.pass = o.pass && co.holds;
        o.conditions.push_back(co);
    }
    return o;
}

inline SuiteReport eval_suite(const LanguageModel& lm, const std::vector<SuiteItem>& items, std::size_t threads = 1) {
    SuiteReport r;
    r.outcomes.resize(items.size());
    parallel_for(items.size(), threads, [&](std::size_t i) { r.outcomes[i] = eval_item(lm, items[i]); });
    std::size_t passed = 0;
    for (const auto& o : r.outcomes) {
        auto& s = r.suites[o.suite];
        ++s.items;
        s.passed += o.pass ? 1 : 0;
        passed += o.pass ? 1 : 0;
    }
    r.micro_accuracy = items.empty() ? 0.0 : static_cast<double>(passed) / static_cast<double>(items.size());
    double macro = 0.0;
    for (const auto& [name, s] : r.suites) macro += s.accuracy();
    r.macro_accuracy = r.suites.empty() ? 0.0 : macro / static_cast<double>(r.suites.size());
    return r;
}

// ---------------------------------------------------------------------------
// Perplexity, normalized by word tokens in every mode.

struct PerplexityReport {
    double nll = 0.0;  // total nats
    std::size_t words = 0;
    double perplexity() const { return std::exp(nll / static_cast<double>(words)); }
};

/// Gold-parse joint NLL for PLM variants, word NLL otherwise.
template <typename T>
PerplexityReport perplexity(Transformer<T>& model, const Vocabulary& vocab, const std::vector<Tree>& trees) {
    PerplexityReport r;
    for (const Tree& t : trees) {
        Example ex = make_example(model.config(), vocab, t);
        Tape<T> tape;
        r.nll += static_cast<double>(tape.value(example_loss(tape, model, ex).primary)[0]);
        r.words += ex.words;
    }
    if (r.words == 0) throw Error(Errc::EmptyCorpus, "no words to score");
    return r;
}

/// Word-only perplexity; PLM variants need gold trees instead.
template <typename T>
PerplexityReport perplexity(Transformer<T>& model, const Vocabulary& vocab,
                            const std::vector<std::vector<std::string>>& sentences) {
    if (is_plm(model.config().variant)) {
        throw Error(Errc::MissingGoldParse, "plm perplexity needs gold trees, got plain sentences");
    }
    PerplexityReport r;
    for (const auto& s : sentences) {
        Example ex = make_word_example(model.config(), vocab, s);
        Tape<T> tape;
        r.nll += static_cast<double>(tape.value(example_loss(tape, model, ex).primary)[0]);
        r.words += ex.words;
    }
    if (r.words == 0) throw Error(Errc::EmptyCorpus, "no words to score");
    return r;
}

}  // namespace synlm
