#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "synlm/beam.hpp"
#include "synlm/error.hpp"
#include "synlm/eval.hpp"
#include "synlm/rng.hpp"
#include "synlm/transitions.hpp"
#include "synlm/treebank.hpp"

namespace synlm {

struct Rule {
    std::string lhs;
    std::vector<std::string> rhs;
    double prob = 1.0;
};

/// A PCFG whose nonterminals are the rule left-hand sides; every other
/// symbol is a terminal. `labels` renames a nonterminal in the output tree;
/// an empty label makes it transparent (its children are spliced into the
/// parent), which is how lexical categories stay out of the trees.
struct ToyPCFG {
    std::vector<Rule> rules;
    std::string start = "S";
    std::map<std::string, std::string> labels;
    std::size_t max_depth = 32;
    std::size_t max_leaves = 200;

    bool is_nonterminal(const std::string& sym) const {
        for (const auto& r : rules) {
            if (r.lhs == sym) return true;
        }
        return false;
    }

    std::string output_label(const std::string& sym) const {
        auto it = labels.find(sym);
        return it == labels.end() ? sym : it->second;
    }

    void validate() const {
        std::map<std::string, double> mass;
        for (const auto& r : rules) {
            if (r.rhs.empty()) throw Error(Errc::ImproperGrammar, "empty right-hand side for " + r.lhs);
            if (!(r.prob >= 0.0)) throw Error(Errc::ImproperGrammar, "negative rule probability for " + r.lhs);
            mass[r.lhs] += r.prob;
        }
        for (const auto& [lhs, m] : mass) {
            if (std::abs(m - 1.0) > 1e-9) throw Error(Errc::ImproperGrammar, "rules for " + lhs + " sum to " + std::to_string(m));
        }
        if (!mass.count(start)) throw Error(Errc::ImproperGrammar, "no rules for start symbol " + start);
        if (output_label(start).empty()) throw Error(Errc::ImproperGrammar, "start symbol cannot be transparent");
    }
};

namespace detail {

struct Rejected {};

class PcfgSampler {
   public:
    PcfgSampler(const ToyPCFG& g, Rng& rng) : g_(g), rng_(rng) {
        for (std::size_t i = 0; i < g.rules.size(); ++i) by_lhs_[g.rules[i].lhs].push_back(i);
    }

    Tree sample() {
        leaves_ = 0;
        std::vector<Tree> out;
        expand(g_.start, 0, out);
        return std::move(out.front());
    }

   private:
    void expand(const std::string& sym, std::size_t depth, std::vector<Tree>& out) {
        auto it = by_lhs_.find(sym);
        if (it == by_lhs_.end()) {
            if (++leaves_ > g_.max_leaves) throw Rejected{};
            out.push_back(Tree::leaf(sym));
            return;
        }
        if (depth >= g_.max_depth) throw Rejected{};
        const Rule& rule = choose(it->second);
        std::vector<Tree> children;
        for (const auto& s : rule.rhs) expand(s, depth + 1, children);
        const std::string label = g_.output_label(sym);
        if (label.empty()) {
            for (auto& c : children) out.push_back(std::move(c));
        } else {
            out.push_back(Tree::node(label, std::move(children)));
        }
    }

    const Rule& choose(const std::vector<std::size_t>& options) {
        const double u = rng_.uniform();
        double acc = 0.0;
        for (std::size_t i : options) {
            acc += g_.rules[i].prob;
            if (u < acc) return g_.rules[i];
        }
        return g_.rules[options.back()];
    }

    const ToyPCFG& g_;
    Rng& rng_;
    std::map<std::string, std::vector<std::size_t>> by_lhs_;
    std::size_t leaves_ = 0;
};

}  // namespace detail

/// Draws one tree, rejecting derivations past the depth/size caps.
inline Tree sample_tree(const ToyPCFG& grammar, Rng& rng) {
    detail::PcfgSampler sampler(grammar, rng);
    std::size_t attempts = 0, rejected = 0;
    for (;;) {
        ++attempts;
        try {
            return sampler.sample();
        } catch (const detail::Rejected&) {
            ++rejected;
        }
        if (attempts >= 100 && static_cast<double>(rejected) > 0.99 * static_cast<double>(attempts)) {
            throw Error(Errc::ImproperGrammar, "more than 99% of derivations exceed the depth cap");
        }
    }
}

inline std::vector<Tree> sample_corpus(const ToyPCFG& grammar, std::size_t n, std::uint64_t seed) {
    grammar.validate();
    Rng rng(seed);
    std::vector<Tree> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_tree(grammar, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Fixed grammars.

/// Two labels (S, NP), three words (a, b, c); every oracle has at most 7
/// non-BOS actions.
inline ToyPCFG toy_grammar() {
    ToyPCFG g;
    g.rules = {
        {"S", {"NP", "W"}, 0.4}, {"S", {"W"}, 0.3},     {"S", {"W", "NP"}, 0.3},
        {"NP", {"W"}, 0.7},      {"NP", {"W", "W"}, 0.3}, {"W", {"a"}, 0.5},
        {"W", {"b"}, 0.3},       {"W", {"c"}, 0.2},
    };
    g.labels = {{"W", ""}};
    return g;
}

struct AgreementLexicon {
    std::vector<std::pair<std::string, std::string>> nouns;             // singular, plural
    std::vector<std::pair<std::string, std::string>> intransitive;      // 3sg, plural
    std::vector<std::pair<std::string, std::string>> transitive;
    std::vector<std::string> adjectives;
    std::vector<std::string> prepositions;
};

inline const AgreementLexicon& agreement_lexicon() {
    static const AgreementLexicon lex{
        {{"dog", "dogs"}, {"cat", "cats"}, {"bird", "birds"}, {"teacher", "teachers"}, {"farmer", "farmers"}, {"child", "children"}},
        {{"sleeps", "sleep"}, {"runs", "run"}, {"sings", "sing"}, {"laughs", "laugh"}},
        {{"sees", "see"}, {"likes", "like"}, {"helps", "help"}},
        {"old", "small", "happy"},
        {"near", "with", "behind"},
    };
    return lex;
}

/// Subject-verb agreement grammar. Subjects may carry a prepositional
/// attractor of either number; the main verb agrees with the head noun.
inline ToyPCFG agreement_grammar() {
    const AgreementLexicon& lex = agreement_lexicon();
    ToyPCFG g;
    auto uniform = [&](const std::string& lhs, const std::vector<std::string>& words) {
        for (const auto& w : words) g.rules.push_back({lhs, {w}, 1.0 / static_cast<double>(words.size())});
    };
    g.rules = {
        {"S", {"NP_SG", "VP_SG"}, 0.5},
        {"S", {"NP_PL", "VP_PL"}, 0.5},
        {"NP_SG", {"Det", "N_SG"}, 0.45},
        {"NP_SG", {"Det", "Adj", "N_SG"}, 0.2},
        {"NP_SG", {"Det", "N_SG", "PP"}, 0.35},
        {"NP_PL", {"Det", "N_PL"}, 0.45},
        {"NP_PL", {"Det", "Adj", "N_PL"}, 0.2},
        {"NP_PL", {"Det", "N_PL", "PP"}, 0.35},
        {"PP", {"P", "NPS_SG"}, 0.5},
        {"PP", {"P", "NPS_PL"}, 0.5},
        {"NPS_SG", {"Det", "N_SG"}, 0.7},
        {"NPS_SG", {"Det", "Adj", "N_SG"}, 0.3},
        {"NPS_PL", {"Det", "N_PL"}, 0.7},
        {"NPS_PL", {"Det", "Adj", "N_PL"}, 0.3},
        {"VP_SG", {"V_SG"}, 0.6},
        {"VP_SG", {"VT_SG", "OBJ"}, 0.4},
        {"VP_PL", {"V_PL"}, 0.6},
        {"VP_PL", {"VT_PL", "OBJ"}, 0.4},
        {"OBJ", {"NPS_SG"}, 0.5},
        {"OBJ", {"NPS_PL"}, 0.5},
        {"Det", {"the"}, 1.0},
    };
    std::vector<std::string> nsg, npl, vsg, vpl, vtsg, vtpl;
    for (const auto& [s, p] : lex.nouns) nsg.push_back(s), npl.push_back(p);
    for (const auto& [s, p] : lex.intransitive) vsg.push_back(s), vpl.push_back(p);
    for (const auto& [s, p] : lex.transitive) vtsg.push_back(s), vtpl.push_back(p);
    uniform("N_SG", nsg);
    uniform("N_PL", npl);
    uniform("V_SG", vsg);
    uniform("V_PL", vpl);
    uniform("VT_SG", vtsg);
    uniform("VT_PL", vtpl);
    uniform("Adj", lex.adjectives);
    uniform("P", lex.prepositions);
    g.labels = {{"NP_SG", "NP"}, {"NP_PL", "NP"}, {"NPS_SG", "NP"}, {"NPS_PL", "NP"}, {"VP_SG", "VP"},
                {"VP_PL", "VP"}, {"OBJ", ""},     {"Det", ""},       {"N_SG", ""},     {"N_PL", ""},
                {"V_SG", ""},    {"V_PL", ""},    {"VT_SG", ""},     {"VT_PL", ""},    {"Adj", ""},
                {"P", ""}};
    return g;
}

/// Long, nearly deterministic sentences with one binary choice (the verb),
/// so a small corpus has a low entropy floor per action.
inline ToyPCFG overfit_grammar() {
    ToyPCFG g;
    g.rules = {
        {"S", {"NP1", "VP"}, 1.0},
        {"NP1", {"the", "old", "farmer", "PP1"}, 1.0},
        {"PP1", {"near", "NP2"}, 1.0},
        {"NP2", {"the", "big", "red", "barn"}, 1.0},
        {"VP", {"V", "NP3"}, 1.0},
        {"V", {"sees"}, 0.5},
        {"V", {"likes"}, 0.5},
        {"NP3", {"the", "small", "happy", "dog", "PP2"}, 1.0},
        {"PP2", {"with", "NP4"}, 1.0},
        {"NP4", {"the", "long", "brown", "tail"}, 1.0},
    };
    g.labels = {{"NP1", "NP"}, {"NP2", "NP"}, {"NP3", "NP"}, {"NP4", "NP"}, {"PP1", "PP"}, {"PP2", "PP"}, {"V", ""}};
    return g;
}

inline ToyPCFG grammar_by_name(const std::string& name) {
    if (name == "toy") return toy_grammar();
    if (name == "agreement") return agreement_grammar();
    if (name == "overfit") return overfit_grammar();
    throw Error(Errc::BadConfig, "unknown grammar '" + name + "' (expected toy, agreement or overfit)");
}

// ---------------------------------------------------------------------------
// Agreement checks and minimal pairs.

enum class Number { Singular, Plural, Unknown };

inline Number noun_number(const std::string& w) {
    for (const auto& [s, p] : agreement_lexicon().nouns) {
        if (w == s) return Number::Singular;
        if (w == p) return Number::Plural;
    }
    return Number::Unknown;
}

inline Number verb_number(const std::string& w) {
    const auto& lex = agreement_lexicon();
    for (const auto* list : {&lex.intransitive, &lex.transitive}) {
        for (const auto& [s, p] : *list) {
            if (w == s) return Number::Singular;
            if (w == p) return Number::Plural;
        }
    }
    return Number::Unknown;
}

inline std::string flip_verb(const std::string& w) {
    const auto& lex = agreement_lexicon();
    for (const auto* list : {&lex.intransitive, &lex.transitive}) {
        for (const auto& [s, p] : *list) {
            if (w == s) return p;
            if (w == p) return s;
        }
    }
    throw Error(Errc::BadConfig, "not an agreement verb: " + w);
}

/// Index (in the yield) of the main verb: the first leaf of the top-level VP.
inline std::size_t main_verb_index(const Tree& s) {
    std::size_t offset = 0;
    for (const Tree& c : s.children) {
        if (!c.is_leaf() && c.label == "VP") return offset;
        offset += yield(c).size();
    }
    throw Error(Errc::BadConfig, "tree has no top-level VP");
}

/// Subject head noun number, skipping nouns inside the attractor PP.
inline Number subject_number(const Tree& s) {
    for (const Tree& c : s.children) {
        if (c.is_leaf() || c.label != "NP") continue;
        for (const Tree& leaf : c.children) {
            if (leaf.is_leaf() && noun_number(leaf.label) != Number::Unknown) return noun_number(leaf.label);
        }
    }
    return Number::Unknown;
}

inline bool agreement_holds(const Tree& s) {
    const auto words = yield(s);
    const Number subj = subject_number(s);
    return subj != Number::Unknown && subj == verb_number(words[main_verb_index(s)]);
}

/// Balanced minimal pairs (even index singular subject, odd plural) built by
/// flipping the main verb. Sentences in `exclude` (space-joined) are skipped.
inline std::vector<MinimalPair> agreement_minimal_pairs(std::size_t n, std::uint64_t seed,
                                                        const std::set<std::string>& exclude = {}) {
    const ToyPCFG g = agreement_grammar();
    g.validate();
    Rng rng(seed);
    std::vector<MinimalPair> out;
    std::set<std::string> seen;
    std::size_t attempts = 0;
    while (out.size() < n) {
        if (++attempts > 1000 * (n + 10)) throw Error(Errc::ImproperGrammar, "could not draw enough distinct pairs");
        const Tree t = sample_tree(g, rng);
        const Number want = out.size() % 2 == 0 ? Number::Singular : Number::Plural;
        if (subject_number(t) != want) continue;
        auto words = yield(t);
        std::string key;
        for (const auto& w : words) key += (key.empty() ? "" : " ") + w;
        if (exclude.count(key) || seen.count(key)) continue;
        seen.insert(key);
        MinimalPair p;
        char id[32];
        std::snprintf(id, sizeof id, "agr-%04zu", out.size());
        p.pair_id = id;
        p.grammatical = words;
        const std::size_t v = main_verb_index(t);
        words[v] = flip_verb(words[v]);
        p.ungrammatical = std::move(words);
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration of a scorer's joint distribution.

struct EnumeratedSequence {
    std::vector<int> actions;  // joint ids, BOS first
    double logp = 0.0;
};

struct JointTable {
    std::vector<EnumeratedSequence> complete;
    // word-id sequence -> total probability of prefixes ending in its last GEN
    std::map<std::vector<int>, double> prefix_mass;
    double truncated_mass = 0.0;  // incomplete prefixes stopped by the length cap

    double complete_mass() const {
        double s = 0.0;
        for (const auto& c : complete) s += std::exp(c.logp);
        return s;
    }

    /// Sum of p(Y, W) over complete sequences whose yield is `words`.
    double sentence_mass(const JointActionVocab& vocab, const std::vector<int>& words) const {
        double s = 0.0;
        for (const auto& c : complete) {
            std::vector<int> y;
            for (int a : c.actions) {
                if (vocab.kind(a) == ActionKind::Gen) y.push_back(a);
            }
            if (y == words) s += std::exp(c.logp);
        }
        return s;
    }

    double prefix_marginal(const std::vector<int>& words) const {
        auto it = prefix_mass.find(words);
        return it == prefix_mass.end() ? 0.0 : it->second;
    }
};

inline constexpr std::size_t kMaxEnumerationSymbols = 8;
inline constexpr std::size_t kMaxEnumerationLength = 10;

/// Every legal action sequence of at most `max_len` non-BOS actions, with
/// GEN ranging over the non-reserved words.
template <JointScorer S>
JointTable enumerate_joint(S& scorer, std::size_t max_len, std::size_t max_open = 32) {
    using State = typename S::State;
    const JointActionVocab& vocab = scorer.vocab();
    const std::size_t words = vocab.tokens().size() - TokenVocab::kReserved;
    const std::size_t symbols = words + vocab.labels().size() + 1;
    if (symbols > kMaxEnumerationSymbols || max_len > kMaxEnumerationLength) {
        throw Error(Errc::TooLarge, "enumeration capped at " + std::to_string(kMaxEnumerationSymbols) + " symbols and length " +
                                        std::to_string(kMaxEnumerationLength) + "; got " + std::to_string(symbols) +
                                        " symbols, length " + std::to_string(max_len));
    }
    std::vector<int> candidates = vocab.nt_ids();
    candidates.push_back(vocab.reduce_id());
    for (std::size_t w = TokenVocab::kReserved; w < vocab.tokens().size(); ++w) candidates.push_back(static_cast<int>(w));
    const LegalityConfig legality{max_open, max_len};

    JointTable table;
    std::function<void(const std::vector<int>&, std::vector<int>&, const ParserState&, double, std::shared_ptr<const State>)>
        visit = [&](const std::vector<int>& actions, std::vector<int>& yield_ids, const ParserState& parser, double logp,
                    std::shared_ptr<const State> state) {
            const LegalKinds legal = legal_actions(parser, legality);
            struct Child {
                int action;
                ParserState parser;
                double logp;
            };
            std::vector<Child> children;
            for (int a : candidates) {
                const ActionKind kind = vocab.kind(a);
                if (!legal.contains(kind)) continue;
                const double lp = logp + state->logprobs[static_cast<std::size_t>(a)];
                if (lp == -std::numeric_limits<double>::infinity()) continue;
                children.push_back({a, apply(parser, vocab.decode(a), legality), lp});
            }
            std::vector<Extension<State>> batch;
            std::vector<std::size_t> expand;
            for (std::size_t i = 0; i < children.size(); ++i) {
                const Child& c = children[i];
                if (vocab.kind(c.action) == ActionKind::Gen) {
                    yield_ids.push_back(c.action);
                    table.prefix_mass[yield_ids] += std::exp(c.logp);
                    yield_ids.pop_back();
                }
                if (c.parser.root_closed()) {
                    std::vector<int> seq = actions;
                    seq.push_back(c.action);
                    table.complete.push_back({std::move(seq), c.logp});
                } else if (legal_actions(c.parser, legality).empty()) {
                    table.truncated_mass += std::exp(c.logp);
                } else {
                    batch.push_back({state, c.action, &c.parser});
                    expand.push_back(i);
                }
            }
            if (batch.empty()) return;
            auto states = scorer.extend(batch);
            std::vector<int> next = actions;
            for (std::size_t k = 0; k < expand.size(); ++k) {
                const Child& c = children[expand[k]];
                next.push_back(c.action);
                const bool gen = vocab.kind(c.action) == ActionKind::Gen;
                if (gen) yield_ids.push_back(c.action);
                visit(next, yield_ids, c.parser, c.logp, states[k]);
                if (gen) yield_ids.pop_back();
                next.pop_back();
            }
        };
    std::vector<int> yield_ids;
    visit({vocab.bos_id()}, yield_ids, ParserState{}, 0.0, scorer.initial());
    return table;
}

}  // namespace synlm
