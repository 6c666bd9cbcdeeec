#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "synlm/error.hpp"
#include "synlm/model.hpp"
#include "synlm/transitions.hpp"
#include "synlm/vocab.hpp"

namespace synlm {

struct BeamConfig {
    std::size_t action_beam = 100;
    std::size_t word_beam = 10;
    std::size_t fast_track = 5;
    std::size_t max_struct_per_word = 16;
    LegalityConfig legality;

    void validate() const {
        if (word_beam == 0) throw Error(Errc::BadConfig, "word_beam must be >= 1");
        if (!(fast_track <= word_beam && word_beam <= action_beam)) {
            throw Error(Errc::BadConfig, "beam sizes must satisfy fast_track <= word_beam <= action_beam");
        }
    }
};

inline nlohmann::json to_json(const BeamConfig& c) {
    return {{"action_beam", c.action_beam},
            {"word_beam", c.word_beam},
            {"fast_track", c.fast_track},
            {"max_struct_per_word", c.max_struct_per_word},
            {"max_open_constituents", c.legality.max_open_constituents},
            {"max_actions", c.legality.max_actions}};
}

/// One requested extension: the scorer state of a prefix, the action id
/// appended to it, and the parser state after that action.
template <typename State>
struct Extension {
    std::shared_ptr<const State> parent;
    int action = 0;
    const ParserState* parser = nullptr;
};

/// Anything that assigns next-action log-probabilities to prefixes of the
/// joint action sequence. State must expose `std::vector<double> logprobs`
/// (natural log, one entry per joint vocab id).
template <typename S>
concept JointScorer = requires(S& s, const std::vector<Extension<typename S::State>>& batch) {
    typename S::State;
    { s.vocab() } -> std::same_as<const JointActionVocab&>;
    { s.initial() } -> std::same_as<std::shared_ptr<const typename S::State>>;
    { s.extend(batch) } -> std::same_as<std::vector<std::shared_ptr<const typename S::State>>>;
    requires std::same_as<decltype(std::declval<const typename S::State&>().logprobs), std::vector<double>>;
};

/// Transformer-backed scorer with per-hypothesis key/value caches.
template <typename T>
class ModelScorer {
   public:
    struct State {
        KvPtr<T> node;
        std::vector<double> logprobs;
    };

    ModelScorer(const Transformer<T>& model, const JointActionVocab& vocab) : model_(model), vocab_(vocab) {
        if (!is_plm(model.config().variant)) throw Error(Errc::VariantMismatch, "beam scoring needs a plm variant");
        if (model.config().vocab_size != vocab.size()) throw Error(Errc::VocabMismatch, "model/vocab size mismatch");
    }

    const JointActionVocab& vocab() const { return vocab_; }
    std::size_t positions_scored() const { return scored_; }
    /// Most non-BOS actions the model's context can hold.
    std::size_t capacity() const { return model_.config().max_len - 1; }

    std::shared_ptr<const State> initial() {
        ParserState start;
        std::vector<Extension<State>> batch{{nullptr, vocab_.bos_id(), &start}};
        return run(batch).front();
    }

    std::vector<std::shared_ptr<const State>> extend(const std::vector<Extension<State>>& batch) { return run(batch); }

   private:
    std::vector<std::shared_ptr<const State>> run(const std::vector<Extension<State>>& batch) {
        const bool masked = model_.config().variant == Variant::PlmMask;
        std::vector<HeadMaskRow> rows(masked ? batch.size() : 0);
        std::vector<StepInput<T>> inputs(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            inputs[i].parent = batch[i].parent ? batch[i].parent->node : nullptr;
            inputs[i].token = batch[i].action;
            if (masked) {
                const std::size_t pos = inputs[i].parent ? inputs[i].parent->position + 1 : 0;
                rows[i] = HeadMaskRow::from_window(pos, batch[i].parser->window_start());
                inputs[i].mask = &rows[i];
            }
        }
        auto [nodes, logits] = model_.step(inputs);
        scored_ += batch.size();
        std::vector<std::shared_ptr<const State>> out;
        out.reserve(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            auto s = std::make_shared<State>();
            s->node = nodes[i];
            const auto row = logits.row_span(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (T v : row) mx = std::max(mx, static_cast<double>(v));
            double sum = 0.0;
            for (T v : row) sum += std::exp(static_cast<double>(v) - mx);
            const double lse = mx + std::log(sum);
            s->logprobs.resize(row.size());
            for (std::size_t k = 0; k < row.size(); ++k) s->logprobs[k] = static_cast<double>(row[k]) - lse;
            out.push_back(std::move(s));
        }
        return out;
    }

    const Transformer<T>& model_;
    const JointActionVocab& vocab_;
    std::size_t scored_ = 0;
};

template <typename State>
struct Hypothesis {
    std::vector<int> actions;  // joint ids, BOS first
    ParserState parser;
    double logp = 0.0;
    std::shared_ptr<const State> state;         // scorer state after `actions`, filled lazily
    std::shared_ptr<const State> parent_state;  // scorer state before the last action
};

inline double log_sum_exp(const std::vector<double>& xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs) mx = std::max(mx, x);
    if (mx == -std::numeric_limits<double>::infinity()) return mx;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// Word-synchronous beam search over a JointScorer.
template <JointScorer S>
class WordSyncBeam {
   public:
    using State = typename S::State;
    using Hyp = Hypothesis<State>;

    WordSyncBeam(S& scorer, BeamConfig config) : scorer_(scorer), config_(std::move(config)) {
        config_.validate();
        if constexpr (requires { scorer.capacity(); }) {
            auto& cap = config_.legality.max_actions;
            cap = cap == 0 ? scorer.capacity() : std::min(cap, scorer.capacity());
        }
    }

    const BeamConfig& config() const { return config_; }

    std::vector<Hyp> initial_beam() {
        Hyp h;
        h.actions = {scorer_.vocab().bos_id()};
        h.state = scorer_.initial();
        return {std::move(h)};
    }

    /// Advances a word-synchronized beam past `word_id`.
    std::vector<Hyp> step(std::vector<Hyp> beam, int word_id) {
        const JointActionVocab& vocab = scorer_.vocab();
        const std::vector<int> nts = vocab.nt_ids();
        const int reduce = vocab.reduce_id();
        std::vector<Hyp> frontier = std::move(beam);
        std::vector<Hyp> pool;
        for (std::size_t round = 0; round <= config_.max_struct_per_word && !frontier.empty(); ++round) {
            materialize(frontier);
            const bool structural = round < config_.max_struct_per_word;
            struct Cand {
                std::size_t hyp;
                int action;
                double logp;
            };
            std::vector<Cand> fringe;
            for (std::size_t i = 0; i < frontier.size(); ++i) {
                const Hyp& h = frontier[i];
                const LegalKinds legal = legal_actions(h.parser, config_.legality);
                const auto& lp = h.state->logprobs;
                auto offer = [&](int a) {
                    const double s = h.logp + lp[static_cast<std::size_t>(a)];
                    if (s > -std::numeric_limits<double>::infinity()) fringe.push_back({i, a, s});
                };
                if (legal.gen) offer(word_id);
                if (structural && legal.nt) {
                    for (int a : nts) offer(a);
                }
                if (structural && legal.reduce) offer(reduce);
            }
            auto better = [&](const Cand& a, const Cand& b) {
                if (a.logp != b.logp) return a.logp > b.logp;
                const auto& pa = frontier[a.hyp].actions;
                const auto& pb = frontier[b.hyp].actions;
                if (pa != pb) return pa < pb;
                return a.action < b.action;
            };
            std::sort(fringe.begin(), fringe.end(), better);

            std::vector<Hyp> next;
            std::size_t fast_tracked = 0;
            for (std::size_t k = 0; k < fringe.size(); ++k) {
                const Cand& c = fringe[k];
                const bool is_gen = c.action == word_id;
                if (k >= config_.action_beam) {
                    // Beyond the cut only word-generating candidates survive.
                    if (!is_gen || fast_tracked >= config_.fast_track) continue;
                    ++fast_tracked;
                }
                Hyp child = extend(frontier[c.hyp], c.action, c.logp);
                (is_gen ? pool : next).push_back(std::move(child));
            }
            frontier = std::move(next);
            if (pool.size() >= config_.action_beam) break;
        }
        if (pool.empty()) {
            throw Error(Errc::BeamExhausted, "no hypothesis can generate " + vocab.surface(word_id));
        }
        sort_hyps(pool);
        if (pool.size() > config_.word_beam) pool.resize(config_.word_beam);
        return pool;
    }

    /// Closes every open constituent with scored REDUCE actions.
    std::vector<Hyp> complete(std::vector<Hyp> beam) {
        const int reduce = scorer_.vocab().reduce_id();
        std::vector<Hyp> done;
        while (!beam.empty()) {
            materialize(beam);
            std::vector<Hyp> open;
            for (Hyp& h : beam) {
                if (h.parser.root_closed()) {
                    done.push_back(std::move(h));
                    continue;
                }
                if (!legal_actions(h.parser, config_.legality).reduce) continue;
                const double s = h.logp + h.state->logprobs[static_cast<std::size_t>(reduce)];
                if (s == -std::numeric_limits<double>::infinity()) continue;
                Hyp child = extend(h, reduce, s);
                (child.parser.root_closed() ? done : open).push_back(std::move(child));
            }
            beam = std::move(open);
        }
        sort_hyps(done);
        return done;
    }

    /// Computes scorer states for hypotheses that do not have one yet.
    void materialize(std::vector<Hyp>& hyps) {
        std::vector<Extension<State>> batch;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
            if (hyps[i].state) continue;
            batch.push_back({hyps[i].parent_state, hyps[i].actions.back(), &hyps[i].parser});
            idx.push_back(i);
        }
        if (batch.empty()) return;
        auto states = scorer_.extend(batch);
        for (std::size_t k = 0; k < idx.size(); ++k) hyps[idx[k]].state = std::move(states[k]);
    }

    static void sort_hyps(std::vector<Hyp>& hyps) {
        std::sort(hyps.begin(), hyps.end(), [](const Hyp& a, const Hyp& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            return a.actions < b.actions;
        });
    }

   private:
    Hyp extend(const Hyp& h, int action, double logp) const {
        Hyp c;
        c.actions = h.actions;
        c.actions.push_back(action);
        c.parser = apply(h.parser, scorer_.vocab().decode(action), config_.legality);
        c.logp = logp;
        c.parent_state = h.state;
        return c;
    }

    S& scorer_;
    BeamConfig config_;
};

inline std::vector<int> encode_words(const JointActionVocab& vocab, const std::vector<std::string>& words) {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
        const int id = vocab.word_id(w);
        if (id == TokenVocab::kUnk && !vocab.tokens().contains(w)) log(LogLevel::Info, "unknown word '", w, "' scored as <unk>");
        ids.push_back(id);
    }
    return ids;
}

/// log sum_beam exp(logp) after each word (natural log).
template <JointScorer S>
std::vector<double> marginal_logprob_ids(S& scorer, const std::vector<int>& word_ids, const BeamConfig& config) {
    if (word_ids.empty()) throw Error(Errc::IncompleteSequence, "marginal_logprob needs at least one word");
    WordSyncBeam<S> search(scorer, config);
    auto beam = search.initial_beam();
    std::vector<double> out;
    out.reserve(word_ids.size());
    std::vector<double> lps;
    for (int w : word_ids) {
        beam = search.step(std::move(beam), w);
        lps.clear();
        for (const auto& h : beam) lps.push_back(h.logp);
        out.push_back(log_sum_exp(lps));
    }
    return out;
}

template <JointScorer S>
std::vector<double> marginal_logprob(S& scorer, const std::vector<std::string>& words, const BeamConfig& config) {
    return marginal_logprob_ids(scorer, encode_words(scorer.vocab(), words), config);
}

/// -log2 p(continuation | prefix) from beam marginals.
template <JointScorer S>
double surprisal(S& scorer, const std::vector<std::string>& prefix, const std::vector<std::string>& continuation,
                 const BeamConfig& config) {
    if (continuation.empty()) throw Error(Errc::IncompleteSequence, "continuation must be non-empty");
    std::vector<std::string> all = prefix;
    all.insert(all.end(), continuation.begin(), continuation.end());
    const auto m = marginal_logprob(scorer, all, config);
    const double before = prefix.empty() ? 0.0 : m[prefix.size() - 1];
    return -(m.back() - before) / std::numbers::ln2;
}

struct ParseResult {
    Tree tree;
    ActionSequence actions;
    double logp = 0.0;
};

/// Best complete parse among the final beam, each hypothesis closed with
/// forced REDUCEs.
template <JointScorer S>
ParseResult parse(S& scorer, const std::vector<std::string>& words, const BeamConfig& config) {
    const auto ids = encode_words(scorer.vocab(), words);
    if (ids.empty()) throw Error(Errc::IncompleteSequence, "cannot parse an empty sentence");
    WordSyncBeam<S> search(scorer, config);
    auto beam = search.initial_beam();
    for (int w : ids) beam = search.step(std::move(beam), w);
    auto done = search.complete(std::move(beam));
    if (done.empty()) throw Error(Errc::BeamExhausted, "no hypothesis could be completed");
    ParseResult r;
    for (int a : done.front().actions) r.actions.push_back(scorer.vocab().decode(a));
    r.logp = done.front().logp;
    r.tree = reconstruct(r.actions);
    // Report the input words, not <unk>, at the leaves.
    std::size_t k = 0;
    std::function<void(Tree&)> fix = [&](Tree& t) {
        if (t.is_leaf()) {
            t.label = words[k++];
            return;
        }
        for (auto& c : t.children) fix(c);
    };
    fix(r.tree);
    k = 0;
    for (auto& a : r.actions) {
        if (a.is_word()) a.symbol = words[k++];
    }
    return r;
}

}  // namespace synlm
