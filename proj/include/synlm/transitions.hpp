#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "synlm/error.hpp"
#include "synlm/treebank.hpp"

namespace synlm {

enum class ActionKind : std::uint8_t { Bos, Nt, Reduce, Gen };

/// One step of the generative transition system: NT(x) opens a labeled
/// constituent, REDUCE closes the most recent open one, GEN(w) emits a word.
struct Action {
    ActionKind kind = ActionKind::Bos;
    std::string symbol;  // label for NT, token for GEN, empty otherwise

    static Action bos() { return {ActionKind::Bos, {}}; }
    static Action nt(std::string label) { return {ActionKind::Nt, std::move(label)}; }
    static Action reduce() { return {ActionKind::Reduce, {}}; }
    static Action gen(std::string token) { return {ActionKind::Gen, std::move(token)}; }

    bool is_word() const { return kind == ActionKind::Gen; }

    std::string to_string() const {
        switch (kind) {
            case ActionKind::Bos: return "<bos>";
            case ActionKind::Nt: return "NT(" + symbol + ")";
            case ActionKind::Reduce: return "REDUCE";
            case ActionKind::Gen: return "GEN(" + symbol + ")";
        }
        return {};
    }

    static Action parse(std::string_view s) {
        auto inner = [&](std::string_view prefix) -> std::optional<std::string> {
            if (s.size() > prefix.size() + 1 && s.substr(0, prefix.size()) == prefix && s.back() == ')') {
                return std::string(s.substr(prefix.size(), s.size() - prefix.size() - 1));
            }
            return std::nullopt;
        };
        if (s == "REDUCE") return reduce();
        if (s == "<bos>") return bos();
        if (auto label = inner("NT(")) {
            if (!is_valid_symbol(*label)) throw Error(Errc::BadLabel, "bad action " + std::string(s));
            return nt(std::move(*label));
        }
        if (auto tok = inner("GEN(")) {
            if (!is_valid_symbol(*tok)) throw Error(Errc::BadLabel, "bad action " + std::string(s));
            return gen(std::move(*tok));
        }
        throw Error(Errc::IllegalAction, "unrecognized action string '" + std::string(s) + "'");
    }

    friend bool operator==(const Action&, const Action&) = default;
    friend auto operator<=>(const Action&, const Action&) = default;
};

using ActionSequence = std::vector<Action>;

/// Caps applied on top of the structural legality rules.
struct LegalityConfig {
    std::size_t max_open_constituents = 32;
    std::size_t max_actions = 0;  // non-BOS actions; 0 = unbounded
};

struct LegalKinds {
    bool nt = false;
    bool reduce = false;
    bool gen = false;

    bool contains(ActionKind k) const {
        switch (k) {
            case ActionKind::Nt: return nt;
            case ActionKind::Reduce: return reduce;
            case ActionKind::Gen: return gen;
            case ActionKind::Bos: return false;
        }
        return false;
    }
    bool empty() const { return !nt && !reduce && !gen; }
    friend bool operator==(const LegalKinds&, const LegalKinds&) = default;
};

struct OpenConstituent {
    std::string label;
    std::size_t position = 0;  // index of the NT action in the sequence
    std::size_t children = 0;

    friend bool operator==(const OpenConstituent&, const OpenConstituent&) = default;
};

/// Incremental parser state after consuming a prefix (BOS included).
struct ParserState {
    std::vector<OpenConstituent> open_stack;
    int completed_roots = 0;
    std::size_t position = 1;  // index of the next action

    static ParserState initial() { return {}; }

    bool root_closed() const { return completed_roots > 0; }

    /// Position where the stack head's window starts for the query at the
    /// most recently consumed position: the deepest open NT, or that
    /// position itself when nothing is open.
    std::size_t window_start() const {
        return open_stack.empty() ? position - 1 : open_stack.back().position;
    }

    friend bool operator==(const ParserState&, const ParserState&) = default;
};

inline LegalKinds legal_actions(const ParserState& state, const LegalityConfig& config = {}) {
    LegalKinds k;
    if (state.root_closed()) return k;
    if (config.max_actions != 0 && state.position > config.max_actions) return k;
    k.nt = state.open_stack.size() < config.max_open_constituents;
    if (!state.open_stack.empty()) {
        k.gen = true;
        k.reduce = state.open_stack.back().children > 0;
    }
    return k;
}

inline ParserState apply(ParserState state, const Action& action, const LegalityConfig& config = {}) {
    if (!legal_actions(state, config).contains(action.kind)) {
        throw Error(Errc::IllegalAction,
                    action.to_string() + " is not legal at position " + std::to_string(state.position));
    }
    switch (action.kind) {
        case ActionKind::Nt:
            if (!state.open_stack.empty()) ++state.open_stack.back().children;
            state.open_stack.push_back({action.symbol, state.position, 0});
            break;
        case ActionKind::Gen:
            ++state.open_stack.back().children;
            break;
        case ActionKind::Reduce:
            state.open_stack.pop_back();
            if (state.open_stack.empty()) state.completed_roots = 1;
            break;
        case ActionKind::Bos:
            break;
    }
    ++state.position;
    return state;
}

/// Replays a BOS-initial prefix and returns the resulting state.
inline ParserState replay(const ActionSequence& actions, const LegalityConfig& config = {}) {
    if (actions.empty() || actions.front().kind != ActionKind::Bos) {
        throw Error(Errc::IllegalAction, "action sequence must start with BOS");
    }
    ParserState state;
    for (std::size_t i = 1; i < actions.size(); ++i) state = apply(std::move(state), actions[i], config);
    return state;
}

namespace detail {
inline void oracle_into(const Tree& t, ActionSequence& out) {
    if (t.is_leaf()) {
        out.push_back(Action::gen(t.label));
        return;
    }
    out.push_back(Action::nt(t.label));
    for (const Tree& c : t.children) oracle_into(c, out);
    out.push_back(Action::reduce());
}
}  // namespace detail

/// Depth-first, left-to-right generative oracle with BOS prepended.
inline ActionSequence oracle(const Tree& tree) {
    ActionSequence out{Action::bos()};
    detail::oracle_into(tree, out);
    return out;
}

/// Inverse of oracle().
inline Tree reconstruct(const ActionSequence& actions) {
    if (actions.empty() || actions.front().kind != ActionKind::Bos) {
        throw Error(Errc::IllegalAction, "action sequence must start with BOS");
    }
    std::vector<Tree> stack;
    std::optional<Tree> root;
    for (std::size_t i = 1; i < actions.size(); ++i) {
        const Action& a = actions[i];
        if (root) {
            throw Error(Errc::TrailingActions, "action " + a.to_string() + " after the root closed");
        }
        switch (a.kind) {
            case ActionKind::Nt:
                stack.push_back(Tree{a.symbol, {}});
                break;
            case ActionKind::Gen:
                if (stack.empty()) throw Error(Errc::IllegalAction, "GEN with no open constituent");
                stack.back().children.push_back(Tree::leaf(a.symbol));
                break;
            case ActionKind::Reduce: {
                if (stack.empty()) throw Error(Errc::IllegalAction, "REDUCE with nothing open");
                if (stack.back().children.empty()) {
                    throw Error(Errc::IllegalAction, "REDUCE would close empty constituent (" +
                                                         stack.back().label + ")");
                }
                Tree done = std::move(stack.back());
                stack.pop_back();
                if (stack.empty()) {
                    root = std::move(done);
                } else {
                    stack.back().children.push_back(std::move(done));
                }
                break;
            }
            case ActionKind::Bos:
                throw Error(Errc::IllegalAction, "BOS is only legal at position 0");
        }
    }
    if (!root) throw Error(Errc::IncompleteSequence, "open constituents remain");
    return std::move(*root);
}

/// A word together with the run of non-word actions immediately preceding it.
struct SyncSegment {
    std::string word;
    ActionSequence preceding_ngram;

    friend bool operator==(const SyncSegment&, const SyncSegment&) = default;
};

struct SyncSegmentation {
    std::vector<SyncSegment> segments;
    ActionSequence trailing;
};

inline SyncSegmentation sync_ngrams(const ActionSequence& actions) {
    SyncSegmentation out;
    ActionSequence run;
    for (const Action& a : actions) {
        if (a.kind == ActionKind::Bos) continue;
        if (a.is_word()) {
            out.segments.push_back({a.symbol, std::move(run)});
            run.clear();
        } else {
            run.push_back(a);
        }
    }
    out.trailing = std::move(run);
    return out;
}

/// Inverse of sync_ngrams().
inline ActionSequence concat_segments(const SyncSegmentation& seg) {
    ActionSequence out{Action::bos()};
    for (const SyncSegment& s : seg.segments) {
        out.insert(out.end(), s.preceding_ngram.begin(), s.preceding_ngram.end());
        out.push_back(Action::gen(s.word));
    }
    out.insert(out.end(), seg.trailing.begin(), seg.trailing.end());
    return out;
}

/// Visibility of past positions for the two structure-guided heads at one
/// query. Entry j refers to input position j (0..query).
struct HeadMaskRow {
    std::vector<bool> stack_visible;
    std::vector<bool> outside_visible;

    /// Row where both heads see every past position.
    static HeadMaskRow all_visible(std::size_t length) {
        return {std::vector<bool>(length, true), std::vector<bool>(length, true)};
    }

    /// Row for the query at `position` whose stack window starts at `window`.
    static HeadMaskRow from_window(std::size_t position, std::size_t window) {
        HeadMaskRow row{std::vector<bool>(position + 1, false), std::vector<bool>(position + 1, false)};
        for (std::size_t j = window; j <= position; ++j) row.stack_visible[j] = true;
        for (std::size_t j = 0; j < window; ++j) row.outside_visible[j] = true;
        if (window == 0) row.outside_visible[0] = true;  // BOS fallback
        return row;
    }

    friend bool operator==(const HeadMaskRow&, const HeadMaskRow&) = default;
};

/// One row per input position k; row k is the mask used when the hidden
/// state at position k predicts action k+1. Stack head: the deepest open
/// constituent from its NT onward (tokens of closed sub-constituents
/// included) plus position k; outside head: everything before that NT.
inline std::vector<HeadMaskRow> head_masks(const ActionSequence& prefix) {
    std::vector<HeadMaskRow> rows;
    if (prefix.empty()) return rows;
    rows.reserve(prefix.size());
    LegalityConfig unbounded{SIZE_MAX, 0};
    ParserState state;
    rows.push_back(HeadMaskRow::from_window(0, 0));
    if (prefix.front().kind != ActionKind::Bos) {
        throw Error(Errc::IllegalAction, "action sequence must start with BOS");
    }
    for (std::size_t k = 1; k < prefix.size(); ++k) {
        state = apply(std::move(state), prefix[k], unbounded);
        rows.push_back(HeadMaskRow::from_window(k, state.window_start()));
    }
    return rows;
}

// Oracle files: one sentence per line, space-separated action strings with
// the leading BOS left implicit.
inline std::string render_oracle_line(const ActionSequence& actions) {
    std::string out;
    for (const Action& a : actions) {
        if (a.kind == ActionKind::Bos) continue;
        if (!out.empty()) out += ' ';
        out += a.to_string();
    }
    return out;
}

inline ActionSequence parse_oracle_line(std::string_view line) {
    ActionSequence out{Action::bos()};
    std::istringstream in{std::string(line)};
    std::string tok;
    while (in >> tok) out.push_back(Action::parse(tok));
    return out;
}

inline std::vector<ActionSequence> read_oracle_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open oracle file " + path);
    std::vector<ActionSequence> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        out.push_back(parse_oracle_line(line));
    }
    return out;
}

}  // namespace synlm
