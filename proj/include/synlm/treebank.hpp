#pragma once

#include <cctype>
#include <fstream>
#include <functional>
#include <istream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "synlm/error.hpp"

namespace synlm {

/// An n-ary labeled constituency tree. A leaf carries a token and has no
/// children; an internal node carries a nonterminal label and at least one
/// child.
struct Tree {
    std::string label;
    std::vector<Tree> children;

    static Tree leaf(std::string token) { return Tree{std::move(token), {}}; }
    static Tree node(std::string label, std::vector<Tree> children) {
        return Tree{std::move(label), std::move(children)};
    }

    bool is_leaf() const { return children.empty(); }

    friend bool operator==(const Tree&, const Tree&) = default;
};

inline bool is_valid_symbol(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

namespace detail {

class BracketParser {
   public:
    explicit BracketParser(std::string_view text) : text_(text) {}

    Tree parse() {
        skip_space();
        if (at_end() || peek() != '(') {
            throw Error(Errc::UnbalancedBrackets, "expected '(' at offset " + std::to_string(pos_));
        }
        Tree t = parse_node();
        skip_space();
        if (!at_end()) {
            throw Error(Errc::UnbalancedBrackets,
                        "trailing input after tree at offset " + std::to_string(pos_));
        }
        return t;
    }

   private:
    Tree parse_node() {
        ++pos_;  // '('
        skip_space();
        if (at_end()) throw Error(Errc::UnbalancedBrackets, "missing ')' at end of input");
        if (peek() == '(' || peek() == ')') {
            throw Error(Errc::BadLabel, "missing constituent label at offset " + std::to_string(pos_));
        }
        Tree node{read_atom(), {}};
        for (;;) {
            skip_space();
            if (at_end()) throw Error(Errc::UnbalancedBrackets, "missing ')' for (" + node.label);
            const char c = peek();
            if (c == ')') {
                ++pos_;
                break;
            }
            if (c == '(') {
                node.children.push_back(parse_node());
            } else {
                node.children.push_back(Tree::leaf(read_atom()));
            }
        }
        if (node.children.empty()) {
            throw Error(Errc::EmptyConstituent, "constituent (" + node.label + ") has no children");
        }
        return node;
    }

    std::string read_atom() {
        const std::size_t start = pos_;
        while (!at_end()) {
            const char c = peek();
            if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) break;
            ++pos_;
        }
        return std::string(text_.substr(start, pos_ - start));
    }

    void skip_space() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
    }
    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }

    std::string_view text_;
    std::size_t pos_ = 0;
};

inline void render_into(const Tree& t, std::string& out) {
    if (t.is_leaf()) {
        out += t.label;
        return;
    }
    out += '(';
    out += t.label;
    for (const Tree& c : t.children) {
        out += ' ';
        render_into(c, out);
    }
    out += ')';
}

}  // namespace detail

/// Parses a single bracketed expression such as "(S (NP The birds) (VP sang))".
inline Tree parse_tree(std::string_view text) { return detail::BracketParser(text).parse(); }

/// Canonical single-space rendering; parse_tree(render_tree(t)) == t.
inline std::string render_tree(const Tree& tree) {
    std::string out;
    detail::render_into(tree, out);
    return out;
}

inline void collect_yield(const Tree& t, std::vector<std::string>& out) {
    if (t.is_leaf()) {
        out.push_back(t.label);
        return;
    }
    for (const Tree& c : t.children) collect_yield(c, out);
}

inline std::vector<std::string> yield(const Tree& tree) {
    std::vector<std::string> out;
    collect_yield(tree, out);
    return out;
}

inline void collect_labels(const Tree& t, std::vector<std::string>& out) {
    if (t.is_leaf()) return;
    out.push_back(t.label);
    for (const Tree& c : t.children) collect_labels(c, out);
}

/// Streams a treebank: one bracketed tree per line, blank lines skipped.
inline void for_each_tree(std::istream& in, const std::function<void(Tree)>& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            fn(parse_tree(line));
        } catch (const Error& e) {
            throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline std::vector<Tree> read_treebank(std::istream& in) {
    std::vector<Tree> trees;
    for_each_tree(in, [&](Tree t) { trees.push_back(std::move(t)); });
    return trees;
}

inline std::vector<Tree> read_treebank_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open treebank " + path);
    return read_treebank(in);
}

inline void write_treebank(std::ostream& out, const std::vector<Tree>& trees) {
    for (const Tree& t : trees) out << render_tree(t) << '\n';
}

}  // namespace synlm
