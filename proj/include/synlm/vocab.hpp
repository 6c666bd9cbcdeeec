#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "synlm/error.hpp"
#include "synlm/transitions.hpp"
#include "synlm/treebank.hpp"

namespace synlm {

namespace detail {

inline std::string vocab_lines(const std::vector<std::string>& surfaces) {
    std::string out;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        out += std::to_string(i);
        out += '\t';
        out += surfaces[i];
        out += '\n';
    }
    return out;
}

inline std::vector<std::string> parse_vocab_lines(std::istream& in, const std::string& what) {
    std::vector<std::string> surfaces;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(Errc::VocabMismatch, what + ": missing tab in '" + line + "'");
        const std::string id = line.substr(0, tab);
        if (id != std::to_string(surfaces.size())) {
            throw Error(Errc::VocabMismatch, what + ": expected id " + std::to_string(surfaces.size()) + ", got " + id);
        }
        surfaces.push_back(line.substr(tab + 1));
    }
    return surfaces;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write " + path);
    out << text;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path);
    return in;
}

}  // namespace detail

/// Word vocabulary with reserved ids PAD=0, UNK=1, BOS=2; remaining ids in
/// order of decreasing frequency, ties broken lexicographically.
class TokenVocab {
   public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kReserved = 3;

    TokenVocab() : TokenVocab(std::vector<std::string>{}) {}

    explicit TokenVocab(const std::vector<std::string>& tokens) {
        surfaces_ = {"<pad>", "<unk>", "<bos>"};
        for (const auto& t : tokens) surfaces_.push_back(t);
        reindex();
    }

    static TokenVocab build(const std::vector<Tree>& corpus, std::size_t min_count = 1) {
        if (corpus.empty()) throw Error(Errc::EmptyCorpus, "cannot build a vocabulary from an empty corpus");
        std::map<std::string, std::size_t> counts;
        for (const Tree& t : corpus) {
            for (auto& w : yield(t)) ++counts[w];
        }
        std::vector<std::pair<std::string, std::size_t>> kept;
        for (auto& [w, c] : counts) {
            if (c >= min_count) kept.emplace_back(w, c);
        }
        std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        std::vector<std::string> tokens;
        tokens.reserve(kept.size());
        for (auto& [w, c] : kept) tokens.push_back(w);
        return TokenVocab(tokens);
    }

    int encode(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& decode(int id) const { return surfaces_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return surfaces_.size(); }
    const std::vector<std::string>& surfaces() const { return surfaces_; }

    std::string serialize() const { return detail::vocab_lines(surfaces_); }

    static TokenVocab deserialize(std::istream& in) {
        auto s = detail::parse_vocab_lines(in, "token vocab");
        if (s.size() < 3 || s[0] != "<pad>" || s[1] != "<unk>" || s[2] != "<bos>") {
            throw Error(Errc::VocabMismatch, "token vocab must start with <pad>, <unk>, <bos>");
        }
        return TokenVocab(std::vector<std::string>(s.begin() + 3, s.end()));
    }

    void save(const std::string& path) const { detail::write_text_file(path, serialize()); }
    static TokenVocab load(const std::string& path) {
        auto in = detail::open_input(path);
        return deserialize(in);
    }

    friend bool operator==(const TokenVocab& a, const TokenVocab& b) { return a.surfaces_ == b.surfaces_; }

   private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < surfaces_.size(); ++i) {
            if (!index_.emplace(surfaces_[i], static_cast<int>(i)).second) {
                throw Error(Errc::VocabMismatch, "duplicate token '" + surfaces_[i] + "'");
            }
        }
    }

    std::vector<std::string> surfaces_;
    std::unordered_map<std::string, int> index_;
};

/// Joint action vocabulary: token ids first (GEN), then one id per
/// nonterminal label (NT), then REDUCE.
class JointActionVocab {
   public:
    JointActionVocab() = default;

    JointActionVocab(TokenVocab tokens, std::vector<std::string> labels)
        : tokens_(std::move(tokens)), labels_(std::move(labels)) {
        std::sort(labels_.begin(), labels_.end());
        labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
        for (std::size_t i = 0; i < labels_.size(); ++i) label_index_[labels_[i]] = static_cast<int>(i);
    }

    static JointActionVocab build(TokenVocab tokens, const std::vector<Tree>& corpus) {
        std::vector<std::string> labels;
        for (const Tree& t : corpus) collect_labels(t, labels);
        return JointActionVocab(std::move(tokens), std::move(labels));
    }

    std::size_t size() const { return tokens_.size() + labels_.size() + 1; }
    const TokenVocab& tokens() const { return tokens_; }
    const std::vector<std::string>& labels() const { return labels_; }

    int bos_id() const { return TokenVocab::kBos; }
    int reduce_id() const { return static_cast<int>(size()) - 1; }
    int nt_id(const std::string& label) const {
        auto it = label_index_.find(label);
        if (it == label_index_.end()) throw Error(Errc::VocabMismatch, "unknown nonterminal label " + label);
        return static_cast<int>(tokens_.size()) + it->second;
    }
    std::vector<int> nt_ids() const {
        std::vector<int> ids;
        for (std::size_t i = 0; i < labels_.size(); ++i) ids.push_back(static_cast<int>(tokens_.size() + i));
        return ids;
    }
    int word_id(const std::string& token) const { return tokens_.encode(token); }

    bool is_word(int id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size() && id != TokenVocab::kBos; }
    bool is_nt(int id) const {
        return static_cast<std::size_t>(id) >= tokens_.size() && id < reduce_id();
    }

    ActionKind kind(int id) const {
        if (id == TokenVocab::kBos) return ActionKind::Bos;
        if (id == reduce_id()) return ActionKind::Reduce;
        if (is_nt(id)) return ActionKind::Nt;
        return ActionKind::Gen;
    }

    int encode(const Action& a) const {
        switch (a.kind) {
            case ActionKind::Bos: return bos_id();
            case ActionKind::Reduce: return reduce_id();
            case ActionKind::Nt: return nt_id(a.symbol);
            case ActionKind::Gen: return word_id(a.symbol);
        }
        return -1;
    }

    std::vector<int> encode(const ActionSequence& actions) const {
        std::vector<int> ids;
        ids.reserve(actions.size());
        for (const Action& a : actions) ids.push_back(encode(a));
        return ids;
    }

    Action decode(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= size()) {
            throw Error(Errc::VocabMismatch, "joint action id out of range: " + std::to_string(id));
        }
        switch (kind(id)) {
            case ActionKind::Bos: return Action::bos();
            case ActionKind::Reduce: return Action::reduce();
            case ActionKind::Nt: return Action::nt(labels_[static_cast<std::size_t>(id) - tokens_.size()]);
            case ActionKind::Gen: return Action::gen(tokens_.decode(id));
        }
        return Action::bos();
    }

    std::string surface(int id) const {
        if (id == TokenVocab::kPad || id == TokenVocab::kUnk || id == TokenVocab::kBos) return tokens_.decode(id);
        return decode(id).to_string();
    }

    std::string serialize() const {
        std::vector<std::string> s;
        for (std::size_t i = 0; i < size(); ++i) s.push_back(surface(static_cast<int>(i)));
        return detail::vocab_lines(s);
    }

    static JointActionVocab deserialize(std::istream& in) {
        auto s = detail::parse_vocab_lines(in, "joint vocab");
        if (s.size() < 4 || s[0] != "<pad>" || s[1] != "<unk>" || s[2] != "<bos>" || s.back() != "REDUCE") {
            throw Error(Errc::VocabMismatch, "malformed joint vocab");
        }
        std::vector<std::string> words, labels;
        for (std::size_t i = 3; i + 1 < s.size(); ++i) {
            Action a = Action::parse(s[i]);
            if (a.kind == ActionKind::Gen) {
                if (!labels.empty()) throw Error(Errc::VocabMismatch, "GEN entry after NT entries");
                words.push_back(a.symbol);
            } else if (a.kind == ActionKind::Nt) {
                labels.push_back(a.symbol);
            } else {
                throw Error(Errc::VocabMismatch, "unexpected joint vocab entry " + s[i]);
            }
        }
        if (!std::is_sorted(labels.begin(), labels.end())) throw Error(Errc::VocabMismatch, "NT labels not sorted");
        return JointActionVocab(TokenVocab(words), labels);
    }

    void save(const std::string& path) const { detail::write_text_file(path, serialize()); }
    static JointActionVocab load(const std::string& path) {
        auto in = detail::open_input(path);
        return deserialize(in);
    }

    friend bool operator==(const JointActionVocab& a, const JointActionVocab& b) {
        return a.tokens_ == b.tokens_ && a.labels_ == b.labels_;
    }

   private:
    TokenVocab tokens_;
    std::vector<std::string> labels_;
    std::unordered_map<std::string, int> label_index_;
};

inline std::string ngram_surface(const ActionSequence& ngram) {
    std::string s;
    for (const Action& a : ngram) {
        if (!s.empty()) s += ' ';
        s += a.to_string();
    }
    return s;
}

/// Atomic action n-gram types for the scaffold head; PAD=0, BLANK=1 (the
/// empty n-gram), then observed n-grams in lexicographic order.
class NGramVocab {
   public:
    static constexpr int kPad = 0;
    static constexpr int kBlank = 1;

    NGramVocab() : NGramVocab(std::vector<std::string>{}) {}

    explicit NGramVocab(std::vector<std::string> ngrams) {
        surfaces_ = {"<pad>", "<blank>"};
        std::sort(ngrams.begin(), ngrams.end());
        ngrams.erase(std::unique(ngrams.begin(), ngrams.end()), ngrams.end());
        for (auto& g : ngrams) surfaces_.push_back(std::move(g));
        for (std::size_t i = 0; i < surfaces_.size(); ++i) index_[surfaces_[i]] = static_cast<int>(i);
    }

    static NGramVocab build(const std::vector<ActionSequence>& oracles) {
        std::vector<std::string> grams;
        for (const auto& seq : oracles) {
            for (const auto& seg : sync_ngrams(seq).segments) {
                if (!seg.preceding_ngram.empty()) grams.push_back(ngram_surface(seg.preceding_ngram));
            }
        }
        return NGramVocab(std::move(grams));
    }

    bool contains(const ActionSequence& ngram) const {
        return ngram.empty() || index_.count(ngram_surface(ngram)) != 0;
    }

    /// Empty n-grams encode as BLANK; unseen ones fall back to BLANK with a
    /// warning (only reachable on data the vocabulary was not fitted on).
    int encode(const ActionSequence& ngram) const {
        if (ngram.empty()) return kBlank;
        auto it = index_.find(ngram_surface(ngram));
        if (it == index_.end()) {
            log(LogLevel::Warn, "out-of-vocabulary action n-gram '", ngram_surface(ngram), "' mapped to <blank>");
            return kBlank;
        }
        return it->second;
    }

    ActionSequence decode(int id) const {
        if (id == kPad || id == kBlank) return {};
        ActionSequence out;
        std::istringstream in(surfaces_.at(static_cast<std::size_t>(id)));
        std::string tok;
        while (in >> tok) out.push_back(Action::parse(tok));
        return out;
    }

    const std::string& surface(int id) const { return surfaces_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return surfaces_.size(); }

    std::string serialize() const { return detail::vocab_lines(surfaces_); }
    static NGramVocab deserialize(std::istream& in) {
        auto s = detail::parse_vocab_lines(in, "ngram vocab");
        if (s.size() < 2 || s[0] != "<pad>" || s[1] != "<blank>") {
            throw Error(Errc::VocabMismatch, "ngram vocab must start with <pad>, <blank>");
        }
        NGramVocab v(std::vector<std::string>(s.begin() + 2, s.end()));
        if (v.surfaces_ != s) throw Error(Errc::VocabMismatch, "ngram vocab entries not in canonical order");
        return v;
    }

    void save(const std::string& path) const { detail::write_text_file(path, serialize()); }
    static NGramVocab load(const std::string& path) {
        auto in = detail::open_input(path);
        return deserialize(in);
    }

    friend bool operator==(const NGramVocab& a, const NGramVocab& b) { return a.surfaces_ == b.surfaces_; }

   private:
    std::vector<std::string> surfaces_;
    std::unordered_map<std::string, int> index_;
};

/// The three vocabularies a model needs, fitted together.
struct Vocabulary {
    JointActionVocab joint;
    NGramVocab ngrams;

    const TokenVocab& tokens() const { return joint.tokens(); }

    static Vocabulary build(const std::vector<Tree>& corpus, std::size_t min_count = 1) {
        Vocabulary v;
        v.joint = JointActionVocab::build(TokenVocab::build(corpus, min_count), corpus);
        std::vector<ActionSequence> oracles;
        oracles.reserve(corpus.size());
        for (const Tree& t : corpus) oracles.push_back(oracle(t));
        v.ngrams = NGramVocab::build(oracles);
        return v;
    }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// 64-bit FNV-1a, used as a content digest for vocabularies in checkpoints.
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace synlm
