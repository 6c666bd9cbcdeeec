#pragma once

#include <string>
#include <vector>

#include "synlm/model.hpp"
#include "synlm/synthdata.hpp"
#include "synlm/testing/selftest.hpp"
#include "synlm/transitions.hpp"
#include "synlm/treebank.hpp"
#include "synlm/vocab.hpp"

namespace fixtures {

inline const char* kBirds = "(S (NP The birds) (VP sang))";

// The partial parse "The birds sang" followed by an opened ADVP.
inline synlm::ActionSequence birds_prefix_with_advp() {
    using synlm::Action;
    return {Action::bos(),          Action::nt("S"),      Action::nt("NP"),
            Action::gen("The"),     Action::gen("birds"), Action::reduce(),
            Action::nt("VP"),       Action::gen("sang"),  Action::nt("ADVP")};
}

inline synlm::Vocabulary birds_vocab() {
    return synlm::Vocabulary::build({synlm::parse_tree(kBirds)});
}

inline std::vector<synlm::Tree> toy_corpus(std::size_t n = 40, std::uint64_t seed = 3) {
    return synlm::sample_corpus(synlm::toy_grammar(), n, seed);
}

inline synlm::Vocabulary toy_vocab() { return synlm::oracles::toy_vocabulary(); }

inline synlm::ModelConfig tiny_config(synlm::Variant variant, const synlm::Vocabulary& vocab, std::size_t hidden = 16,
                                      std::size_t heads = 4, std::size_t layers = 2) {
    synlm::ModelConfig c;
    c.hidden = hidden;
    c.heads = heads;
    c.layers = layers;
    c.max_len = 32;
    c.variant = variant;
    c.dropout = 0.0;
    c.vocab_size = synlm::is_plm(variant) ? vocab.joint.size() : vocab.tokens().size();
    c.ngram_vocab_size = vocab.ngrams.size();
    return c;
}

}  // namespace fixtures
