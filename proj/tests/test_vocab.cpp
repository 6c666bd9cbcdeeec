#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "synlm/vocab.hpp"

using namespace synlm;

namespace {
std::vector<Tree> trees(std::initializer_list<const char*> items) {
    std::vector<Tree> out;
    for (const char* s : items) out.push_back(parse_tree(s));
    return out;
}
}  // namespace

TEST(TokenVocab, MinCount) {
    auto corpus = trees({"(X a)", "(X a)", "(X b)"});
    auto v2 = TokenVocab::build(corpus, 2);
    EXPECT_TRUE(v2.contains("a"));
    EXPECT_FALSE(v2.contains("b"));
    EXPECT_EQ(v2.encode("b"), TokenVocab::kUnk);
    auto v1 = TokenVocab::build(corpus, 1);
    EXPECT_TRUE(v1.contains("a"));
    EXPECT_TRUE(v1.contains("b"));
}

TEST(TokenVocab, OrderAndDeterminism) {
    auto corpus = trees({"(X c b)", "(X b a)", "(X d)"});
    auto v = TokenVocab::build(corpus);
    EXPECT_EQ(v.surfaces(), (std::vector<std::string>{"<pad>", "<unk>", "<bos>", "b", "a", "c", "d"}));
    EXPECT_EQ(v, TokenVocab::build(corpus));
    EXPECT_EQ(v.encode("<pad>"), TokenVocab::kPad);
    EXPECT_EQ(v.encode("<bos>"), TokenVocab::kBos);
}

TEST(TokenVocab, EmptyCorpus) {
    try {
        TokenVocab::build({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyCorpus);
    }
}

TEST(JointVocab, SizeAndLayout) {
    auto corpus = trees({fixtures::kBirds});
    auto v = Vocabulary::build(corpus);
    EXPECT_EQ(v.joint.size(), v.tokens().size() + 3 + 1);
    EXPECT_EQ(v.joint.kind(v.joint.reduce_id()), ActionKind::Reduce);
    for (int id : v.joint.nt_ids()) EXPECT_EQ(v.joint.kind(id), ActionKind::Nt);
    for (const Action& a : oracle(corpus[0])) EXPECT_EQ(v.joint.decode(v.joint.encode(a)), a);
}

TEST(JointVocab, SaveLoadIsStable) {
    auto v = fixtures::birds_vocab();
    std::istringstream in(v.joint.serialize());
    auto back = JointActionVocab::deserialize(in);
    EXPECT_EQ(back, v.joint);
    EXPECT_EQ(back.serialize(), v.joint.serialize());
    EXPECT_EQ(v.joint.serialize().substr(0, 8), "0\t<pad>\n");
}

TEST(NGramVocab, SingleOracle) {
    auto g = NGramVocab::build({oracle(parse_tree("(X a)"))});
    EXPECT_EQ(g.size(), 3u);
    EXPECT_EQ(g.encode({Action::nt("X")}), 2);
    EXPECT_EQ(g.encode({}), NGramVocab::kBlank);
}

TEST(NGramVocab, BirdsSpans) {
    auto g = NGramVocab::build({oracle(parse_tree(fixtures::kBirds))});
    EXPECT_TRUE(g.contains({Action::nt("S"), Action::nt("NP")}));
    EXPECT_TRUE(g.contains({Action::reduce(), Action::nt("VP")}));
    for (int id = 2; id < static_cast<int>(g.size()); ++id) EXPECT_EQ(g.encode(g.decode(id)), id);
}

TEST(NGramVocab, UnseenMapsToBlank) {
    auto g = NGramVocab::build({oracle(parse_tree("(X a)"))});
    auto old = log_level();
    log_level() = LogLevel::Off;
    EXPECT_EQ(g.encode({Action::nt("Y")}), NGramVocab::kBlank);
    log_level() = old;
}

TEST(NGramVocab, EverySegmentEncodesWithoutFallback) {
    auto corpus = fixtures::toy_corpus(60, 2);
    std::vector<ActionSequence> oracles;
    for (const auto& t : corpus) oracles.push_back(oracle(t));
    auto g = NGramVocab::build(oracles);
    for (const auto& o : oracles) {
        for (const auto& s : sync_ngrams(o).segments) {
            ASSERT_TRUE(g.contains(s.preceding_ngram));
            ASSERT_EQ(g.encode(s.preceding_ngram) == NGramVocab::kBlank, s.preceding_ngram.empty());
        }
    }
}

TEST(Vocabulary, FilesRoundTrip) {
    auto v = fixtures::birds_vocab();
    const std::string dir = ::testing::TempDir();
    v.joint.save(dir + "/joint.vocab");
    v.ngrams.save(dir + "/ngram.vocab");
    v.tokens().save(dir + "/tok.vocab");
    EXPECT_EQ(JointActionVocab::load(dir + "/joint.vocab"), v.joint);
    EXPECT_EQ(NGramVocab::load(dir + "/ngram.vocab"), v.ngrams);
    EXPECT_EQ(TokenVocab::load(dir + "/tok.vocab"), v.tokens());
}
