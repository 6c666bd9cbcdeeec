#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "synlm/checkpoint.hpp"

using namespace synlm;

namespace {
Errc error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::Io;
}
}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    auto vocab = fixtures::birds_vocab();
    for (Variant v : {Variant::Plm, Variant::ScLmNext}) {
        auto c = fixtures::tiny_config(v, vocab);
        c.tied_embeddings = v == Variant::Plm;
        Checkpoint<float> ck{Transformer<float>(c, 17), vocab, {{"note", "x"}}};
        const std::string path = ::testing::TempDir() + "/ck.bin";
        save_checkpoint(path, ck);
        auto back = load_checkpoint<float>(path);
        EXPECT_EQ(back.model.config(), c);
        EXPECT_EQ(back.vocab, vocab);
        EXPECT_EQ(back.metadata["note"], "x");
        for (std::size_t i = 0; i < ck.model.params().size(); ++i) {
            EXPECT_EQ(back.model.params()[i].value, ck.model.params()[i].value);
        }
        auto ex = make_example(c, vocab, parse_tree(fixtures::kBirds));
        EXPECT_EQ(back.model.logits(ex.inputs), ck.model.logits(ex.inputs));
        EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
    }
}

TEST(Checkpoint, PrecisionConversion) {
    auto vocab = fixtures::birds_vocab();
    Checkpoint<double> ck{Transformer<double>(fixtures::tiny_config(Variant::Plm, vocab), 2), vocab, {}};
    auto f = deserialize_checkpoint<float>(serialize_checkpoint(ck));
    EXPECT_EQ(f.model.params()[0].value[3], static_cast<float>(ck.model.params()[0].value[3]));
}

TEST(Checkpoint, Corruption) {
    auto vocab = fixtures::birds_vocab();
    Checkpoint<float> ck{Transformer<float>(fixtures::tiny_config(Variant::Plm, vocab), 2), vocab, {}};
    const std::string bytes = serialize_checkpoint(ck);
    EXPECT_EQ(error_of([&] { deserialize_checkpoint<float>("garbage"); }), Errc::BadCheckpoint);
    EXPECT_EQ(error_of([&] { deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 4)); }), Errc::BadCheckpoint);
    std::string tampered = bytes;
    const auto at = tampered.find("GEN(birds)");
    ASSERT_NE(at, std::string::npos);
    tampered[at + 4] = 'B';
    EXPECT_EQ(error_of([&] { deserialize_checkpoint<float>(tampered); }), Errc::VocabMismatch);
    EXPECT_EQ(error_of([&] { load_checkpoint<float>("/nonexistent/ck.bin"); }), Errc::Io);
}
