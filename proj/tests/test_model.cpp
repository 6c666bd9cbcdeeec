#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "synlm/model.hpp"
#include "synlm/testing/selftest.hpp"

using namespace synlm;

namespace {

template <typename T>
double row_logsumexp(const Tensor<T>& logits, std::size_t r) {
    double mx = -1e300;
    for (T v : logits.row_span(r)) mx = std::max(mx, static_cast<double>(v));
    double s = 0;
    for (T v : logits.row_span(r)) s += std::exp(static_cast<double>(v) - mx);
    return mx + std::log(s);
}

Errc error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::Io;
}

}  // namespace

TEST(ModelConfig, Validation) {
    auto vocab = fixtures::birds_vocab();
    auto c = fixtures::tiny_config(Variant::Plm, vocab);
    c.heads = 3;
    EXPECT_EQ(error_of([&] { c.validate(); }), Errc::BadConfig);
    c = fixtures::tiny_config(Variant::PlmMask, vocab, 16, 2);
    EXPECT_EQ(error_of([&] { c.validate(); }), Errc::BadConfig);
    EXPECT_EQ(error_of([] { parse_variant("rnng"); }), Errc::BadConfig);
    for (Variant v : {Variant::Lm, Variant::ScLmPast, Variant::ScLmNext, Variant::Plm, Variant::PlmMask}) {
        EXPECT_EQ(parse_variant(variant_name(v)), v);
    }
    auto j = to_json(fixtures::tiny_config(Variant::ScLmNext, vocab));
    EXPECT_EQ(model_config_from_json(j), fixtures::tiny_config(Variant::ScLmNext, vocab));
}

TEST(Model, ParameterCountFormula) {
    auto vocab = fixtures::birds_vocab();
    for (Variant v : {Variant::Lm, Variant::ScLmPast, Variant::ScLmNext, Variant::Plm, Variant::PlmMask}) {
        for (bool tied : {true, false}) {
            auto c = fixtures::tiny_config(v, vocab, 24, 4, 3);
            c.tied_embeddings = tied;
            EXPECT_EQ(Transformer<float>(c).num_parameters(), parameter_count(c)) << variant_name(v) << tied;
        }
    }
    ModelConfig gpt2;
    gpt2.hidden = 768;
    gpt2.heads = 12;
    gpt2.layers = 12;
    gpt2.max_len = 1024;
    gpt2.vocab_size = 50257;
    const double n = static_cast<double>(parameter_count(gpt2));
    EXPECT_GT(n, 100e6);
    EXPECT_LT(n, 130e6);
}

TEST(Model, SingleBosForward) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::Plm, vocab), 1);
    Tensor<double> logits = model.logits({vocab.joint.bos_id()});
    ASSERT_EQ(logits.rows(), 1u);
    ASSERT_EQ(logits.cols(), vocab.joint.size());
    double s = 0;
    const double lse = row_logsumexp(logits, 0);
    for (double v : logits.row_span(0)) s += std::exp(v - lse);
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Model, ForwardErrors) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> plm(fixtures::tiny_config(Variant::Plm, vocab), 1);
    Transformer<double> masked(fixtures::tiny_config(Variant::PlmMask, vocab), 1);
    std::vector<int> ids = vocab.joint.encode(oracle(parse_tree(fixtures::kBirds)));
    auto masks = head_masks(oracle(parse_tree(fixtures::kBirds)));
    EXPECT_EQ(error_of([&] { plm.logits(std::vector<int>(33, 2)); }), Errc::TooLong);
    EXPECT_EQ(error_of([&] { plm.logits(ids, &masks); }), Errc::VariantMismatch);
    EXPECT_EQ(error_of([&] { masked.logits(ids); }), Errc::MaskMismatch);
    auto short_masks = masks;
    short_masks.pop_back();
    EXPECT_EQ(error_of([&] { masked.logits(ids, &short_masks); }), Errc::MaskMismatch);
    EXPECT_EQ(error_of([&] {
                  Tape<double> tape;
                  plm.scaffold_logits(tape, tape.constant(Tensor<double>(1, 16)));
              }),
              Errc::VariantMismatch);
}

TEST(Model, BirdsStructuredAttention) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::PlmMask, vocab, 16, 4, 2), 3);
    ActionSequence prefix{Action::bos(), Action::nt("S"), Action::nt("NP"), Action::gen("The"), Action::gen("birds")};
    auto masks = head_masks(prefix);
    Tape<double> tape;
    ForwardOptions opts;
    opts.keep_attention = true;
    auto fw = model.forward(tape, vocab.joint.encode(prefix), &masks, opts);
    const std::size_t q = 4;
    for (std::size_t m = 0; m < 2; ++m) {
        const auto& stack = fw.attention[m * 4 + 0];
        const auto& outside = fw.attention[m * 4 + 1];
        for (std::size_t j = 0; j < 5; ++j) {
            const bool in_stack = j >= 2;
            if (in_stack) {
                EXPECT_GT(stack(j, q), 0.0);
                EXPECT_EQ(outside(j, q), 0.0);
            } else {
                EXPECT_EQ(stack(j, q), 0.0);
                EXPECT_GT(outside(j, q), 0.0);
            }
        }
        // Free heads see the whole causal history.
        for (std::size_t j = 0; j < 5; ++j) EXPECT_GT(fw.attention[m * 4 + 2](j, q), 0.0);
    }
}

TEST(Model, MaskNeutrality) {
    auto vocab = fixtures::birds_vocab();
    auto cfg = fixtures::tiny_config(Variant::PlmMask, vocab);
    Transformer<float> masked(cfg, 5);
    cfg.variant = Variant::Plm;
    Transformer<float> plain(cfg, 5);
    auto ids = vocab.joint.encode(oracle(parse_tree(fixtures::kBirds)));
    std::vector<HeadMaskRow> all;
    for (std::size_t q = 0; q < ids.size(); ++q) all.push_back(HeadMaskRow::all_visible(q + 1));
    EXPECT_EQ(masked.logits(ids, &all), plain.logits(ids));
}

TEST(Model, Causality) {
    auto vocab = fixtures::birds_vocab();
    Rng rng(12);
    for (Variant v : {Variant::Plm, Variant::Lm}) {
        Transformer<double> model(fixtures::tiny_config(v, vocab), 2);
        const int V = static_cast<int>(model.config().vocab_size);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> ids(8);
            for (auto& id : ids) id = static_cast<int>(rng.below(static_cast<std::size_t>(V)));
            auto base = model.logits(ids);
            const std::size_t p = rng.below(ids.size());
            ids[p] = (ids[p] + 1) % V;
            auto changed = model.logits(ids);
            for (std::size_t r = 0; r < p; ++r) {
                for (std::size_t c = 0; c < base.cols(); ++c) ASSERT_EQ(base(r, c), changed(r, c));
            }
        }
    }
}

TEST(Model, IncrementalStepMatchesFullForward) {
    auto vocab = fixtures::birds_vocab();
    auto o = oracle(parse_tree(fixtures::kBirds));
    auto ids = vocab.joint.encode(o);
    auto masks = head_masks(o);
    for (Variant v : {Variant::Plm, Variant::PlmMask}) {
        Transformer<double> model(fixtures::tiny_config(v, vocab), 4);
        auto full = model.logits(ids, v == Variant::PlmMask ? &masks : nullptr);
        KvPtr<double> node;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            StepInput<double> in{node, ids[p], v == Variant::PlmMask ? &masks[p] : nullptr};
            auto [nodes, logits] = model.step({in});
            node = nodes[0];
            for (std::size_t c = 0; c < logits.cols(); ++c) ASSERT_NEAR(logits(0, c), full(p, c), 1e-10);
        }
    }
}

TEST(Model, UniformModelLossIsLogJ) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::Plm, vocab), 1);
    for (auto& p : model.params()) p.value.fill(0.0);
    Tape<double> tape;
    auto o = oracle(parse_tree(fixtures::kBirds));
    double mean = tape.value(plm_loss(tape, model, vocab, o))[0];
    EXPECT_NEAR(mean, std::log(static_cast<double>(vocab.joint.size())), 1e-12);
    Tape<double> t2;
    double sum = t2.value(plm_loss(t2, model, vocab, o, LossReduction::Sum))[0];
    EXPECT_NEAR(sum, (o.size() - 1) * std::log(static_cast<double>(vocab.joint.size())), 1e-10);
}

TEST(Model, TeacherForcingIdentity) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::Plm, vocab), 7);
    auto o = oracle(parse_tree(fixtures::kBirds));
    auto ids = vocab.joint.encode(o);
    Tape<double> tape;
    const double nll = tape.value(plm_loss(tape, model, vocab, o, LossReduction::Sum))[0];
    double logprod = 0;
    KvPtr<double> node;
    for (std::size_t p = 0; p + 1 < ids.size(); ++p) {
        auto [nodes, logits] = model.step({{node, ids[p], nullptr}});
        node = nodes[0];
        logprod += logits(0, static_cast<std::size_t>(ids[p + 1])) - row_logsumexp(logits, 0);
    }
    EXPECT_NEAR(std::exp(logprod), std::exp(-nll), 1e-12);
}

TEST(Model, SingleStepDescent) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::Plm, vocab), 9);
    auto o = oracle(parse_tree(fixtures::kBirds));
    auto loss = [&] {
        Tape<double> t;
        return t.value(plm_loss(t, model, vocab, o))[0];
    };
    const double before = loss();
    model.zero_grad();
    Tape<double> tape;
    tape.backward(plm_loss(tape, model, vocab, o));
    for (auto& p : model.params()) p.value.map() -= 1e-3 * p.grad.map();
    EXPECT_LT(loss(), before);
}

TEST(Scaffold, BirdsTargets) {
    auto vocab = fixtures::birds_vocab();
    auto seg = sync_ngrams(oracle(parse_tree(fixtures::kBirds)));
    const int s_np = vocab.ngrams.encode({Action::nt("S"), Action::nt("NP")});
    const int r_vp = vocab.ngrams.encode({Action::reduce(), Action::nt("VP")});
    EXPECT_EQ(scaffold_targets(Variant::ScLmNext, vocab.ngrams, seg), (std::vector<int>{s_np, NGramVocab::kBlank, r_vp}));
    EXPECT_EQ(scaffold_targets(Variant::ScLmPast, vocab.ngrams, seg), (std::vector<int>{NGramVocab::kPad, s_np, NGramVocab::kBlank}));
    EXPECT_EQ(vocab.ngrams.decode(s_np), (ActionSequence{Action::nt("S"), Action::nt("NP")}));
    EXPECT_EQ(vocab.ngrams.decode(r_vp), (ActionSequence{Action::reduce(), Action::nt("VP")}));
    auto ex = make_example(fixtures::tiny_config(Variant::ScLmPast, vocab), vocab, parse_tree(fixtures::kBirds));
    EXPECT_EQ(ex.ngram_targets, (std::vector<int>{-1, s_np, NGramVocab::kBlank}));
}

TEST(Scaffold, OutputShapesAndNormalization) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::ScLmNext, vocab), 2);
    auto ex = make_example(model.config(), vocab, parse_tree(fixtures::kBirds));
    Tape<double> tape;
    auto fw = model.forward(tape, ex.inputs);
    auto g = tape.value(model.scaffold_logits(tape, fw.hidden));
    ASSERT_EQ(tape.value(fw.logits).rows(), 3u);
    ASSERT_EQ(tape.value(fw.logits).cols(), vocab.tokens().size());
    ASSERT_EQ(g.rows(), 3u);
    ASSERT_EQ(g.cols(), vocab.ngrams.size());
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0;
        const double lse = row_logsumexp(g, r);
        for (double v : g.row_span(r)) s += std::exp(v - lse);
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Scaffold, LambdaZeroIsLmLoss) {
    auto vocab = fixtures::birds_vocab();
    auto cfg = fixtures::tiny_config(Variant::ScLmNext, vocab);
    cfg.scaffold_weight = 0.0;
    Transformer<double> sclm(cfg, 6);
    auto lm_cfg = cfg;
    lm_cfg.variant = Variant::Lm;
    Transformer<double> lm(lm_cfg, 0);
    for (std::size_t i = 0; i < lm.params().size(); ++i) lm.params()[i].value = sclm.params()[i].value;
    auto seg = sync_ngrams(oracle(parse_tree(fixtures::kBirds)));
    Tape<double> t1, t2;
    const double a = t1.value(sclm_loss(t1, sclm, vocab, seg))[0];
    auto ex = make_example(lm_cfg, vocab, parse_tree(fixtures::kBirds));
    const double b = t2.value(example_loss(t2, lm, ex).total)[0];
    EXPECT_EQ(a, b);
    // Same trunk, so word logits agree regardless of the scaffold head.
    sclm.params().back().value.fill(0.0);
    EXPECT_EQ(sclm.logits(ex.inputs), lm.logits(ex.inputs));
}

TEST(Scaffold, PadTargetsContributeNothing) {
    auto vocab = fixtures::birds_vocab();
    Transformer<double> model(fixtures::tiny_config(Variant::ScLmPast, vocab), 6);
    auto ex = make_example(model.config(), vocab, parse_tree(fixtures::kBirds));
    Tape<double> tape;
    auto terms = example_loss(tape, model, ex);
    auto g = tape.value(model.scaffold_logits(tape, model.forward(tape, ex.inputs).hidden));
    double manual = 0;
    for (std::size_t r = 1; r < 3; ++r) manual += row_logsumexp(g, r) - g(r, static_cast<std::size_t>(ex.ngram_targets[r]));
    EXPECT_NEAR(tape.value(*terms.scaffold)[0], manual, 1e-12);
}

TEST(Model, WordExampleNeedsNonPlm) {
    auto vocab = fixtures::birds_vocab();
    EXPECT_EQ(error_of([&] { make_word_example(fixtures::tiny_config(Variant::Plm, vocab), vocab, {"The"}); }),
              Errc::MissingGoldParse);
}

TEST(Model, EndToEndGradientCheck) {
    for (Variant v : {Variant::Lm, Variant::ScLmPast, Variant::ScLmNext, Variant::Plm, Variant::PlmMask}) {
        auto r = oracles::model_gradcheck(v, 1);
        EXPECT_LE(r.max_rel_error, 1e-4) << variant_name(v) << " worst " << r.worst_param << "[" << r.worst_index
                                         << "] analytic " << r.analytic << " numeric " << r.numeric;
        EXPECT_GT(r.checked, 1000u);
    }
}

TEST(Model, DeterministicInit) {
    auto vocab = fixtures::birds_vocab();
    auto c = fixtures::tiny_config(Variant::Plm, vocab);
    Transformer<float> a(c, 3), b(c, 3), d(c, 4);
    EXPECT_EQ(a.params()[0].value, b.params()[0].value);
    EXPECT_NE(a.params()[0].value, d.params()[0].value);
}
