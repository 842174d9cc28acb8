#include <doctest.h>

#include <cmath>

#include "fedmmkt/client.hpp"
#include "fedmmkt/metrics.hpp"
#include "fedmmkt/world.hpp"
#include "test_support.hpp"

using namespace fedmmkt;

namespace {

bool same_weights(const ClientModel& a, const ClientModel& b) {
    return a.extractor.data == b.extractor.data && a.projector.data == b.projector.data &&
           a.classifier.data == b.classifier.data;
}

std::vector<Example> toy_batch(const FeatureWorld& w, Modality m, int per_class,
                               std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<Example> out;
    for (int c = 0; c < w.num_classes; ++c)
        for (int i = 0; i < per_class; ++i) out.push_back(sample_example(w, c, m, rng));
    return out;
}

}  // namespace

TEST_CASE("infer computes the documented quantities") {
    RngStream rng(1);
    ClientModel m = make_client_model(0, Modality::image, 4, 6, 8, 5, rng);

    SUBCASE("zero classifier gives uniform probabilities") {
        for (auto& x : m.classifier.data) x = 0.0;
        const Inference inf = infer(m, {0.3, -0.2, 0.1, 0.9});
        for (double p : inf.probabilities) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(inf.label == 0);  // uniform tie resolves to the lowest index
        CHECK(inf.entropy_weight == doctest::Approx(1.0 / (1.0 + std::log(5.0))).epsilon(1e-12));
    }

    SUBCASE("repeat inference is identical") {
        const Vec x{0.1, 0.2, 0.3, 0.4};
        const Inference a = infer(m, x);
        const Inference b = infer(m, x);
        CHECK(a.label == b.label);
        CHECK(a.representation == b.representation);
        CHECK(a.logits == b.logits);
    }

    SUBCASE("dimension mismatch throws") {
        CHECK_THROWS_AS(infer(m, {1.0, 2.0}), InvalidInputError);
    }
}

TEST_CASE("argmax tie-break picks the lowest class index") {
    // One-dimensional pipeline engineered so logits come out [1, 1, 0].
    ClientModel m;
    m.modality = Modality::image;
    m.extractor = Mat(1, 1);
    m.extractor(0, 0) = 1.0;
    m.projector = Mat(1, 1);
    const double h = std::tanh(0.5);
    m.projector(0, 0) = 1.0 / h;
    m.classifier = Mat(3, 1);
    m.classifier(0, 0) = 1.0;
    m.classifier(1, 0) = 1.0;
    m.classifier(2, 0) = 0.0;
    const Inference inf = infer(m, {0.5});
    CHECK(inf.logits[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(inf.logits[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(inf.label == 0);
}

TEST_CASE("zero epochs leave the model untouched") {
    const FeatureWorld w = build_world(4, 6, 6, 0.0, 0.5, 3);
    RngStream rng(2);
    ClientModel m = make_client_model(0, Modality::image, 6, 8, 8, 4, rng);
    const ClientModel before = m;
    const auto batch = toy_batch(w, Modality::image, 5, 4);
    TrainConfig cfg;
    cfg.epochs = 0;
    RngStream train_rng(5);
    const double loss = local_train(m, batch, cfg, train_rng);
    CHECK(same_weights(m, before));
    CHECK(loss == doctest::Approx(pretrain_loss(before, batch, nullptr)).epsilon(1e-12));
}

TEST_CASE("local training fits a separable two-class problem") {
    const FeatureWorld w = build_world(2, 6, 6, 0.0, 0.5, 7);
    RngStream rng(8);
    ClientModel m = make_client_model(0, Modality::image, 6, 8, 8, 2, rng);
    const auto train = toy_batch(w, Modality::image, 40, 9);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    RngStream train_rng(10);
    local_train(m, train, cfg, train_rng);
    int correct = 0;
    for (const auto& ex : train)
        if (infer(m, ex.feature).label == ex.label) ++correct;
    CHECK(correct >= static_cast<int>(0.95 * train.size()));
}

TEST_CASE("training rejects modality mismatch and reports divergence") {
    const FeatureWorld w = build_world(3, 6, 6, 0.0, 0.5, 11);
    RngStream rng(12);
    ClientModel m = make_client_model(0, Modality::text, 6, 8, 8, 3, rng);
    const auto wrong = toy_batch(w, Modality::image, 2, 13);
    TrainConfig cfg;
    RngStream train_rng(14);
    CHECK_THROWS_AS(local_train(m, wrong, cfg, train_rng), InvalidInputError);

    ClientModel diverger = make_client_model(0, Modality::image, 6, 8, 8, 3, rng);
    TrainConfig crazy;
    crazy.learning_rate = 1e12;
    crazy.epochs = 200;
    RngStream diverge_rng(15);
    CHECK_THROWS_AS(local_train(diverger, toy_batch(w, Modality::image, 5, 16), crazy, diverge_rng),
                    TrainingDivergedError);
}

TEST_CASE("analytic gradients match central finite differences") {
    const FeatureWorld w = build_world(5, 6, 6, 0.2, 0.5, 17);
    RngStream rng(18);
    ClientModel m = make_client_model(0, Modality::image, 6, 7, 8, 5, rng);
    const auto batch = toy_batch(w, Modality::image, 3, 19);

    SUBCASE("pretraining cross-entropy") {
        ClientGradient g = zero_gradient(m);
        pretrain_loss(m, batch, &g);
        RngStream probe_rng(20);
        const double err = test::client_grad_max_rel_err(
            m, [&](const ClientModel& mm) { return pretrain_loss(mm, batch, nullptr); }, g,
            probe_rng, 25);
        CHECK(err < 1e-4);
    }

    std::vector<RefinedRecord> refined;
    RngStream rec_rng(21);
    for (int i = 0; i < 12; ++i) {
        RefinedRecord r;
        r.feature = test::random_vec(6, rec_rng);
        r.consensus_label = static_cast<int>(rec_rng.uniform_index(5));
        r.fused_rep = test::random_vec(8, rec_rng, 2.0);
        refined.push_back(std::move(r));
    }

    SUBCASE("retraining objective (KL + lambda CE)") {
        ClientGradient g = zero_gradient(m);
        retrain_loss(m, refined, 0.7, 1.3, true, &g);
        RngStream probe_rng(22);
        const double err = test::client_grad_max_rel_err(
            m,
            [&](const ClientModel& mm) { return retrain_loss(mm, refined, 0.7, 1.3, true, nullptr); },
            g, probe_rng, 25);
        CHECK(err < 1e-4);
    }

    SUBCASE("logit-variant objective (CE only)") {
        ClientGradient g = zero_gradient(m);
        retrain_loss(m, refined, 1.0, 1.0, false, &g);
        RngStream probe_rng(23);
        const double err = test::client_grad_max_rel_err(
            m,
            [&](const ClientModel& mm) { return retrain_loss(mm, refined, 1.0, 1.0, false, nullptr); },
            g, probe_rng, 25);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("retraining on already-aligned representations is a fixed point") {
    RngStream rng(24);
    ClientModel m = make_client_model(0, Modality::image, 6, 8, 8, 5, rng);
    std::vector<RefinedRecord> refined;
    RngStream rec_rng(25);
    for (int i = 0; i < 6; ++i) {
        RefinedRecord r;
        r.feature = test::random_vec(6, rec_rng);
        r.consensus_label = 0;
        r.fused_rep = infer(m, r.feature).representation;  // MR identical to own rep
        refined.push_back(std::move(r));
    }
    TrainConfig cfg;
    cfg.lambda = 0.0;  // alignment term only
    cfg.epochs = 3;

    ClientGradient g = zero_gradient(m);
    const double loss = retrain_loss(m, refined, 0.0, 1.0, true, &g);
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
    for (double x : g.classifier.data) CHECK(x == 0.0);

    const ClientModel before = m;
    RngStream train_rng(26);
    retrain(m, refined, cfg, train_rng);
    CHECK(same_weights(m, before));
}

TEST_CASE("logit retraining equals the retrain path with a null KL term") {
    RngStream rng(27);
    ClientModel a = make_client_model(0, Modality::image, 6, 8, 8, 5, rng);
    ClientModel b = a;
    std::vector<RefinedRecord> refined;
    RngStream rec_rng(28);
    for (int i = 0; i < 10; ++i) {
        RefinedRecord r;
        r.feature = test::random_vec(6, rec_rng);
        r.consensus_label = static_cast<int>(rec_rng.uniform_index(5));
        r.fused_rep = infer(a, r.feature).representation;  // zero KL contribution
        refined.push_back(std::move(r));
    }
    TrainConfig cfg;
    cfg.lambda = 1.0;
    cfg.epochs = 1;
    cfg.batch_size = 64;  // single full batch, same order either way
    RngStream rng_a(29), rng_b(29);
    retrain(a, refined, cfg, rng_a);
    retrain_logit(b, refined, cfg, rng_b);
    for (std::size_t i = 0; i < a.extractor.data.size(); ++i)
        CHECK(a.extractor.data[i] == doctest::Approx(b.extractor.data[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < a.classifier.data.size(); ++i)
        CHECK(a.classifier.data[i] == doctest::Approx(b.classifier.data[i]).epsilon(1e-12));
}

TEST_CASE("logit retraining drives the loss down and ignores empty input") {
    const FeatureWorld w = build_world(4, 6, 6, 0.0, 0.5, 31);
    RngStream rng(32);
    ClientModel m = make_client_model(0, Modality::image, 6, 8, 8, 4, rng);
    std::vector<RefinedRecord> refined;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 5; ++i) refined.push_back({w.image_prototypes[c], c, {}});

    const double before = retrain_loss(m, refined, 1.0, 1.0, false, nullptr);
    TrainConfig cfg;
    cfg.epochs = 20;
    RngStream train_rng(33);
    const double after = retrain_logit(m, refined, cfg, train_rng);
    CHECK(after < before);

    const ClientModel frozen = m;
    RngStream again(34);
    CHECK(retrain_logit(m, {}, cfg, again) == 0.0);
    CHECK(same_weights(m, frozen));
}

TEST_CASE("retraining on corrected labels beats standalone on a non-IID split") {
    const FeatureWorld w = build_world(6, 10, 10, 0.0, 0.5, 35);
    const auto datasets = make_client_datasets(w, {2, 2, 0.3, 120}, 36);
    RngStream held_rng(37);
    std::vector<Example> heldout;
    for (int c = 0; c < 6; ++c)
        for (int i = 0; i < 30; ++i) heldout.push_back(sample_example(w, c, Modality::image, held_rng));

    TrainConfig pre;
    pre.epochs = 30;
    pre.learning_rate = 0.1;
    double standalone_sum = 0.0, retrained_sum = 0.0;
    for (int k = 0; k < 2; ++k) {
        RngStream init_rng(40 + static_cast<std::uint64_t>(k));
        ClientModel m = make_client_model(k, Modality::image, 10, 12, 12, 6, init_rng);
        RngStream pre_rng(44 + static_cast<std::uint64_t>(k));
        local_train(m, datasets[k].examples, pre, pre_rng);
        standalone_sum += client_accuracy(m, heldout);

        // Oracle-correct synthetic records covering every class.
        std::vector<RefinedRecord> refined;
        RngStream rec_rng(48 + static_cast<std::uint64_t>(k));
        for (int c = 0; c < 6; ++c)
            for (int i = 0; i < 8; ++i) {
                RefinedRecord r;
                r.feature = sample_example(w, c, Modality::image, rec_rng).feature;
                r.consensus_label = c;
                r.fused_rep = Vec(12, 0.0);
                refined.push_back(std::move(r));
            }
        TrainConfig re = pre;
        re.epochs = 10;
        re.lambda = 1.0;
        RngStream re_rng(52 + static_cast<std::uint64_t>(k));
        retrain(m, refined, re, re_rng);
        retrained_sum += client_accuracy(m, heldout);
    }
    CHECK(retrained_sum > standalone_sum);
}

TEST_CASE("retraining loss is nonnegative and zero only at the joint optimum") {
    RngStream rng(80);
    for (int iter = 0; iter < 200; ++iter) {
        ClientModel m = make_client_model(0, Modality::image, 5, 6, 8, 4, rng);
        std::vector<RefinedRecord> refined;
        for (int i = 0; i < 4; ++i) {
            RefinedRecord r;
            r.feature = test::random_vec(5, rng);
            r.consensus_label = static_cast<int>(rng.uniform_index(4));
            r.fused_rep = test::random_vec(8, rng, 2.0);
            refined.push_back(std::move(r));
        }
        const double lambda = rng.uniform(0.0, 3.0);
        CHECK(retrain_loss(m, refined, lambda, 1.0, true, nullptr) >= 0.0);
    }
}

TEST_CASE("feature augmentation") {
    RngStream rng(60);
    const Vec feature = test::random_vec(100, rng);

    SUBCASE("identity at zero strengths") {
        RngStream aug_rng(61);
        CHECK(augment_feature(feature, {0.0, 0.0}, aug_rng) == feature);
    }

    SUBCASE("masking rate is honored") {
        RngStream aug_rng(62);
        int zeros = 0, total = 0;
        for (int iter = 0; iter < 100; ++iter) {
            const Vec out = augment_feature(feature, {0.2, 0.0}, aug_rng);
            for (double x : out) {
                if (x == 0.0) ++zeros;
                ++total;
            }
        }
        const double rate = static_cast<double>(zeros) / total;
        CHECK(rate == doctest::Approx(0.2).epsilon(0.1));  // 0.2 +- 0.02
    }

    SUBCASE("augmented samples keep their oracle class") {
        const FeatureWorld w = build_world(8, 16, 16, 0.0, 0.5, 63);
        const OracleClassifier oracle(w);
        RngStream mc_rng(64);
        int correct = 0;
        const int n = 1000;
        for (int i = 0; i < n; ++i) {
            const int label = static_cast<int>(mc_rng.uniform_index(8));
            const Example ex = sample_example(w, label, Modality::image, mc_rng);
            const Vec aug = augment_feature(ex.feature, {0.2, 0.5 * w.noise_std}, mc_rng);
            if (oracle.classify(aug, Modality::image) == label) ++correct;
        }
        CHECK(correct >= static_cast<int>(0.9 * n));
    }
}

TEST_CASE("heterogeneous hidden dims produce interoperable representations") {
    RngStream rng(70);
    ClientModel small = make_client_model(0, Modality::image, 6, 4, 12, 5, rng);
    ClientModel large = make_client_model(1, Modality::text, 6, 48, 12, 5, rng);
    const Vec x = test::random_vec(6, rng);
    CHECK(infer(small, x).representation.size() == 12);
    CHECK(infer(large, x).representation.size() == 12);
    CHECK(infer(small, x).logits.size() == 5);
}

TEST_CASE("entropy weights from inference stay in range") {
    RngStream rng(71);
    for (int iter = 0; iter < 1000; ++iter) {
        ClientModel m = make_client_model(0, Modality::image, 5, 6, 7, 4, rng);
        const double e = infer(m, test::random_vec(5, rng, 2.0)).entropy_weight;
        CHECK(e > 0.0);
        CHECK(e <= 1.0);
    }
}
